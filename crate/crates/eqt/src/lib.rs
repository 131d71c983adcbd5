//! Event-driven simulation of open quantum systems coupled to classical
//! degrees of freedom.
//!
//! The crate has two complementary faces of the same dynamics:
//!
//! - **Ensemble level**: the Liouville master equation on a block-diagonal
//!   operator algebra, integrated deterministically ([`liouville`]).
//! - **Individual level**: a piecewise-deterministic jump process whose
//!   sample paths average back to the master equation ([`pdp`]).
//!
//! On top of the generic engine sit the spin-1/2 fuzzy-detector models whose
//! jump dynamics paint fractal attractors on the Bloch sphere ([`bloch`]),
//! classical iterated-function-system baselines and fractal statistics
//! ([`fractal`]), and a one-dimensional Gaussian particle detector
//! ([`detector`]).
//!
//! Start with the runnable programs under `examples/`; the `eqt` binary
//! exposes the same capabilities as subcommands (see [`cli`]).

pub mod algebra;
pub mod bloch;
pub mod cli;
pub mod detector;
pub mod error;
pub mod fractal;
pub mod io;
pub mod liouville;
pub mod pdp;
pub mod stats;

pub use algebra::{
    build_lambda, effective_generator, liouville_rhs, BlockOperator, CouplingMap, DensityFamily,
    Model, PureState, SectorSpec,
};
pub use error::{Error, Result};
