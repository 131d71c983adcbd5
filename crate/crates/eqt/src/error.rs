//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operands were built over different sector layouts.
    #[error("operands are defined over different sector layouts")]
    SpecMismatch,

    /// A block has the wrong shape for its sector.
    #[error("sector pair ({target},{source_sector}): block is {got_rows}x{got_cols}, expected {want_rows}x{want_cols}")]
    BlockShape {
        target: usize,
        source_sector: usize,
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },

    /// A constructor argument failed validation.
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    /// An operator that must be Hermitian is not, within tolerance.
    #[error("operator is not Hermitian (max deviation {deviation:.3e}, tolerance {tol:.1e})")]
    NotHermitian { deviation: f64, tol: f64 },

    /// An operator that must be positive has an eigenvalue below tolerance.
    #[error("negative eigenvalue {value:.3e} beyond tolerance -{tol:.1e}")]
    NotPositive { value: f64, tol: f64 },

    /// A density family whose total trace is off.
    #[error("total trace is {total} (expected 1 within {tol:.1e})")]
    TraceNotOne { total: f64, tol: f64 },

    /// The integrator produced a non-finite value.
    #[error("numerical blowup (non-finite value) at integration step {step}")]
    NumericalBlowup { step: usize },

    /// The squared norm increased during no-jump propagation.
    #[error("norm^2 increased by {increase:.3e} at no-jump step {step}")]
    NormIncrease { step: usize, increase: f64 },

    /// A jump operator annihilated the state; such a channel carries
    /// probability zero and must never be selected.
    #[error("jump operator maps the state to zero")]
    ZeroJumpImage,

    /// The state has zero jump intensity, so no channel can fire.
    #[error("no jump possible: <psi, Lambda psi> = 0")]
    NoJumpPossible,

    /// The spatial grid cannot resolve the detector width.
    #[error("grid too coarse for detector: sigma = {sigma}, need sigma >= 3*dx = {min}")]
    GridTooCoarse { sigma: f64, min: f64 },

    /// An unknown built-in detector configuration name.
    #[error("unknown detector configuration `{name}`; valid names: octahedron, square, dodecahedron")]
    UnknownConfig { name: String },

    /// Malformed input file.
    #[error("malformed {what} in {path}: {why}")]
    Parse {
        what: &'static str,
        path: String,
        why: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
