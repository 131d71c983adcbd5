//! Block-diagonal operator algebra over a finite family of finite-dimensional
//! sectors.
//!
//! A classical label `alpha` selects a sector (a finite-dimensional Hilbert
//! space); operators and states are families of per-sector blocks and the
//! direct sum is never materialized. Couplings between different sectors
//! define the events of the dynamics: `g` maps a source sector into a target
//! sector, the positive operator `Lambda_alpha = sum_beta g_{beta,alpha}^dag
//! g_{beta,alpha}` collects everything that can fire out of `alpha`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Tolerance for Hermiticity checks (`max |A - A^dag|`).
pub const HERMITICITY_TOL: f64 = 1e-12;
/// Tolerance for positivity checks (minimum eigenvalue).
pub const POSITIVITY_TOL: f64 = 1e-10;
/// Tolerance on the total trace of a density family.
pub const TRACE_TOL: f64 = 1e-10;
/// Tolerance on the norm of a stored pure state.
pub const NORM_TOL: f64 = 1e-12;

/// Sector layout: the number and dimensions of the classical sectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectorSpec {
    dims: Vec<usize>,
}

impl SectorSpec {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Invalid {
                what: "sector spec",
                why: "at least one sector is required".into(),
            });
        }
        if let Some(pos) = dims.iter().position(|&n| n == 0) {
            return Err(Error::Invalid {
                what: "sector spec",
                why: format!("sector {pos} has dimension 0"),
            });
        }
        Ok(Self { dims })
    }

    /// Layout with `m` sectors of equal dimension `n`.
    pub fn uniform(m: usize, n: usize) -> Result<Self> {
        Self::new(vec![n; m])
    }

    pub fn sector_count(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self, alpha: usize) -> usize {
        self.dims[alpha]
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }
}

fn check_square_blocks(spec: &SectorSpec, blocks: &[CMat]) -> Result<()> {
    if blocks.len() != spec.sector_count() {
        return Err(Error::SpecMismatch);
    }
    for (alpha, block) in blocks.iter().enumerate() {
        let n = spec.dim(alpha);
        if block.nrows() != n || block.ncols() != n {
            return Err(Error::BlockShape {
                target: alpha,
                source_sector: alpha,
                got_rows: block.nrows(),
                got_cols: block.ncols(),
                want_rows: n,
                want_cols: n,
            });
        }
    }
    Ok(())
}

fn hermiticity_deviation_of(block: &CMat) -> f64 {
    let n = block.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((block[(i, j)] - block[(j, i)].conj()).norm());
        }
    }
    dev
}

/// A family of square complex blocks, one per sector.
///
/// Used for Hamiltonians `H_alpha`, dissipators `Lambda_alpha`, effective
/// generators `K_alpha` and raw right-hand sides of the master equation.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperator {
    spec: SectorSpec,
    blocks: Vec<CMat>,
}

impl BlockOperator {
    pub fn new(spec: SectorSpec, blocks: Vec<CMat>) -> Result<Self> {
        check_square_blocks(&spec, &blocks)?;
        Ok(Self { spec, blocks })
    }

    pub fn zeros(spec: SectorSpec) -> Self {
        let blocks = spec
            .dims()
            .iter()
            .map(|&n| CMat::zeros(n, n))
            .collect();
        Self { spec, blocks }
    }

    /// `c * I` in every sector.
    pub fn scaled_identity(spec: SectorSpec, c: C64) -> Self {
        let blocks = spec
            .dims()
            .iter()
            .map(|&n| CMat::identity(n, n) * c)
            .collect();
        Self { spec, blocks }
    }

    pub fn spec(&self) -> &SectorSpec {
        &self.spec
    }

    pub fn block(&self, alpha: usize) -> &CMat {
        &self.blocks[alpha]
    }

    pub fn blocks(&self) -> &[CMat] {
        &self.blocks
    }

    /// Largest elementwise deviation from `A = A^dag` over all sectors.
    pub fn hermiticity_deviation(&self) -> f64 {
        self.blocks
            .iter()
            .map(hermiticity_deviation_of)
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_deviation() <= tol
    }

    /// Smallest eigenvalue across all sectors (blocks must be Hermitian).
    pub fn min_eigenvalue(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.clone().symmetric_eigenvalues().iter().copied().collect::<Vec<_>>())
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest `|eigenvalue|` across all sectors (blocks must be Hermitian).
    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.clone().symmetric_eigenvalues().iter().copied().collect::<Vec<_>>())
            .fold(0.0, |acc: f64, x| acc.max(x.abs()))
    }

    pub fn is_positive(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }
}

/// Statistical state: a positive block per sector with total trace one.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityFamily {
    spec: SectorSpec,
    blocks: Vec<CMat>,
}

impl DensityFamily {
    /// Shape-checks only; run [`DensityFamily::validate`] for the physical
    /// invariants. Validation is explicit so hot loops can skip it.
    pub fn new(spec: SectorSpec, blocks: Vec<CMat>) -> Result<Self> {
        check_square_blocks(&spec, &blocks)?;
        Ok(Self { spec, blocks })
    }

    /// The pure state `|psi><psi|` placed in sector `alpha`, zero elsewhere.
    pub fn pure(spec: SectorSpec, alpha: usize, psi: &CVec) -> Result<Self> {
        if alpha >= spec.sector_count() || psi.len() != spec.dim(alpha) {
            return Err(Error::SpecMismatch);
        }
        let mut blocks: Vec<CMat> = spec.dims().iter().map(|&n| CMat::zeros(n, n)).collect();
        blocks[alpha] = psi * psi.adjoint();
        let norm_sq = psi.norm_squared();
        if (norm_sq - 1.0).abs() > 1e-9 {
            blocks[alpha] /= C64::new(norm_sq, 0.0);
        }
        Ok(Self { spec, blocks })
    }

    pub fn spec(&self) -> &SectorSpec {
        &self.spec
    }

    pub fn block(&self, alpha: usize) -> &CMat {
        &self.blocks[alpha]
    }

    pub fn blocks(&self) -> &[CMat] {
        &self.blocks
    }

    pub fn total_trace(&self) -> f64 {
        self.blocks.iter().map(|b| b.trace().re).sum()
    }

    /// Checks Hermiticity, positivity and unit total trace at the standard
    /// tolerances (1e-12 / -1e-10 / 1e-10).
    pub fn validate(&self) -> Result<()> {
        self.validate_with(HERMITICITY_TOL, POSITIVITY_TOL, TRACE_TOL)
    }

    pub fn validate_with(&self, herm_tol: f64, pos_tol: f64, trace_tol: f64) -> Result<()> {
        let dev = self
            .blocks
            .iter()
            .map(hermiticity_deviation_of)
            .fold(0.0, f64::max);
        if dev > herm_tol {
            return Err(Error::NotHermitian {
                deviation: dev,
                tol: herm_tol,
            });
        }
        for block in &self.blocks {
            let min = block
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if min < -pos_tol {
                return Err(Error::NotPositive {
                    value: min,
                    tol: pos_tol,
                });
            }
        }
        let total = self.total_trace();
        if (total - 1.0).abs() > trace_tol {
            return Err(Error::TraceNotOne {
                total,
                tol: trace_tol,
            });
        }
        Ok(())
    }
}

/// Key of one coupling channel: the operator maps `source -> target`.
///
/// Several parallel channels between the same sector pair are allowed and
/// distinguished by `channel`; the master equation only sees their sum, the
/// jump process resolves them individually. For detector models `channel`
/// doubles as the detector index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ChannelKey {
    pub target: usize,
    pub source: usize,
    pub channel: usize,
}

/// Sparse family of inter-sector coupling operators `g`.
///
/// Entry `(target, source)` has shape `n_target x n_source`. Diagonal entries
/// (`target == source`) are rejected: the one-to-one correspondence between
/// the master equation and the jump process requires them to vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMap {
    spec: SectorSpec,
    entries: BTreeMap<ChannelKey, CMat>,
}

impl CouplingMap {
    pub fn empty(spec: SectorSpec) -> Self {
        Self {
            spec,
            entries: BTreeMap::new(),
        }
    }

    fn check_entry(&self, target: usize, source: usize, op: &CMat) -> Result<()> {
        let m = self.spec.sector_count();
        if target >= m || source >= m {
            return Err(Error::Invalid {
                what: "coupling",
                why: format!("sector pair ({target},{source}) out of range for {m} sectors"),
            });
        }
        if target == source {
            return Err(Error::Invalid {
                what: "coupling",
                why: format!("diagonal coupling ({target},{source}) must vanish"),
            });
        }
        let (want_rows, want_cols) = (self.spec.dim(target), self.spec.dim(source));
        if op.nrows() != want_rows || op.ncols() != want_cols {
            return Err(Error::BlockShape {
                target,
                source_sector: source,
                got_rows: op.nrows(),
                got_cols: op.ncols(),
                want_rows,
                want_cols,
            });
        }
        Ok(())
    }

    /// Adds a channel with the next free channel index for `(target, source)`.
    pub fn add(&mut self, target: usize, source: usize, op: CMat) -> Result<usize> {
        let channel = self
            .entries
            .range(
                ChannelKey {
                    target,
                    source,
                    channel: 0,
                }..=ChannelKey {
                    target,
                    source,
                    channel: usize::MAX,
                },
            )
            .last()
            .map_or(0, |(k, _)| k.channel + 1);
        self.add_channel(target, source, channel, op)?;
        Ok(channel)
    }

    /// Adds a channel with an explicit index (e.g. a detector id).
    pub fn add_channel(
        &mut self,
        target: usize,
        source: usize,
        channel: usize,
        op: CMat,
    ) -> Result<()> {
        self.check_entry(target, source, &op)?;
        let key = ChannelKey {
            target,
            source,
            channel,
        };
        if self.entries.contains_key(&key) {
            return Err(Error::Invalid {
                what: "coupling",
                why: format!("duplicate channel ({target},{source},{channel})"),
            });
        }
        self.entries.insert(key, op);
        Ok(())
    }

    pub fn spec(&self) -> &SectorSpec {
        &self.spec
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, key: &ChannelKey) -> Option<&CMat> {
        self.entries.get(key)
    }

    /// All channels in ascending `(target, source, channel)` order.
    pub fn iter(&self) -> impl Iterator<Item = (&ChannelKey, &CMat)> {
        self.entries.iter()
    }

    /// Channels leaving `source`, ascending in `(target, channel)`.
    pub fn outgoing(&self, source: usize) -> impl Iterator<Item = (&ChannelKey, &CMat)> {
        self.entries.iter().filter(move |(k, _)| k.source == source)
    }
}

/// Pure state of the total system: a classical label plus a normalized
/// sector vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    alpha: usize,
    psi: CVec,
}

impl PureState {
    pub fn new(spec: &SectorSpec, alpha: usize, psi: CVec) -> Result<Self> {
        if alpha >= spec.sector_count() || psi.len() != spec.dim(alpha) {
            return Err(Error::SpecMismatch);
        }
        let norm = psi.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Invalid {
                what: "pure state",
                why: format!("norm is {norm}, expected 1 within {NORM_TOL:.0e}"),
            });
        }
        Ok(Self { alpha, psi })
    }

    /// Normalizes the vector; fails on a zero vector.
    pub fn from_unnormalized(alpha: usize, psi: CVec) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(Error::ZeroJumpImage);
        }
        Ok(Self {
            alpha,
            psi: psi / C64::new(norm, 0.0),
        })
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn psi(&self) -> &CVec {
        &self.psi
    }
}

/// `Lambda_alpha = sum over channels leaving alpha of g^dag g`.
///
/// Sectors with no outgoing channel get the zero block.
pub fn build_lambda(g: &CouplingMap) -> BlockOperator {
    let spec = g.spec().clone();
    let mut blocks: Vec<CMat> = spec.dims().iter().map(|&n| CMat::zeros(n, n)).collect();
    for (key, op) in g.iter() {
        blocks[key.source] += op.adjoint() * op;
    }
    BlockOperator { spec, blocks }
}

pub(crate) fn liouville_rhs_raw(
    rho: &[CMat],
    h: &BlockOperator,
    g: &CouplingMap,
    lambda: &BlockOperator,
    out: &mut [CMat],
) {
    let minus_i = C64::new(0.0, -1.0);
    for (alpha, rho_a) in rho.iter().enumerate() {
        let h_a = h.block(alpha);
        let l_a = lambda.block(alpha);
        let comm = h_a * rho_a - rho_a * h_a;
        let anti = l_a * rho_a + rho_a * l_a;
        out[alpha] = comm * minus_i - anti * C64::new(0.5, 0.0);
    }
    for (key, op) in g.iter() {
        out[key.target] += op * &rho[key.source] * op.adjoint();
    }
}

/// Right-hand side of the master equation for statistical states:
///
/// `drho_alpha/dt = -i[H_alpha, rho_alpha] + sum_beta g_{alpha,beta} rho_beta
/// g_{alpha,beta}^dag - (1/2){Lambda_alpha, rho_alpha}`.
///
/// The total trace of the result vanishes identically.
pub fn liouville_rhs(
    rho: &DensityFamily,
    h: &BlockOperator,
    g: &CouplingMap,
    lambda: &BlockOperator,
) -> Result<BlockOperator> {
    if rho.spec() != h.spec() || rho.spec() != g.spec() || rho.spec() != lambda.spec() {
        return Err(Error::SpecMismatch);
    }
    let mut out: Vec<CMat> = rho
        .spec()
        .dims()
        .iter()
        .map(|&n| CMat::zeros(n, n))
        .collect();
    liouville_rhs_raw(rho.blocks(), h, g, lambda, &mut out);
    Ok(BlockOperator {
        spec: rho.spec().clone(),
        blocks: out,
    })
}

/// Effective non-Hermitian generator of the no-jump evolution:
/// `K_alpha = -i H_alpha - (1/2) Lambda_alpha`.
///
/// The squared norm of a state propagated by `K` is monotonically
/// non-increasing.
pub fn effective_generator(h: &BlockOperator, lambda: &BlockOperator) -> Result<BlockOperator> {
    if h.spec() != lambda.spec() {
        return Err(Error::SpecMismatch);
    }
    let dev = h.hermiticity_deviation();
    if dev > HERMITICITY_TOL {
        return Err(Error::NotHermitian {
            deviation: dev,
            tol: HERMITICITY_TOL,
        });
    }
    let blocks = h
        .blocks()
        .iter()
        .zip(lambda.blocks())
        .map(|(h_a, l_a)| h_a * C64::new(0.0, -1.0) - l_a * C64::new(0.5, 0.0))
        .collect();
    Ok(BlockOperator {
        spec: h.spec().clone(),
        blocks,
    })
}

pub(crate) struct OutChannel {
    pub target: usize,
    pub channel: usize,
    pub op: CMat,
}

/// One piecewise-constant segment of a model schedule.
pub struct Segment {
    pub t_start: f64,
    hamiltonian: BlockOperator,
    couplings: CouplingMap,
    lambda: BlockOperator,
    generator: BlockOperator,
    outgoing: Vec<Vec<OutChannel>>,
}

impl Segment {
    pub fn hamiltonian(&self) -> &BlockOperator {
        &self.hamiltonian
    }

    pub fn couplings(&self) -> &CouplingMap {
        &self.couplings
    }

    pub fn lambda(&self) -> &BlockOperator {
        &self.lambda
    }

    /// `K = -iH - Lambda/2`.
    pub fn generator(&self) -> &BlockOperator {
        &self.generator
    }

    pub(crate) fn outgoing(&self, source: usize) -> &[OutChannel] {
        &self.outgoing[source]
    }
}

/// A model: sector layout plus a piecewise-constant schedule of
/// `(t_start, H, g)` segments sorted by start time.
///
/// Segment `i` is active on `[t_start_i, t_start_{i+1})`; the last segment
/// extends indefinitely, and times before the first segment use the first
/// segment. All derived operators (`Lambda`, `K`, per-sector channel lists)
/// are precomputed here so the integrators never touch the coupling map.
pub struct Model {
    spec: SectorSpec,
    segments: Vec<Segment>,
}

impl Model {
    pub fn new(segments: Vec<(f64, BlockOperator, CouplingMap)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Invalid {
                what: "model",
                why: "at least one schedule segment is required".into(),
            });
        }
        let spec = segments[0].1.spec().clone();
        let mut built = Vec::with_capacity(segments.len());
        let mut prev_start = f64::NEG_INFINITY;
        for (t_start, h, g) in segments {
            if h.spec() != &spec || g.spec() != &spec {
                return Err(Error::SpecMismatch);
            }
            if !t_start.is_finite() || t_start <= prev_start {
                return Err(Error::Invalid {
                    what: "model",
                    why: "segment start times must be finite and strictly increasing".into(),
                });
            }
            prev_start = t_start;
            let lambda = build_lambda(&g);
            let generator = effective_generator(&h, &lambda)?;
            let outgoing = (0..spec.sector_count())
                .map(|source| {
                    g.outgoing(source)
                        .map(|(k, op)| OutChannel {
                            target: k.target,
                            channel: k.channel,
                            op: op.clone(),
                        })
                        .collect()
                })
                .collect();
            built.push(Segment {
                t_start,
                hamiltonian: h,
                couplings: g,
                lambda,
                generator,
                outgoing,
            });
        }
        Ok(Self {
            spec,
            segments: built,
        })
    }

    /// Single segment active for all times.
    pub fn time_independent(h: BlockOperator, g: CouplingMap) -> Result<Self> {
        Self::new(vec![(0.0, h, g)])
    }

    pub fn spec(&self) -> &SectorSpec {
        &self.spec
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// The segment governing time `t`.
    pub fn segment_at(&self, t: f64) -> &Segment {
        let idx = self
            .segments
            .partition_point(|s| s.t_start <= t)
            .saturating_sub(1);
        &self.segments[idx]
    }

    /// The next segment boundary strictly after `t`, if any.
    pub fn next_boundary_after(&self, t: f64) -> Option<f64> {
        let idx = self.segments.partition_point(|s| s.t_start <= t);
        self.segments.get(idx).map(|s| s.t_start)
    }

    /// Largest rate scale in the model: max over segments and sectors of the
    /// spectral radius of `H` and the top eigenvalue of `Lambda`. Used to set
    /// the default integrator step.
    pub fn max_rate(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| {
                s.hamiltonian
                    .max_abs_eigenvalue()
                    .max(s.lambda.max_abs_eigenvalue())
            })
            .fold(0.0, f64::max)
    }
}
