//! The individual description: piecewise-deterministic sample paths of the
//! jump process, and ensemble averaging back to density families.
//!
//! One pass of the event algorithm: draw a uniform `r`, propagate the sector
//! vector with the non-Hermitian generator `K = -iH - Lambda/2` until its
//! squared norm has decayed to `r` (that instant is the jump time), draw a
//! second uniform, walk the outgoing channels in ascending sector order until
//! the cumulative jump probability reaches it, and replace the state by the
//! normalized image under the selected coupling operator. Chaining passes
//! yields a trajectory; averaging projectors over many trajectories yields a
//! density family that solves the master equation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::algebra::{CMat, CVec, DensityFamily, Model, PureState, SectorSpec, Segment, C64};
use crate::error::{Error, Result};
use crate::liouville::IntegratorConfig;

/// Tolerance on the jump-time bracket: `|norm^2 - r|` at the returned time.
pub const JUMP_TIME_TOL: f64 = 1e-10;
/// Allowed per-step increase of the squared norm before the integrator is
/// considered broken.
pub const NORM_MONOTONE_TOL: f64 = 1e-12;

/// A reproducible random stream: `(seed, stream_id)` fully determines the
/// draw sequence, independent of threading or scheduling. Stream ids are
/// cheap, so each trajectory gets its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Uniform draw in the open interval (0, 1); a zero draw is redrawn, since a
/// squared norm of zero is reached only at infinite time.
pub(crate) fn draw_open_unit(rng: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// One event: at time `t` the classical label moved `from -> to` through the
/// coupling channel `channel` (for detector models, the detector index).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub t: f64,
    pub from: usize,
    pub to: usize,
    pub channel: usize,
}

/// A complete sample path over `[t0, t_fin]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t0: f64,
    pub initial: PureState,
    pub events: Vec<JumpEvent>,
    pub t_fin: f64,
    pub final_state: PureState,
}

impl Trajectory {
    /// Checks the structural invariants: strictly increasing event times and
    /// a consistent sector chain ending at the final state.
    pub fn validate(&self) -> Result<()> {
        let mut t = self.t0;
        let mut alpha = self.initial.alpha();
        for (i, ev) in self.events.iter().enumerate() {
            if (i > 0 && ev.t <= t) || ev.t < t {
                return Err(Error::Invalid {
                    what: "trajectory",
                    why: format!("event {i} at t={} does not advance time", ev.t),
                });
            }
            if ev.from != alpha || ev.to == ev.from {
                return Err(Error::Invalid {
                    what: "trajectory",
                    why: format!("event {i} breaks the sector chain"),
                });
            }
            t = ev.t;
            alpha = ev.to;
        }
        if alpha != self.final_state.alpha() {
            return Err(Error::Invalid {
                what: "trajectory",
                why: "final sector does not match the event chain".into(),
            });
        }
        Ok(())
    }
}

/// The observable output of a run: the time-ordered detector clicks, with
/// the stream that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickRecord {
    pub seed: u64,
    pub stream: u64,
    pub events: Vec<ClickEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickEvent {
    pub t: f64,
    pub detector: usize,
    pub from: u64,
    pub to: u64,
}

impl ClickRecord {
    pub fn from_trajectory(traj: &Trajectory, stream: RngStream) -> Self {
        let events = traj
            .events
            .iter()
            .map(|ev| ClickEvent {
                t: ev.t,
                detector: ev.channel,
                from: ev.from as u64,
                to: ev.to as u64,
            })
            .collect();
        Self {
            seed: stream.seed,
            stream: stream.stream_id,
            events,
        }
    }
}

struct Rk4Workspace {
    k1: CVec,
    k2: CVec,
    k3: CVec,
    k4: CVec,
    stage: CVec,
}

impl Rk4Workspace {
    fn new(dim: usize) -> Self {
        Self {
            k1: CVec::zeros(dim),
            k2: CVec::zeros(dim),
            k3: CVec::zeros(dim),
            k4: CVec::zeros(dim),
            stage: CVec::zeros(dim),
        }
    }

    fn ensure(&mut self, dim: usize) {
        if self.k1.len() != dim {
            *self = Self::new(dim);
        }
    }

    /// One RK4 step for `dpsi/dt = K psi`; `out` must not alias `psi`.
    fn step_into(&mut self, k_op: &CMat, psi: &CVec, out: &mut CVec, h: f64) {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let half = C64::new(h / 2.0, 0.0);
        let full = C64::new(h, 0.0);

        self.k1.gemv(one, k_op, psi, zero);
        self.stage.copy_from(psi);
        self.stage.axpy(half, &self.k1, one);
        self.k2.gemv(one, k_op, &self.stage, zero);
        self.stage.copy_from(psi);
        self.stage.axpy(half, &self.k2, one);
        self.k3.gemv(one, k_op, &self.stage, zero);
        self.stage.copy_from(psi);
        self.stage.axpy(full, &self.k3, one);
        self.k4.gemv(one, k_op, &self.stage, zero);

        out.copy_from(psi);
        out.axpy(C64::new(h / 6.0, 0.0), &self.k1, one);
        out.axpy(C64::new(h / 3.0, 0.0), &self.k2, one);
        out.axpy(C64::new(h / 3.0, 0.0), &self.k3, one);
        out.axpy(C64::new(h / 6.0, 0.0), &self.k4, one);
    }
}

enum SearchOutcome {
    Jump { t: f64, psi: CVec },
    Horizon { psi: CVec, norm_sq: f64 },
}

/// Bisects within one bracketing RK4 step for the time where the squared
/// norm equals `r`. Dense output is obtained by re-integrating the single
/// step at fractional sizes; monotone decay makes bisection robust.
fn bisect_step(
    k_op: &CMat,
    psi_start: &CVec,
    t_start: f64,
    h: f64,
    r: f64,
    ws: &mut Rk4Workspace,
) -> (f64, CVec) {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut out = CVec::zeros(psi_start.len());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        ws.step_into(k_op, psi_start, &mut out, mid * h);
        let norm_sq = out.norm_squared();
        if (norm_sq - r).abs() <= JUMP_TIME_TOL {
            return (t_start + mid * h, out);
        }
        if norm_sq > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    ws.step_into(k_op, psi_start, &mut out, hi * h);
    (t_start + hi * h, out)
}

/// Core no-jump propagation from `t0` toward `t_stop`.
///
/// Steps are clipped at the configured `dt`, at schedule boundaries, at
/// `t_stop`, and at pending pause times (used for ensemble sampling);
/// clipped steps land on their targets exactly. If `r` is given, propagation
/// stops as soon as the squared norm crosses it and the crossing is located
/// by bisection.
#[allow(clippy::too_many_arguments)]
fn propagate_search(
    model: &Model,
    alpha: usize,
    psi0: &CVec,
    t0: f64,
    t_stop: f64,
    r: Option<f64>,
    cfg: &IntegratorConfig,
    ws: &mut Rk4Workspace,
    pauses: &[f64],
    pause_idx: &mut usize,
    on_pause: &mut dyn FnMut(f64, &CVec),
    mut on_step: Option<&mut dyn FnMut(f64, f64)>,
) -> Result<SearchOutcome> {
    ws.ensure(psi0.len());
    let mut psi = psi0.clone();
    let mut prev = psi0.clone();
    let mut norm_prev = psi.norm_squared();

    if let Some(rv) = r {
        if rv >= norm_prev {
            return Ok(SearchOutcome::Jump { t: t0, psi });
        }
    }

    let mut t = t0;
    let mut step_idx: usize = 0;
    while pauses.get(*pause_idx).is_some_and(|&p| p <= t) {
        *pause_idx += 1;
    }
    while t < t_stop {
        let mut target = t_stop;
        if let Some(boundary) = model.next_boundary_after(t) {
            if boundary < target {
                target = boundary;
            }
        }
        if let Some(&p) = pauses.get(*pause_idx) {
            if p < target {
                target = p;
            }
        }

        let (h, t_new) = if target - t <= cfg.dt {
            (target - t, target)
        } else {
            (cfg.dt, t + cfg.dt)
        };

        let seg = model.segment_at(t);
        let k_op = seg.generator().block(alpha);
        prev.copy_from(&psi);
        ws.step_into(k_op, &prev, &mut psi, h);
        let norm_new = psi.norm_squared();
        if !norm_new.is_finite() {
            return Err(Error::NumericalBlowup { step: step_idx });
        }
        if norm_new > norm_prev + NORM_MONOTONE_TOL {
            return Err(Error::NormIncrease {
                step: step_idx,
                increase: norm_new - norm_prev,
            });
        }
        step_idx += 1;
        if let Some(f) = on_step.as_mut() {
            f(t_new, norm_new);
        }

        if let Some(rv) = r {
            if norm_new <= rv {
                let (t_jump, psi_jump) = bisect_step(k_op, &prev, t, h, rv, ws);
                return Ok(SearchOutcome::Jump {
                    t: t_jump,
                    psi: psi_jump,
                });
            }
        }

        t = t_new;
        norm_prev = norm_new;
        while pauses.get(*pause_idx).is_some_and(|&p| p <= t) {
            on_pause(t, &psi);
            *pause_idx += 1;
        }
    }
    Ok(SearchOutcome::Horizon {
        psi,
        norm_sq: norm_prev,
    })
}

/// Result of the no-jump propagation: the unnormalized final vector and the
/// per-step `(t, norm^2)` history (starting at `t0`).
#[derive(Debug, Clone)]
pub struct NoJumpPath {
    pub psi: CVec,
    pub history: Vec<(f64, f64)>,
}

/// Propagates `dpsi/dt = (-iH - Lambda/2) psi` from `t0` to `t_stop` without
/// jumping. The squared norm is non-increasing along the path.
pub fn propagate_nojump(
    init: &PureState,
    model: &Model,
    t0: f64,
    t_stop: f64,
    cfg: &IntegratorConfig,
) -> Result<NoJumpPath> {
    let mut history = vec![(t0, init.psi().norm_squared())];
    let mut ws = Rk4Workspace::new(init.psi().len());
    let mut record = |t: f64, norm_sq: f64| history.push((t, norm_sq));
    let mut pause_idx = 0;
    match propagate_search(
        model,
        init.alpha(),
        init.psi(),
        t0,
        t_stop,
        None,
        cfg,
        &mut ws,
        &[],
        &mut pause_idx,
        &mut |_, _| {},
        Some(&mut record),
    )? {
        SearchOutcome::Horizon { psi, .. } => Ok(NoJumpPath { psi, history }),
        SearchOutcome::Jump { .. } => unreachable!("no jump threshold was given"),
    }
}

/// Outcome of a jump-time search.
#[derive(Debug, Clone)]
pub enum JumpSearch {
    /// The squared norm reached `r` at time `t`; `psi` is the unnormalized
    /// state there.
    Jump { t: f64, psi: CVec },
    /// The horizon arrived first; the caller should normalize and finish.
    NoJumpBeforeHorizon { psi: CVec, norm_sq: f64 },
}

/// Finds the unique `t1` with `||psi(t1)||^2 = r` (unique by monotone
/// decay), or reports that the horizon `t_stop` arrived first.
///
/// This samples the first arrival of an inhomogeneous Poisson process with
/// intensity `<psi, Lambda psi> / ||psi||^2`: the decay of the squared norm
/// equals `exp(-integral of the intensity)`, so inverting it against a
/// uniform draw is exact.
pub fn sample_jump_time(
    init: &PureState,
    model: &Model,
    t0: f64,
    t_stop: f64,
    r: f64,
    cfg: &IntegratorConfig,
) -> Result<JumpSearch> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Invalid {
            what: "jump threshold",
            why: format!("r must lie in (0, 1], got {r}"),
        });
    }
    let mut ws = Rk4Workspace::new(init.psi().len());
    let mut pause_idx = 0;
    match propagate_search(
        model,
        init.alpha(),
        init.psi(),
        t0,
        t_stop,
        Some(r),
        cfg,
        &mut ws,
        &[],
        &mut pause_idx,
        &mut |_, _| {},
        None,
    )? {
        SearchOutcome::Jump { t, psi } => Ok(JumpSearch::Jump { t, psi }),
        SearchOutcome::Horizon { psi, norm_sq, .. } => {
            Ok(JumpSearch::NoJumpBeforeHorizon { psi, norm_sq })
        }
    }
}

fn select_channel_in_segment(
    seg: &Segment,
    source: usize,
    psi: &CVec,
    r_prime: f64,
) -> Result<usize> {
    let channels = seg.outgoing(source);
    let weights: Vec<f64> = channels
        .iter()
        .map(|ch| (&ch.op * psi).norm_squared())
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoJumpPossible);
    }
    let threshold = r_prime * total;
    let mut cumulative = 0.0;
    let mut last_positive = None;
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue; // annihilating channels carry probability exactly zero
        }
        cumulative += w;
        last_positive = Some(i);
        if cumulative >= threshold {
            return Ok(i);
        }
    }
    Ok(last_positive.expect("total weight is positive"))
}

/// Walks the outgoing channels of `source` in ascending `(target, channel)`
/// order and returns the `(target, channel)` of the first whose cumulative
/// probability reaches `r_prime`. Probabilities are `||g psi||^2 /
/// <psi, Lambda psi>`; channels annihilating the state are skipped.
pub fn select_channel(
    psi: &CVec,
    model: &Model,
    t: f64,
    source: usize,
    r_prime: f64,
) -> Result<(usize, usize)> {
    let seg = model.segment_at(t);
    let idx = select_channel_in_segment(seg, source, psi, r_prime)?;
    let ch = &seg.outgoing(source)[idx];
    Ok((ch.target, ch.channel))
}

/// Jump probabilities out of `source` for the given state, as
/// `(target, channel, probability)` in the walk order used by
/// [`select_channel`]. They sum to one whenever the total intensity is
/// positive.
pub fn channel_probabilities(
    psi: &CVec,
    model: &Model,
    t: f64,
    source: usize,
) -> Result<Vec<(usize, usize, f64)>> {
    let seg = model.segment_at(t);
    let weights: Vec<f64> = seg
        .outgoing(source)
        .iter()
        .map(|ch| (&ch.op * psi).norm_squared())
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoJumpPossible);
    }
    Ok(seg
        .outgoing(source)
        .iter()
        .zip(weights)
        .map(|(ch, w)| (ch.target, ch.channel, w / total))
        .collect())
}

/// Applies a coupling operator and renormalizes, placing the state in
/// `target`. A zero image is a contract violation: channel selection must
/// never pick such a channel.
pub fn apply_jump(target: usize, psi: &CVec, g: &CMat) -> Result<PureState> {
    PureState::from_unnormalized(target, g * psi)
}

/// Runs the event algorithm over `t_span`, chaining jumps until the horizon
/// lands mid-propagation, then normalizes the resulting state. Fully
/// determined by `(model, init, cfg, stream)`.
pub fn run_trajectory(
    init: &PureState,
    t_span: (f64, f64),
    model: &Model,
    cfg: &IntegratorConfig,
    stream: RngStream,
) -> Result<Trajectory> {
    run_trajectory_sampled(init, t_span, model, cfg, stream, &[]).map(|(traj, _)| traj)
}

/// Like [`run_trajectory`], additionally recording the normalized state at
/// each grid time (nondecreasing, within the time span). At a jump instant
/// the post-jump state is recorded. The grid influences only where
/// integration steps land, never the random draw sequence.
pub fn run_trajectory_sampled(
    init: &PureState,
    t_span: (f64, f64),
    model: &Model,
    cfg: &IntegratorConfig,
    stream: RngStream,
    grid: &[f64],
) -> Result<(Trajectory, Vec<PureState>)> {
    let (t0, t_fin) = t_span;
    if !(t_fin >= t0) {
        return Err(Error::Invalid {
            what: "time span",
            why: format!("t_fin = {t_fin} is before t0 = {t0}"),
        });
    }
    if grid.windows(2).any(|w| w[1] < w[0]) || grid.iter().any(|&g| g < t0 || g > t_fin) {
        return Err(Error::Invalid {
            what: "sample grid",
            why: "grid times must be nondecreasing and lie within the time span".into(),
        });
    }

    let mut rng = stream.rng();
    let mut ws = Rk4Workspace::new(init.psi().len());
    let mut samples_raw: Vec<(usize, CVec)> = Vec::with_capacity(grid.len());
    let mut pause_idx = 0usize;

    let mut alpha = init.alpha();
    let mut psi = init.psi().clone();
    let mut t = t0;
    let mut events: Vec<JumpEvent> = Vec::new();

    while pause_idx < grid.len() && grid[pause_idx] <= t {
        samples_raw.push((alpha, psi.clone()));
        pause_idx += 1;
    }

    let final_state = loop {
        let r = draw_open_unit(&mut rng);
        let outcome = {
            let samples = &mut samples_raw;
            let current_alpha = alpha;
            let mut on_pause = |_tp: f64, p: &CVec| samples.push((current_alpha, p.clone()));
            propagate_search(
                model,
                alpha,
                &psi,
                t,
                t_fin,
                Some(r),
                cfg,
                &mut ws,
                grid,
                &mut pause_idx,
                &mut on_pause,
                None,
            )?
        };
        match outcome {
            SearchOutcome::Jump { t: t1, psi: psi_t1 } => {
                let r_prime: f64 = rng.random();
                let seg = model.segment_at(t1);
                let idx = select_channel_in_segment(seg, alpha, &psi_t1, r_prime)?;
                let ch = &seg.outgoing(alpha)[idx];
                let next = apply_jump(ch.target, &psi_t1, &ch.op)?;
                events.push(JumpEvent {
                    t: t1,
                    from: alpha,
                    to: ch.target,
                    channel: ch.channel,
                });
                alpha = next.alpha();
                psi = next.psi().clone();
                t = t1;
                while pause_idx < grid.len() && grid[pause_idx] <= t {
                    samples_raw.push((alpha, psi.clone()));
                    pause_idx += 1;
                }
            }
            SearchOutcome::Horizon { psi: psi_h, .. } => {
                break PureState::from_unnormalized(alpha, psi_h)?;
            }
        }
    };

    let samples = samples_raw
        .into_iter()
        .map(|(a, v)| PureState::from_unnormalized(a, v))
        .collect::<Result<Vec<_>>>()?;

    Ok((
        Trajectory {
            t0,
            initial: init.clone(),
            events,
            t_fin,
            final_state,
        },
        samples,
    ))
}

/// Running sum of pure-state projectors, per sector.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleAccumulator {
    spec: SectorSpec,
    sums: Vec<CMat>,
    count: usize,
}

impl EnsembleAccumulator {
    pub fn new(spec: SectorSpec) -> Self {
        let sums = spec.dims().iter().map(|&n| CMat::zeros(n, n)).collect();
        Self {
            spec,
            sums,
            count: 0,
        }
    }

    /// Adds `|psi><psi|` into the state's sector.
    pub fn absorb(&mut self, state: &PureState) {
        let one = C64::new(1.0, 0.0);
        self.sums[state.alpha()].gerc(one, state.psi(), state.psi(), one);
        self.count += 1;
    }

    /// Associative, order-independent merge.
    pub fn merge(&mut self, other: &EnsembleAccumulator) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::SpecMismatch);
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Divides by the trajectory count and validates the result.
    pub fn finalize(&self) -> Result<DensityFamily> {
        if self.count == 0 {
            return Err(Error::Invalid {
                what: "ensemble accumulator",
                why: "no trajectories absorbed".into(),
            });
        }
        let w = C64::new(1.0 / self.count as f64, 0.0);
        let blocks = self.sums.iter().map(|s| s * w).collect();
        let rho = DensityFamily::new(self.spec.clone(), blocks)?;
        rho.validate()?;
        Ok(rho)
    }
}

// Trajectories are batched in fixed chunks; chunks run in parallel but are
// merged left-to-right, so the result is bitwise independent of the worker
// count.
const ENSEMBLE_CHUNK: usize = 256;

/// Averages `n_traj` independent sample paths at each grid time. Trajectory
/// `i` uses the stream `(master_seed, i)`, so the result is reproducible and
/// invariant under the number of worker threads.
pub fn run_ensemble(
    init: &PureState,
    t0: f64,
    t_grid: &[f64],
    model: &Model,
    cfg: &IntegratorConfig,
    n_traj: usize,
    master_seed: u64,
) -> Result<Vec<DensityFamily>> {
    if n_traj == 0 {
        return Err(Error::Invalid {
            what: "ensemble",
            why: "n_traj must be >= 1".into(),
        });
    }
    if t_grid.is_empty() {
        return Ok(Vec::new());
    }
    let t_fin = *t_grid.last().unwrap();

    let chunk_results: Result<Vec<Vec<EnsembleAccumulator>>> = (0..n_traj)
        .collect::<Vec<_>>()
        .par_chunks(ENSEMBLE_CHUNK)
        .map(|chunk| {
            let mut accs: Vec<EnsembleAccumulator> = t_grid
                .iter()
                .map(|_| EnsembleAccumulator::new(model.spec().clone()))
                .collect();
            for &traj_idx in chunk {
                let stream = RngStream::new(master_seed, traj_idx as u64);
                let (_, samples) =
                    run_trajectory_sampled(init, (t0, t_fin), model, cfg, stream, t_grid)?;
                for (acc, state) in accs.iter_mut().zip(&samples) {
                    acc.absorb(state);
                }
            }
            Ok(accs)
        })
        .collect();

    let mut chunks = chunk_results?.into_iter();
    let mut merged = chunks.next().expect("n_traj >= 1 yields a chunk");
    for chunk in chunks {
        for (acc, other) in merged.iter_mut().zip(&chunk) {
            acc.merge(other)?;
        }
    }
    merged.iter().map(|acc| acc.finalize()).collect()
}
