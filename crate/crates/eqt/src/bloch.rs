//! Spin-1/2 specialization: fuzzy detector operators, the closed-form jump
//! map on the Bloch sphere, state-dependent click probabilities, the n-bit
//! classical detector register, and a fast chaos-game sampler that bypasses
//! the Hilbert-space engine for zero-sum configurations.
//!
//! A detector along the unit direction `n` with fuzziness `eps` responds with
//! the positive operator `P(n, eps) = (I + eps n.sigma)/2`. Acting on a pure
//! state with Bloch vector `r` it produces another pure state:
//!
//! `r' = ((1 - eps^2) r + 2 eps (1 + eps (n.r)) n) / (1 + eps^2 + 2 eps (n.r))`
//!
//! with weight `lambda = (1 + eps^2 + 2 eps (n.r))/4`, so a click sequence is
//! a nonlinear iterated function system on the sphere. When the detector
//! directions sum to zero the total intensity is state-independent
//! (`Lambda = kappa N (1 + eps^2)/4 I`), jump times become homogeneous
//! Poisson, and the whole process reduces to the chaos game implemented here.

use nalgebra::{Matrix2, Vector2, Vector3};
use num_complex::Complex64;
use rand::Rng;

use crate::algebra::{BlockOperator, CMat, CVec, CouplingMap, Model, SectorSpec, C64};
use crate::error::{Error, Result};
use crate::pdp::{draw_open_unit, ClickEvent, ClickRecord, RngStream};

pub type Spinor = Vector2<Complex64>;
pub type SpinOperator = Matrix2<Complex64>;

/// Unit-norm tolerance for Bloch vectors and detector directions.
pub const UNIT_TOL: f64 = 1e-12;
/// Tolerance on the direction sum for the zero-sum classification.
pub const ZERO_SUM_TOL: f64 = 1e-9;
/// Largest register width the dense sector engine will materialize; beyond
/// this the 2^N sectors outgrow memory and the chaos-game sampler is the
/// intended path.
pub const MAX_REGISTER_DETECTORS: usize = 12;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// The standard Pauli matrices `[sigma_1, sigma_2, sigma_3]`.
pub fn pauli() -> [SpinOperator; 3] {
    [
        SpinOperator::new(c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)),
        SpinOperator::new(c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)),
        SpinOperator::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)),
    ]
}

/// A pure spin-1/2 state as a unit vector on the sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector(Vector3<f64>);

impl BlochVector {
    pub fn new(v: Vector3<f64>) -> Result<Self> {
        let norm = v.norm();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::Invalid {
                what: "Bloch vector",
                why: format!("norm is {norm}, expected 1 within {UNIT_TOL:.0e}"),
            });
        }
        Ok(Self(v))
    }

    pub fn from_components(x: f64, y: f64, z: f64) -> Result<Self> {
        Self::new(Vector3::new(x, y, z))
    }

    /// Rescales to unit length; fails on the zero vector.
    pub fn normalized(v: Vector3<f64>) -> Result<Self> {
        let norm = v.norm();
        if norm == 0.0 {
            return Err(Error::ZeroJumpImage);
        }
        Ok(Self(v / norm))
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn dot(&self, other: &Vector3<f64>) -> f64 {
        self.0.dot(other)
    }

    /// Re-projects onto the unit sphere (used along long jump chains where
    /// roundoff would otherwise random-walk off the sphere).
    pub fn renormalized(&self) -> Self {
        Self(self.0 / self.0.norm())
    }

    /// Larmor rotation: counterclockwise about the z axis by `angle`.
    pub fn rotated_about_z(&self, angle: f64) -> Self {
        let (s, co) = angle.sin_cos();
        Self(Vector3::new(
            co * self.0.x - s * self.0.y,
            s * self.0.x + co * self.0.y,
            self.0.z,
        ))
    }

    /// Spinor with the convention `(cos(theta/2), e^{i phi} sin(theta/2))`,
    /// `theta` the polar angle from +z and `phi = atan2(y, x)`.
    pub fn to_spinor(&self) -> Spinor {
        let theta = self.0.z.clamp(-1.0, 1.0).acos();
        let phi = self.0.y.atan2(self.0.x);
        let (s, co) = (theta / 2.0).sin_cos();
        Spinor::new(c(co, 0.0), c(phi.cos() * s, phi.sin() * s))
    }

    /// Bloch vector of a (not necessarily normalized) spinor via Pauli
    /// expectation values.
    pub fn from_spinor(psi: &Spinor) -> Result<Self> {
        let norm_sq = psi[0].norm_sqr() + psi[1].norm_sqr();
        if norm_sq == 0.0 {
            return Err(Error::ZeroJumpImage);
        }
        let cross = psi[0].conj() * psi[1];
        Self::normalized(Vector3::new(
            2.0 * cross.re / norm_sq,
            2.0 * cross.im / norm_sq,
            (psi[0].norm_sqr() - psi[1].norm_sqr()) / norm_sq,
        ))
    }

    /// Bloch vector of a length-2 sector vector from the generic engine.
    pub fn from_state_vector(psi: &CVec) -> Result<Self> {
        if psi.len() != 2 {
            return Err(Error::Invalid {
                what: "state vector",
                why: format!("expected a spin-1/2 vector of length 2, got {}", psi.len()),
            });
        }
        Self::from_spinor(&Spinor::new(psi[0], psi[1]))
    }

    /// The projector `P(r) = (I + r.sigma)/2`.
    pub fn projector(&self) -> SpinOperator {
        SpinOperator::new(
            c(0.5 * (1.0 + self.0.z), 0.0),
            c(0.5 * self.0.x, -0.5 * self.0.y),
            c(0.5 * self.0.x, 0.5 * self.0.y),
            c(0.5 * (1.0 - self.0.z), 0.0),
        )
    }
}

/// The fuzzy projection `P(n, eps) = (I + eps n.sigma)/2`: positive, with
/// eigenvalues `(1 +- eps)/2`, a sharp projector at `eps = 1`. It obeys
/// `P(n, eps)^2 = ((1 + eps^2)/2) P(n, 2 eps/(1 + eps^2))`.
pub fn fuzzy_projection(n: &Vector3<f64>, eps: f64) -> Result<SpinOperator> {
    if (n.norm() - 1.0).abs() > UNIT_TOL {
        return Err(Error::Invalid {
            what: "detector direction",
            why: format!("norm is {}, expected 1 within {UNIT_TOL:.0e}", n.norm()),
        });
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Invalid {
            what: "fuzziness",
            why: format!("eps must lie in (0, 1], got {eps}"),
        });
    }
    Ok(SpinOperator::new(
        c(0.5 * (1.0 + eps * n.z), 0.0),
        c(0.5 * eps * n.x, -0.5 * eps * n.y),
        c(0.5 * eps * n.x, 0.5 * eps * n.y),
        c(0.5 * (1.0 - eps * n.z), 0.0),
    ))
}

/// Closed form of a detector click on a pure state: maps the Bloch vector
/// `r` to `r'` and returns the positive weight `lambda` with
/// `lambda P(r') = P(n, eps) P(r) P(n, eps)`.
///
/// Fails only in the annihilation case `eps = 1`, `n.r = -1`, where the
/// sharp projector maps the state to zero.
pub fn jump_map(r: &BlochVector, n: &Vector3<f64>, eps: f64) -> Result<(BlochVector, f64)> {
    let nr = r.dot(n);
    let denom = 1.0 + eps * eps + 2.0 * eps * nr;
    if denom <= 1e-12 {
        return Err(Error::ZeroJumpImage);
    }
    let lambda = denom / 4.0;
    let r_new = (r.as_vector() * (1.0 - eps * eps) + n * (2.0 * eps * (1.0 + eps * nr))) / denom;
    Ok((BlochVector::new(r_new)?, lambda))
}

/// Independent verification path for [`jump_map`]: builds the spinor of `r`
/// explicitly, applies the 2x2 operator `P(n, eps)`, renormalizes and
/// converts back.
pub fn hilbert_oracle_jump(r: &BlochVector, n: &Vector3<f64>, eps: f64) -> Result<BlochVector> {
    let p = fuzzy_projection(n, eps)?;
    let psi = r.to_spinor();
    let image = p * psi;
    let norm_sq = image[0].norm_sqr() + image[1].norm_sqr();
    if norm_sq < 1e-20 {
        return Err(Error::ZeroJumpImage);
    }
    BlochVector::from_spinor(&image)
}

fn click_probabilities_raw(r: &BlochVector, directions: &[Vector3<f64>], eps: f64) -> Vec<f64> {
    let norm = directions.len() as f64 * (1.0 + eps * eps);
    directions
        .iter()
        .map(|n| (1.0 + eps * eps + 2.0 * eps * r.dot(n)) / norm)
        .collect()
}

/// Detector register: which of the N two-state detectors are excited.
/// Exactly one bit flips per event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegisterState(pub u32);

impl RegisterState {
    pub fn flip(&self, detector: usize) -> Self {
        Self(self.0 ^ (1u32 << detector))
    }

    pub fn bit(&self, detector: usize) -> bool {
        self.0 >> detector & 1 == 1
    }

    pub fn hamming_distance(&self, other: &Self) -> u32 {
        (self.0 ^ other.0).count_ones()
    }

    /// The classical sector label used by the dense engine.
    pub fn sector(&self) -> usize {
        self.0 as usize
    }
}

/// A family of fuzzy spin detectors plus the Larmor precession `H =
/// (omega/2) sigma_3`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    directions: Vec<Vector3<f64>>,
    epsilon: f64,
    kappa: f64,
    omega: f64,
}

impl DetectorConfig {
    pub fn new(
        directions: Vec<Vector3<f64>>,
        epsilon: f64,
        kappa: f64,
        omega: f64,
    ) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::Invalid {
                what: "detector config",
                why: "at least one detector direction is required".into(),
            });
        }
        for (i, n) in directions.iter().enumerate() {
            if (n.norm() - 1.0).abs() > UNIT_TOL {
                return Err(Error::Invalid {
                    what: "detector config",
                    why: format!("direction {i} has norm {}, expected 1", n.norm()),
                });
            }
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::Invalid {
                what: "detector config",
                why: format!("epsilon must lie in (0, 1], got {epsilon}"),
            });
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Invalid {
                what: "detector config",
                why: format!("kappa must be positive, got {kappa}"),
            });
        }
        if !omega.is_finite() {
            return Err(Error::Invalid {
                what: "detector config",
                why: format!("omega must be finite, got {omega}"),
            });
        }
        Ok(Self {
            directions,
            epsilon,
            kappa,
            omega,
        })
    }

    pub fn directions(&self) -> &[Vector3<f64>] {
        &self.directions
    }

    pub fn detector_count(&self) -> usize {
        self.directions.len()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn direction_sum(&self) -> Vector3<f64> {
        self.directions.iter().sum()
    }

    /// True when the directions sum to zero, which makes `Lambda` a multiple
    /// of the identity and the jump process homogeneous Poisson.
    pub fn is_zero_sum(&self) -> bool {
        self.direction_sum().norm() <= ZERO_SUM_TOL
    }

    /// Total jump intensity `kappa N (1 + eps^2)/4` of a zero-sum
    /// configuration.
    pub fn jump_rate(&self) -> f64 {
        self.kappa * self.detector_count() as f64 * (1.0 + self.epsilon * self.epsilon) / 4.0
    }

    /// Per-sector dissipator `kappa sum_i a_i^dag a_i` of the register model
    /// (the same in every sector).
    pub fn lambda_block(&self) -> SpinOperator {
        let mut sum = SpinOperator::zeros();
        for n in &self.directions {
            let a = fuzzy_projection(n, self.epsilon).expect("directions validated");
            sum += a.adjoint() * a;
        }
        sum * c(self.kappa, 0.0)
    }
}

/// The symmetric detector arrangements used throughout: vertices of an
/// octahedron, its equatorial square, or a regular dodecahedron.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinConfig {
    Octahedron,
    Square,
    Dodecahedron,
}

impl std::str::FromStr for BuiltinConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "octahedron" => Ok(Self::Octahedron),
            "square" => Ok(Self::Square),
            "dodecahedron" => Ok(Self::Dodecahedron),
            other => Err(Error::UnknownConfig { name: other.into() }),
        }
    }
}

impl std::fmt::Display for BuiltinConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Octahedron => "octahedron",
            Self::Square => "square",
            Self::Dodecahedron => "dodecahedron",
        })
    }
}

fn octahedron_directions() -> Vec<Vector3<f64>> {
    vec![
        Vector3::new(0.0, 0.0, 1.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
        Vector3::new(-1.0, 0.0, 0.0),
        Vector3::new(0.0, -1.0, 0.0),
        Vector3::new(0.0, 0.0, -1.0),
    ]
}

fn dodecahedron_directions() -> Vec<Vector3<f64>> {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let s = 1.0 / 3.0f64.sqrt();
    let mut dirs = Vec::with_capacity(20);
    for &sx in &[1.0, -1.0] {
        for &sy in &[1.0, -1.0] {
            for &sz in &[1.0, -1.0] {
                dirs.push(Vector3::new(sx, sy, sz) * s);
            }
        }
    }
    for &s1 in &[1.0, -1.0] {
        for &s2 in &[1.0, -1.0] {
            dirs.push(Vector3::new(0.0, s1 / phi, s2 * phi) * s);
            dirs.push(Vector3::new(s1 / phi, s2 * phi, 0.0) * s);
            dirs.push(Vector3::new(s1 * phi, 0.0, s2 / phi) * s);
        }
    }
    dirs
}

/// Builds one of the built-in zero-sum arrangements.
///
/// The octahedron lists `(0,0,1), (1,0,0), (0,1,0), (-1,0,0), (0,-1,0),
/// (0,0,-1)` in that order; the square drops the two poles; the dodecahedron
/// uses the twenty normalized vertices `(±1,±1,±1)/√3` together with the
/// golden-ratio rectangles.
pub fn builtin_config(
    which: BuiltinConfig,
    eps: f64,
    kappa: f64,
    omega: f64,
) -> Result<DetectorConfig> {
    let directions = match which {
        BuiltinConfig::Octahedron => octahedron_directions(),
        BuiltinConfig::Square => octahedron_directions()
            .into_iter()
            .filter(|n| n.z == 0.0)
            .collect(),
        BuiltinConfig::Dodecahedron => dodecahedron_directions(),
    };
    DetectorConfig::new(directions, eps, kappa, omega)
}

/// Parses a configuration name (`octahedron`, `square`, `dodecahedron`).
pub fn builtin_config_by_name(
    name: &str,
    eps: f64,
    kappa: f64,
    omega: f64,
) -> Result<DetectorConfig> {
    builtin_config(name.parse()?, eps, kappa, omega)
}

/// Click probabilities `p_i = (1 + eps^2 + 2 eps (n_i . r)) / (N (1 +
/// eps^2))` for a zero-sum configuration; they sum to one because the
/// directions cancel. Non-zero-sum configurations are refused: there the
/// normalization is state-dependent and only the general engine applies.
pub fn jump_probabilities(r: &BlochVector, cfg: &DetectorConfig) -> Result<Vec<f64>> {
    if !cfg.is_zero_sum() {
        return Err(Error::Invalid {
            what: "detector config",
            why: format!(
                "directions sum to {:.3e}, not zero; use the sector engine instead",
                cfg.direction_sum().norm()
            ),
        });
    }
    Ok(click_probabilities_raw(r, &cfg.directions, cfg.epsilon))
}

/// Everything a chaos-game run produces.
#[derive(Debug, Clone)]
pub struct ChaosGameOutput {
    /// Post-jump Bloch vectors, one per jump.
    pub points: Vec<[f64; 3]>,
    /// The detector click sequence with register transitions.
    pub clicks: ClickRecord,
    pub final_direction: BlochVector,
    pub final_register: RegisterState,
    pub final_time: f64,
}

/// Runs the jump process for a zero-sum configuration without materializing
/// the 2^N sectors: waiting times are exponential with the constant rate
/// `kappa N (1 + eps^2)/4`, the state precesses about z between jumps, and
/// each jump applies the closed-form map of the selected detector.
///
/// Draw-for-draw this reproduces the sector engine on the register model:
/// the waiting-time draw equals the norm-decay target, and detectors are
/// walked in ascending order of the target register, matching the engine's
/// ascending-sector rule.
pub fn chaos_game(
    cfg: &DetectorConfig,
    r0: &BlochVector,
    n_jumps: usize,
    stream: RngStream,
) -> Result<ChaosGameOutput> {
    if !cfg.is_zero_sum() {
        return Err(Error::Invalid {
            what: "detector config",
            why: "the chaos-game sampler requires a zero-sum configuration".into(),
        });
    }
    let n_det = cfg.detector_count();
    if n_det > 32 {
        return Err(Error::Invalid {
            what: "detector config",
            why: "the register is limited to 32 detectors".into(),
        });
    }
    let rate = cfg.jump_rate();
    let omega = cfg.omega();
    let eps = cfg.epsilon();

    let mut rng = stream.rng();
    let mut r = *r0;
    let mut register = RegisterState::default();
    let mut t = 0.0;
    let mut points = Vec::with_capacity(n_jumps);
    let mut events = Vec::with_capacity(n_jumps);
    // detector walk order, sorted by target register (recomputed per jump)
    let mut order: Vec<usize> = (0..n_det).collect();

    for _ in 0..n_jumps {
        let u = draw_open_unit(&mut rng);
        t += -u.ln() / rate;
        if omega != 0.0 {
            r = r.rotated_about_z(omega * (-u.ln() / rate));
        }

        let u_select: f64 = rng.random::<f64>();
        let probs = click_probabilities_raw(&r, &cfg.directions, eps);
        order.sort_unstable_by_key(|&i| register.flip(i).0);
        let mut cumulative = 0.0;
        let mut selected = None;
        let mut last_positive = None;
        for &i in &order {
            let p = probs[i];
            if p == 0.0 {
                continue;
            }
            cumulative += p;
            last_positive = Some(i);
            if cumulative >= u_select {
                selected = Some(i);
                break;
            }
        }
        let detector = selected
            .or(last_positive)
            .ok_or(Error::NoJumpPossible)?;

        let (r_new, _lambda) = jump_map(&r, &cfg.directions[detector], eps)?;
        r = r_new.renormalized();
        let from = register;
        register = register.flip(detector);
        events.push(ClickEvent {
            t,
            detector,
            from: from.0 as u64,
            to: register.0 as u64,
        });
        points.push([r.x(), r.y(), r.z()]);
    }

    Ok(ChaosGameOutput {
        points,
        clicks: ClickRecord {
            seed: stream.seed,
            stream: stream.stream_id,
            events,
        },
        final_direction: r,
        final_register: register,
        final_time: t,
    })
}

fn spin_operator_to_cmat(m: &SpinOperator) -> CMat {
    CMat::from_fn(2, 2, |i, j| m[(i, j)])
}

fn larmor_block(omega: f64) -> CMat {
    let mut h = CMat::zeros(2, 2);
    h[(0, 0)] = c(omega / 2.0, 0.0);
    h[(1, 1)] = c(-omega / 2.0, 0.0);
    h
}

/// Materializes the full register model for the sector engine: `2^N`
/// sectors (one per register word), each a spin-1/2 space with `H = (omega/2)
/// sigma_3`, and a coupling `sqrt(kappa) a_i` from every sector to its
/// i-th bit flip. Channel ids are the detector indices.
pub fn register_model(cfg: &DetectorConfig) -> Result<Model> {
    let n_det = cfg.detector_count();
    if n_det > MAX_REGISTER_DETECTORS {
        return Err(Error::Invalid {
            what: "register model",
            why: format!(
                "{n_det} detectors need 2^{n_det} sectors; use the chaos-game sampler instead"
            ),
        });
    }
    let m = 1usize << n_det;
    let spec = SectorSpec::uniform(m, 2)?;
    let h_block = larmor_block(cfg.omega());
    let h = BlockOperator::new(spec.clone(), vec![h_block; m])?;

    let root_kappa = cfg.kappa().sqrt();
    let ops: Vec<CMat> = cfg
        .directions()
        .iter()
        .map(|n| {
            let a = fuzzy_projection(n, cfg.epsilon()).expect("directions validated");
            spin_operator_to_cmat(&a) * c(root_kappa, 0.0)
        })
        .collect();

    let mut g = CouplingMap::empty(spec);
    for alpha in 0..m {
        for (i, op) in ops.iter().enumerate() {
            let beta = alpha ^ (1usize << i);
            g.add_channel(beta, alpha, i, op.clone())?;
        }
    }
    Model::time_independent(h, g)
}

/// Benchmark model for ensemble-versus-master-equation checks: two sectors,
/// one qubit each, `H = (omega/2) sigma_3` in both, coupled both ways through
/// the same fuzzy projection `sqrt(kappa) P(axis, eps)`.
pub fn two_sector_qubit_model(
    omega: f64,
    kappa: f64,
    eps: f64,
    axis: &Vector3<f64>,
) -> Result<Model> {
    let spec = SectorSpec::uniform(2, 2)?;
    let h_block = larmor_block(omega);
    let h = BlockOperator::new(spec.clone(), vec![h_block.clone(), h_block])?;
    let op = spin_operator_to_cmat(&fuzzy_projection(axis, eps)?) * c(kappa.sqrt(), 0.0);
    let mut g = CouplingMap::empty(spec);
    g.add_channel(1, 0, 0, op.clone())?;
    g.add_channel(0, 1, 0, op)?;
    Model::time_independent(h, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{build_lambda, PureState};
    use crate::liouville::IntegratorConfig;
    use crate::pdp::{propagate_nojump, run_trajectory};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z).normalize()
    }

    fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
        let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let s = (1.0 - u * u).sqrt();
        Vector3::new(s * phi.cos(), s * phi.sin(), u)
    }

    fn max_abs_diff(a: &SpinOperator, b: &SpinOperator) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn fuzzy_projection_sharp_limit_and_eigenvalues() {
        let p = fuzzy_projection(&Vector3::new(0.0, 0.0, 1.0), 1.0).unwrap();
        assert_abs_diff_eq!(p[(0, 0)].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[(1, 1)].re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(max_abs_diff(&(p * p), &p), 0.0, epsilon = 1e-15);

        let p = fuzzy_projection(&Vector3::new(0.0, 0.0, 1.0), 0.58).unwrap();
        assert_abs_diff_eq!(p[(0, 0)].re, 0.79, epsilon = 1e-15);
        assert_abs_diff_eq!(p[(1, 1)].re, 0.21, epsilon = 1e-15);

        assert!(fuzzy_projection(&Vector3::new(0.0, 0.0, 1.0), 0.0).is_err());
        assert!(fuzzy_projection(&Vector3::new(0.0, 0.0, 1.0), 1.2).is_err());
        assert!(fuzzy_projection(&Vector3::new(0.0, 0.0, 2.0), 0.5).is_err());
    }

    #[test]
    fn fuzzy_projection_square_identity() {
        let mut rng = RngStream::new(8, 0).rng();
        for _ in 0..100 {
            let n = random_unit(&mut rng);
            let eps = rng.random::<f64>() * 0.999 + 0.001;
            let p = fuzzy_projection(&n, eps).unwrap();
            let eps2 = 2.0 * eps / (1.0 + eps * eps);
            let rhs = fuzzy_projection(&n, eps2).unwrap() * c(0.5 * (1.0 + eps * eps), 0.0);
            assert!(max_abs_diff(&(p * p), &rhs) <= 1e-14);
        }
    }

    #[test]
    fn jump_map_reference_points() {
        // fixed point: r = n
        let n = unit(0.3, -0.4, 0.85);
        let r = BlochVector::new(n).unwrap();
        let (r1, lambda) = jump_map(&r, &n, 0.6).unwrap();
        assert!((r1.as_vector() - n).norm() < 1e-14);
        assert_abs_diff_eq!(lambda, (1.0 + 0.6f64).powi(2) / 4.0, epsilon = 1e-15);

        // eps = 0 boundary (outside production validation): identity map
        let r = BlochVector::from_components(0.0, 1.0, 0.0).unwrap();
        let (r1, lambda) = jump_map(&r, &Vector3::new(0.0, 0.0, 1.0), 0.0).unwrap();
        assert!((r1.as_vector() - r.as_vector()).norm() == 0.0);
        assert_abs_diff_eq!(lambda, 0.25, epsilon = 1e-16);

        // perpendicular click at eps = 0.7: frozen components in the
        // (n, r)-plane, unit norm from 1.4^2 + 0.51^2 = 1.49^2
        let r = BlochVector::from_components(0.0, 0.0, 1.0).unwrap();
        let n = Vector3::new(1.0, 0.0, 0.0);
        let (r1, lambda) = jump_map(&r, &n, 0.7).unwrap();
        assert_abs_diff_eq!(r1.x(), 0.93960, epsilon = 1e-5);
        assert_abs_diff_eq!(r1.y(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r1.z(), 0.34228, epsilon = 1e-5);
        assert_abs_diff_eq!(r1.x(), 1.4 / 1.49, epsilon = 1e-15);
        assert_abs_diff_eq!(r1.z(), 0.51 / 1.49, epsilon = 1e-15);
        assert_abs_diff_eq!(lambda, 1.49 / 4.0, epsilon = 1e-15);

        // sharp projection forgets the past
        let r = BlochVector::from_components(0.6, 0.0, 0.8).unwrap();
        let n = Vector3::new(0.0, 1.0, 0.0);
        let (r1, _) = jump_map(&r, &n, 1.0).unwrap();
        assert!((r1.as_vector() - n).norm() < 1e-14);

        // antipodal sharp case annihilates
        let r = BlochVector::from_components(0.0, -1.0, 0.0).unwrap();
        assert!(matches!(
            jump_map(&r, &n, 1.0),
            Err(Error::ZeroJumpImage)
        ));
    }

    #[test]
    fn oracle_agrees_with_jump_map() {
        let mut rng = RngStream::new(17, 0).rng();
        for _ in 0..1000 {
            let r = BlochVector::new(random_unit(&mut rng)).unwrap();
            let n = random_unit(&mut rng);
            let eps = rng.random::<f64>() * 0.998 + 0.001;
            let (mapped, _) = jump_map(&r, &n, eps).unwrap();
            let oracle = hilbert_oracle_jump(&r, &n, eps).unwrap();
            assert!(
                (mapped.as_vector() - oracle.as_vector()).norm() <= 1e-10,
                "deviation at eps={eps}"
            );
        }
        // projection case: eps = 1, n.r = 0 lands on n
        let r = BlochVector::from_components(1.0, 0.0, 0.0).unwrap();
        let n = Vector3::new(0.0, 0.0, 1.0);
        let oracle = hilbert_oracle_jump(&r, &n, 1.0).unwrap();
        assert!((oracle.as_vector() - n).norm() < 1e-10);
    }

    proptest! {
        #[test]
        fn jump_map_stays_on_the_sphere(
            u in -1.0f64..1.0,
            phi in 0.0f64..std::f64::consts::TAU,
            un in -1.0f64..1.0,
            phin in 0.0f64..std::f64::consts::TAU,
            eps in 0.001f64..0.999,
        ) {
            let s = (1.0 - u * u).sqrt();
            let r = BlochVector::from_components(s * phi.cos(), s * phi.sin(), u).unwrap();
            let sn = (1.0 - un * un).sqrt();
            let n = Vector3::new(sn * phin.cos(), sn * phin.sin(), un);
            let (r1, lambda) = jump_map(&r, &n, eps).unwrap();
            prop_assert!((r1.as_vector().norm() - 1.0).abs() <= 1e-12);
            // lambda >= (1 - eps)^2 / 4 > 0
            prop_assert!(lambda >= (1.0 - eps) * (1.0 - eps) / 4.0 - 1e-15);
            // operator identity lambda P(r') = P(n,eps) P(r) P(n,eps)
            let p = fuzzy_projection(&n, eps).unwrap();
            let lhs = r1.projector() * c(lambda, 0.0);
            let rhs = p * r.projector() * p;
            prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-12);
        }

        #[test]
        fn spinor_roundtrip(
            u in -1.0f64..1.0,
            phi in 0.0f64..std::f64::consts::TAU,
        ) {
            let s = (1.0 - u * u).sqrt();
            let r = BlochVector::from_components(s * phi.cos(), s * phi.sin(), u).unwrap();
            let back = BlochVector::from_spinor(&r.to_spinor()).unwrap();
            prop_assert!((back.as_vector() - r.as_vector()).norm() <= 1e-12);
        }
    }

    #[test]
    fn octahedron_probabilities_match_the_frozen_values() {
        let cfg = builtin_config(BuiltinConfig::Octahedron, 0.58, 1.0, 0.0).unwrap();
        let r = BlochVector::from_components(0.0, 0.0, 1.0).unwrap(); // r = n_1
        let p = jump_probabilities(&r, &cfg).unwrap();
        assert_abs_diff_eq!(p[0], 0.31133, epsilon = 1e-5);
        for i in 1..5 {
            assert_abs_diff_eq!(p[i], 1.0 / 6.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(p[5], 0.02200, epsilon = 1e-5);

        // matrix-trace oracle: p_i proportional to Tr(P(r) P(n_i,eps)^2 P(r))
        let pr = r.projector();
        let weights: Vec<f64> = cfg
            .directions()
            .iter()
            .map(|n| {
                let a = fuzzy_projection(n, cfg.epsilon()).unwrap();
                (pr * a * a * pr).trace().re
            })
            .collect();
        let total: f64 = weights.iter().sum();
        for (pi, wi) in p.iter().zip(&weights) {
            assert_abs_diff_eq!(*pi, wi / total, epsilon = 1e-12);
        }
    }

    #[test]
    fn probabilities_are_uniform_in_the_isotropic_limit() {
        // eps = 0 is a degenerate boundary admitted only here
        let dirs = octahedron_directions();
        let mut rng = RngStream::new(2, 0).rng();
        for _ in 0..50 {
            let r = BlochVector::new(random_unit(&mut rng)).unwrap();
            for p in click_probabilities_raw(&r, &dirs, 0.0) {
                assert_abs_diff_eq!(p, 1.0 / 6.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn probabilities_sum_to_one_on_builtin_configs() {
        let mut rng = RngStream::new(5, 0).rng();
        for which in [
            BuiltinConfig::Octahedron,
            BuiltinConfig::Square,
            BuiltinConfig::Dodecahedron,
        ] {
            let cfg = builtin_config(which, 0.63, 1.0, 0.0).unwrap();
            for _ in 0..100 {
                let r = BlochVector::new(random_unit(&mut rng)).unwrap();
                let total: f64 = jump_probabilities(&r, &cfg).unwrap().iter().sum();
                assert!((total - 1.0).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn non_zero_sum_configs_are_refused() {
        let cfg = DetectorConfig::new(
            vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 0.0)],
            0.5,
            1.0,
            0.0,
        )
        .unwrap();
        assert!(!cfg.is_zero_sum());
        let r = BlochVector::from_components(0.0, 0.0, 1.0).unwrap();
        assert!(jump_probabilities(&r, &cfg).is_err());
        assert!(chaos_game(&cfg, &r, 10, RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn builtin_configs_have_the_advertised_geometry() {
        let oct = builtin_config(BuiltinConfig::Octahedron, 0.5, 1.0, 0.0).unwrap();
        assert_eq!(oct.detector_count(), 6);
        assert_eq!(oct.directions()[0], Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(oct.direction_sum().norm(), 0.0);

        let square = builtin_config(BuiltinConfig::Square, 0.5, 1.0, 0.0).unwrap();
        assert_eq!(square.detector_count(), 4);
        assert!(square.directions().iter().all(|n| n.z == 0.0));
        assert_eq!(square.direction_sum().norm(), 0.0);

        let dode = builtin_config(BuiltinConfig::Dodecahedron, 0.5, 1.0, 0.0).unwrap();
        assert_eq!(dode.detector_count(), 20);
        for n in dode.directions() {
            assert!((n.norm() - 1.0).abs() <= 1e-12);
        }
        assert!(dode.direction_sum().norm() <= 1e-12);

        assert!(matches!(
            builtin_config_by_name("icosahedron", 0.5, 1.0, 0.0),
            Err(Error::UnknownConfig { .. })
        ));
    }

    #[test]
    fn register_lambda_is_an_identity_multiple() {
        for which in [
            BuiltinConfig::Octahedron,
            BuiltinConfig::Square,
            BuiltinConfig::Dodecahedron,
        ] {
            let cfg = builtin_config(which, 0.58, 1.3, 0.0).unwrap();
            let lambda = cfg.lambda_block();
            let expected = cfg.jump_rate();
            assert!(max_abs_diff(&lambda, &(SpinOperator::identity() * c(expected, 0.0))) <= 1e-12);
        }

        // cross-check against the generic dissipator on the materialized
        // register model (octahedron: 64 sectors)
        let cfg = builtin_config(BuiltinConfig::Octahedron, 0.58, 1.0, 0.3).unwrap();
        let model = register_model(&cfg).unwrap();
        let lambda = build_lambda(model.segments()[0].couplings());
        let expected = cfg.jump_rate();
        for alpha in 0..64 {
            let block = lambda.block(alpha);
            for i in 0..2 {
                for j in 0..2 {
                    let want = if i == j { expected } else { 0.0 };
                    assert!((block[(i, j)] - c(want, 0.0)).norm() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn register_model_refuses_oversized_registers() {
        let cfg = builtin_config(BuiltinConfig::Dodecahedron, 0.65, 1.0, 0.0).unwrap();
        assert!(register_model(&cfg).is_err());
    }

    #[test]
    fn register_events_flip_exactly_one_bit() {
        let cfg = builtin_config(BuiltinConfig::Octahedron, 0.58, 1.0, 0.0).unwrap();
        let model = register_model(&cfg).unwrap();
        let spec = model.spec().clone();
        let init = PureState::new(
            &spec,
            0,
            CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]),
        )
        .unwrap();
        let cfg_int = IntegratorConfig::new(5e-3, 100).unwrap();
        let traj = run_trajectory(&init, (0.0, 20.0), &model, &cfg_int, RngStream::new(3, 1))
            .unwrap();
        traj.validate().unwrap();
        assert!(traj.events.len() > 10);
        for ev in &traj.events {
            let from = RegisterState(ev.from as u32);
            let to = RegisterState(ev.to as u32);
            assert_eq!(from.hamming_distance(&to), 1);
            assert_eq!(from.flip(ev.channel), to);
        }
    }

    #[test]
    fn nojump_decay_and_precession_decouple_for_zero_sum() {
        let omega = 0.9;
        let cfg = builtin_config(BuiltinConfig::Octahedron, 0.58, 1.0, omega).unwrap();
        let model = register_model(&cfg).unwrap();
        let spec = model.spec().clone();
        let psi0 = BlochVector::from_components(1.0, 0.0, 0.0)
            .unwrap()
            .to_spinor();
        let init = PureState::new(&spec, 0, CVec::from_vec(vec![psi0[0], psi0[1]])).unwrap();
        let cfg_int = IntegratorConfig::new(1e-3, 100).unwrap();
        let t_stop = 1.5;
        let path = propagate_nojump(&init, &model, 0.0, t_stop, &cfg_int).unwrap();
        let rate = cfg.jump_rate();
        for &(t, norm_sq) in path.history.iter().step_by(100) {
            assert_abs_diff_eq!(norm_sq, (-rate * t).exp(), epsilon = 1e-9);
        }
        // direction rotated by omega * t while the norm decayed
        let r = BlochVector::from_state_vector(&path.psi).unwrap();
        assert_abs_diff_eq!(r.x(), (omega * t_stop).cos(), epsilon = 1e-8);
        assert_abs_diff_eq!(r.y(), (omega * t_stop).sin(), epsilon = 1e-8);
        assert_abs_diff_eq!(r.z(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn chaos_game_is_deterministic_per_stream() {
        let cfg = builtin_config(BuiltinConfig::Octahedron, 0.58, 1.0, 0.0).unwrap();
        let r0 = BlochVector::from_components(0.0, 0.0, 1.0).unwrap();
        let a = chaos_game(&cfg, &r0, 500, RngStream::new(42, 0)).unwrap();
        let b = chaos_game(&cfg, &r0, 500, RngStream::new(42, 0)).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.clicks, b.clicks);
        assert_eq!(a.points.len(), 500);
        let other = chaos_game(&cfg, &r0, 500, RngStream::new(42, 1)).unwrap();
        assert_ne!(a.points, other.points);
        // empty run is valid
        let empty = chaos_game(&cfg, &r0, 0, RngStream::new(42, 0)).unwrap();
        assert!(empty.points.is_empty());
    }

    #[test]
    fn sharp_antipodal_pair_has_a_two_point_attractor() {
        let n = Vector3::new(0.0, 0.0, 1.0);
        let cfg = DetectorConfig::new(vec![n, -n], 1.0, 1.0, 0.0).unwrap();
        let r0 = BlochVector::from_components(0.8, 0.0, 0.6).unwrap();
        let out = chaos_game(&cfg, &r0, 400, RngStream::new(11, 0)).unwrap();
        // after the first click every point sits at one pole: from r = +-n
        // the opposite detector has probability exactly zero
        let first_z = out.points[0][2];
        assert!(first_z.abs() > 1.0 - 1e-12);
        for p in &out.points {
            assert_abs_diff_eq!(p[2], first_z, epsilon = 1e-12);
        }
        let probs_at_pole = click_probabilities_raw(
            &BlochVector::from_components(0.0, 0.0, first_z).unwrap(),
            cfg.directions(),
            1.0,
        );
        let (stay, leave) = if first_z > 0.0 {
            (probs_at_pole[0], probs_at_pole[1])
        } else {
            (probs_at_pole[1], probs_at_pole[0])
        };
        assert_abs_diff_eq!(stay, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(leave, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn square_attractor_collapses_to_the_equator() {
        let cfg = builtin_config(BuiltinConfig::Square, 0.7, 1.0, 0.0).unwrap();
        let r0 = BlochVector::from_components(0.0, 0.0, 1.0).unwrap();
        let out = chaos_game(&cfg, &r0, 1200, RngStream::new(6, 0)).unwrap();
        let mut z: Vec<f64> = out.points[200..].iter().map(|p| p[2].abs()).collect();
        z.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = z[z.len() / 2];
        assert!(median < 0.01, "median |r_z| = {median}");
    }

    // The fast sampler and the dense 64-sector engine must produce the same
    // events and the same Bloch points draw-for-draw when fed the same
    // stream. This validates that Lambda proportional to the identity makes
    // the closed-form path exact.
    #[test]
    fn chaos_game_matches_the_sector_engine() {
        for omega in [0.0, 0.7] {
            let cfg = builtin_config(BuiltinConfig::Octahedron, 0.58, 1.0, omega).unwrap();
            let r0 = BlochVector::from_components(1.0, 0.0, 0.0).unwrap();
            let stream = RngStream::new(31, 4);
            let n_jumps = 60;
            let fast = chaos_game(&cfg, &r0, n_jumps, stream).unwrap();

            let model = register_model(&cfg).unwrap();
            let spec = model.spec().clone();
            let spinor = r0.to_spinor();
            let init =
                PureState::new(&spec, 0, CVec::from_vec(vec![spinor[0], spinor[1]])).unwrap();
            let cfg_int = IntegratorConfig::new(1e-3, 100).unwrap();
            let horizon = fast.final_time + 0.1;
            let traj = run_trajectory(&init, (0.0, horizon), &model, &cfg_int, stream).unwrap();

            assert_eq!(traj.events.len(), n_jumps);
            for (fast_ev, engine_ev) in fast.clicks.events.iter().zip(&traj.events) {
                assert_eq!(fast_ev.detector, engine_ev.channel);
                assert_eq!(fast_ev.from, engine_ev.from as u64);
                assert_eq!(fast_ev.to, engine_ev.to as u64);
                assert!(
                    (fast_ev.t - engine_ev.t).abs() <= 1e-8,
                    "event time deviates by {:e}",
                    (fast_ev.t - engine_ev.t).abs()
                );
            }
            let engine_r = BlochVector::from_state_vector(traj.final_state.psi()).unwrap();
            // compare at the last jump: rotate the fast point forward over
            // the trailing no-jump stretch
            let fast_r = fast
                .final_direction
                .rotated_about_z(omega * (horizon - fast.final_time));
            assert!(
                (engine_r.as_vector() - fast_r.as_vector()).norm() <= 1e-8,
                "final Bloch deviates by {:e}",
                (engine_r.as_vector() - fast_r.as_vector()).norm()
            );
        }
    }
}
