//! Deterministic ensemble evolution: fixed-step RK4 integration of the
//! master equation and distances between density families.

use crate::algebra::{liouville_rhs_raw, CMat, DensityFamily, Model, C64};
use crate::error::{Error, Result};

/// Fixed-step integrator parameters.
///
/// The method is classical fourth-order Runge-Kutta; `renorm_interval`
/// controls how often the state is re-symmetrized (`rho <- (rho +
/// rho^dag)/2`) to suppress roundoff drift.
#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub renorm_interval: usize,
}

impl IntegratorConfig {
    pub fn new(dt: f64, renorm_interval: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Invalid {
                what: "integrator config",
                why: format!("dt must be positive and finite, got {dt}"),
            });
        }
        if renorm_interval == 0 {
            return Err(Error::Invalid {
                what: "integrator config",
                why: "renorm_interval must be >= 1".into(),
            });
        }
        Ok(Self {
            dt,
            renorm_interval,
        })
    }

    /// Default step for a model: `1e-3 / max_rate`, clamped to 1e-3 for
    /// rate-free models.
    pub fn for_model(model: &Model) -> Self {
        let rate = model.max_rate();
        let dt = if rate > 0.0 { 1e-3 / rate } else { 1e-3 };
        Self {
            dt,
            renorm_interval: 100,
        }
    }
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            renorm_interval: 100,
        }
    }
}

fn add_scaled(base: &[CMat], factor: f64, delta: &[CMat]) -> Vec<CMat> {
    base.iter()
        .zip(delta)
        .map(|(b, d)| b + d * C64::new(factor, 0.0))
        .collect()
}

fn symmetrize(blocks: &mut [CMat]) {
    for b in blocks.iter_mut() {
        let sym = (&*b + b.adjoint()) * C64::new(0.5, 0.0);
        *b = sym;
    }
}

fn all_finite(blocks: &[CMat]) -> bool {
    blocks
        .iter()
        .all(|b| b.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
}

/// Integrates the master equation from `t_span.0` to `t_span.1`.
///
/// Steps are clipped at schedule boundaries so every RK4 stage sees a single
/// segment. The result is validated (trace within 1e-9, Hermitian within
/// 1e-9, eigenvalues above -1e-8); a violation is an error rather than a
/// silent projection, since clipping would mask integrator bugs.
pub fn evolve_density(
    rho0: &DensityFamily,
    model: &Model,
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<DensityFamily> {
    let (t0, t1) = t_span;
    if rho0.spec() != model.spec() {
        return Err(Error::SpecMismatch);
    }
    if !(t1 >= t0) {
        return Err(Error::Invalid {
            what: "time span",
            why: format!("t1 = {t1} is before t0 = {t0}"),
        });
    }
    if t1 == t0 {
        return Ok(rho0.clone());
    }

    let zeros = || -> Vec<CMat> {
        rho0.spec()
            .dims()
            .iter()
            .map(|&n| CMat::zeros(n, n))
            .collect()
    };
    let mut blocks: Vec<CMat> = rho0.blocks().to_vec();
    let mut k = [zeros(), zeros(), zeros(), zeros()];

    let span = t1 - t0;
    let tiny = span * 1e-15;
    let mut t = t0;
    let mut step: usize = 0;
    while t1 - t > tiny {
        let seg = model.segment_at(t);
        let mut h = cfg.dt.min(t1 - t);
        if let Some(boundary) = model.next_boundary_after(t) {
            if boundary < t1 {
                h = h.min(boundary - t);
            }
        }

        liouville_rhs_raw(
            &blocks,
            seg.hamiltonian(),
            seg.couplings(),
            seg.lambda(),
            &mut k[0],
        );
        let stage = add_scaled(&blocks, h / 2.0, &k[0]);
        liouville_rhs_raw(
            &stage,
            seg.hamiltonian(),
            seg.couplings(),
            seg.lambda(),
            &mut k[1],
        );
        let stage = add_scaled(&blocks, h / 2.0, &k[1]);
        liouville_rhs_raw(
            &stage,
            seg.hamiltonian(),
            seg.couplings(),
            seg.lambda(),
            &mut k[2],
        );
        let stage = add_scaled(&blocks, h, &k[2]);
        liouville_rhs_raw(
            &stage,
            seg.hamiltonian(),
            seg.couplings(),
            seg.lambda(),
            &mut k[3],
        );

        let w = C64::new(h / 6.0, 0.0);
        let w2 = C64::new(h / 3.0, 0.0);
        for alpha in 0..blocks.len() {
            let update = (&k[0][alpha] + &k[3][alpha]) * w + (&k[1][alpha] + &k[2][alpha]) * w2;
            blocks[alpha] += update;
        }

        if !all_finite(&blocks) {
            return Err(Error::NumericalBlowup { step });
        }

        step += 1;
        if step % cfg.renorm_interval == 0 {
            symmetrize(&mut blocks);
        }
        t += h;
    }

    let out = DensityFamily::new(rho0.spec().clone(), blocks)?;
    out.validate_with(1e-9, 1e-8, 1e-9)?;
    Ok(out)
}

/// Integrates through a nondecreasing grid of times, returning the state at
/// each grid point. The grid must start at or after `t0`.
pub fn evolve_density_checkpoints(
    rho0: &DensityFamily,
    model: &Model,
    t0: f64,
    grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<DensityFamily>> {
    let mut out = Vec::with_capacity(grid.len());
    let mut state = rho0.clone();
    let mut t = t0;
    for &tg in grid {
        if tg < t {
            return Err(Error::Invalid {
                what: "checkpoint grid",
                why: "grid times must be nondecreasing and start at or after t0".into(),
            });
        }
        state = evolve_density(&state, model, (t, tg), cfg)?;
        t = tg;
        out.push(state.clone());
    }
    Ok(out)
}

/// Trace distance `(1/2) sum_alpha ||rho_alpha - sigma_alpha||_1`.
///
/// Per-block differences are Hermitian, so the trace norm is the sum of
/// absolute eigenvalues. Zero iff the families agree; one for orthogonal
/// states.
pub fn trace_distance(a: &DensityFamily, b: &DensityFamily) -> Result<f64> {
    if a.spec() != b.spec() {
        return Err(Error::SpecMismatch);
    }
    let mut total = 0.0;
    for (block_a, block_b) in a.blocks().iter().zip(b.blocks()) {
        let diff = block_a - block_b;
        total += diff
            .symmetric_eigenvalues()
            .iter()
            .map(|x| x.abs())
            .sum::<f64>();
    }
    Ok(0.5 * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{BlockOperator, CouplingMap, SectorSpec};
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> C64 {
        Complex64::new(re, im)
    }

    fn scalar(x: f64) -> CMat {
        CMat::from_element(1, 1, c(x, 0.0))
    }

    /// Two one-dimensional sectors coupled both ways by sqrt(kappa); the
    /// sector weights obey the classical two-state rate equation with the
    /// closed-form solution p(t) = 1/2 + (p0 - 1/2) exp(-2 kappa t).
    fn two_state_model(kappa: f64) -> Model {
        let spec = SectorSpec::new(vec![1, 1]).unwrap();
        let h = BlockOperator::zeros(spec.clone());
        let mut g = CouplingMap::empty(spec);
        g.add(0, 1, scalar(kappa.sqrt())).unwrap();
        g.add(1, 0, scalar(kappa.sqrt())).unwrap();
        Model::time_independent(h, g).unwrap()
    }

    fn two_state_rho(p: f64) -> DensityFamily {
        DensityFamily::new(
            SectorSpec::new(vec![1, 1]).unwrap(),
            vec![scalar(p), scalar(1.0 - p)],
        )
        .unwrap()
    }

    fn qubit_model(omega: f64) -> Model {
        let spec = SectorSpec::new(vec![2]).unwrap();
        let mut h_block = CMat::zeros(2, 2);
        h_block[(0, 0)] = c(omega / 2.0, 0.0);
        h_block[(1, 1)] = c(-omega / 2.0, 0.0);
        let h = BlockOperator::new(spec.clone(), vec![h_block]).unwrap();
        Model::time_independent(h, CouplingMap::empty(spec)).unwrap()
    }

    fn bloch_density(r: [f64; 3]) -> DensityFamily {
        let mut b = CMat::zeros(2, 2);
        b[(0, 0)] = c(0.5 * (1.0 + r[2]), 0.0);
        b[(1, 1)] = c(0.5 * (1.0 - r[2]), 0.0);
        b[(0, 1)] = c(0.5 * r[0], -0.5 * r[1]);
        b[(1, 0)] = c(0.5 * r[0], 0.5 * r[1]);
        DensityFamily::new(SectorSpec::new(vec![2]).unwrap(), vec![b]).unwrap()
    }

    #[test]
    fn free_qubit_precesses_about_z() {
        let omega = 1.7;
        let t = 0.9;
        let model = qubit_model(omega);
        let rho0 = bloch_density([1.0, 0.0, 0.0]);
        let cfg = IntegratorConfig::default();
        let rho = evolve_density(&rho0, &model, (0.0, t), &cfg).unwrap();
        let expected = bloch_density([(omega * t).cos(), (omega * t).sin(), 0.0]);
        assert!(trace_distance(&rho, &expected).unwrap() < 1e-9);
    }

    #[test]
    fn two_state_relaxation_matches_closed_form() {
        let kappa = 1.0;
        let t = 0.7;
        let model = two_state_model(kappa);
        let cfg = IntegratorConfig::default();
        let rho = evolve_density(&two_state_rho(1.0), &model, (0.0, t), &cfg).unwrap();
        let expected = 0.5 + 0.5 * (-2.0 * kappa * t).exp();
        assert_abs_diff_eq!(rho.block(0)[(0, 0)].re, expected, epsilon = 1e-10);
    }

    #[test]
    fn empty_interval_returns_input_exactly() {
        let model = two_state_model(1.0);
        let rho0 = two_state_rho(0.25);
        let cfg = IntegratorConfig::default();
        let rho = evolve_density(&rho0, &model, (2.0, 2.0), &cfg).unwrap();
        assert_eq!(rho, rho0);
    }

    #[test]
    fn rk4_error_shrinks_sixteenfold_when_halving_dt() {
        let kappa = 1.0;
        let t = 1.0;
        let model = two_state_model(kappa);
        let exact = 0.5 + 0.5 * (-2.0 * kappa * t).exp();
        let mut errs = Vec::new();
        for dt in [0.05, 0.025] {
            let cfg = IntegratorConfig::new(dt, usize::MAX).unwrap();
            let rho = evolve_density(&two_state_rho(1.0), &model, (0.0, t), &cfg).unwrap();
            errs.push((rho.block(0)[(0, 0)].re - exact).abs());
        }
        let ratio = errs[0] / errs[1];
        assert!(
            (12.0..=20.0).contains(&ratio),
            "convergence ratio {ratio} outside [12, 20] (errors {errs:?})"
        );
    }

    #[test]
    fn trace_drift_stays_below_1e9_over_1e4_steps() {
        let model = two_state_model(1.0);
        let cfg = IntegratorConfig::new(1e-3, 100).unwrap();
        let rho = evolve_density(&two_state_rho(0.8), &model, (0.0, 10.0), &cfg).unwrap();
        assert!((rho.total_trace() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn blowup_reports_step_index() {
        let model = two_state_model(1e6);
        let cfg = IntegratorConfig::new(1.0, 100).unwrap();
        let err = evolve_density(&two_state_rho(1.0), &model, (0.0, 100.0), &cfg).unwrap_err();
        match err {
            Error::NumericalBlowup { step } => assert!(step > 0),
            other => panic!("expected blowup, got {other}"),
        }
    }

    #[test]
    fn trace_distance_reference_values() {
        let a = bloch_density([0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(trace_distance(&a, &a).unwrap(), 0.0, epsilon = 1e-15);
        let b = bloch_density([0.0, 0.0, -1.0]);
        assert_abs_diff_eq!(trace_distance(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
        let p = two_state_rho(1.0);
        let q = two_state_rho(0.0);
        assert_abs_diff_eq!(trace_distance(&p, &q).unwrap(), 1.0, epsilon = 1e-15);
        assert!(trace_distance(&a, &p).is_err());
    }

    #[test]
    fn checkpoints_walk_the_grid() {
        let kappa = 1.0;
        let model = two_state_model(kappa);
        let cfg = IntegratorConfig::default();
        let grid = [0.25, 0.5, 1.0];
        let states =
            evolve_density_checkpoints(&two_state_rho(1.0), &model, 0.0, &grid, &cfg).unwrap();
        for (tg, rho) in grid.iter().zip(&states) {
            let expected = 0.5 + 0.5 * (-2.0 * kappa * tg).exp();
            assert_abs_diff_eq!(rho.block(0)[(0, 0)].re, expected, epsilon = 1e-9);
        }
        let err = evolve_density_checkpoints(&two_state_rho(1.0), &model, 0.0, &[1.0, 0.5], &cfg);
        assert!(err.is_err());
    }

    #[test]
    fn positivity_holds_for_random_small_models() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let rand_mat = |rng: &mut rand_chacha::ChaCha8Rng| {
            CMat::from_fn(2, 2, |_, _| {
                c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
            })
        };
        for _ in 0..20 {
            let spec = SectorSpec::new(vec![2, 2]).unwrap();
            let h_blocks = (0..2)
                .map(|_| {
                    let a = rand_mat(&mut rng);
                    (&a + a.adjoint()) * c(0.5, 0.0)
                })
                .collect();
            let h = BlockOperator::new(spec.clone(), h_blocks).unwrap();
            let mut g = CouplingMap::empty(spec.clone());
            g.add(0, 1, rand_mat(&mut rng)).unwrap();
            g.add(1, 0, rand_mat(&mut rng)).unwrap();
            let model = Model::time_independent(h, g).unwrap();
            // default step keeps rate * dt well below 0.01
            let cfg = IntegratorConfig::for_model(&model);
            let mut psi = crate::algebra::CVec::zeros(2);
            psi[0] = c(rng.random::<f64>(), 0.0);
            psi[1] = c(rng.random::<f64>(), rng.random::<f64>());
            psi /= c(psi.norm(), 0.0);
            let rho0 = DensityFamily::pure(spec, 0, &psi).unwrap();
            // evolve_density validates positivity (>= -1e-8) on its output
            let rho = evolve_density(&rho0, &model, (0.0, 1.5), &cfg).unwrap();
            rho.validate_with(1e-9, 1e-8, 1e-9).unwrap();
        }
    }
}
