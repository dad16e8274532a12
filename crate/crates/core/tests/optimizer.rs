use std::sync::Arc;

use jdoc_core::adjoint::AdjointSource;
use jdoc_core::forward::FixedInitial;
use jdoc_core::optimizer::{armijo_backtrack, assemble_gradient, optimize};
use jdoc_core::*;

fn quiet_jumps() -> JumpParams {
    // rate ~ 6e-5, so no jump in practice
    JumpParams::new(1.0, 1e-8).unwrap()
}

fn setup(dynamics: Dynamics, t_final: f64, n_t_u: usize, n: usize, starts: Vec<PhaseState>) -> EnsembleSetup {
    EnsembleSetup {
        dynamics,
        jump: JumpParams::new(0.9, 10.0).unwrap(),
        t_final,
        n_t_u,
        n_particles: n,
        seed: 3,
        sampler: Arc::new(FixedInitial(starts)),
    }
}

fn tracking_problem(n: usize) -> Problem {
    let d = Dynamics::new(DynamicsKind::Harmonic { eta: 1.0 }, 0.1, 0.1).unwrap();
    let starts = vec![
        PhaseState::new(0.75, 0.75),
        PhaseState::new(0.6, 0.9),
        PhaseState::new(0.9, 0.6),
    ];
    Problem {
        setup: setup(d, 2.0, 10, n, starts),
        cost: CostSpec {
            kind: CostKind::Tracking { sigma: 0.5, desired: DesiredTrajectory::constant(0.0, 0.0) },
            alpha: 1e-3,
        },
        source: AdjointSource::Exact,
    }
}

fn zero_control(n_t_u: usize, t_final: f64) -> ControlField {
    ControlField::zeros(PhaseGrid::new(2.0, 2.0, 6, 6).unwrap(), 0.5, t_final, n_t_u).unwrap()
}

fn quiet() -> OptimizerConfig {
    OptimizerConfig { zeta0: 10.0, max_iter: 5, ..Default::default() }
}

#[test]
fn armijo_zero_gradient_takes_first_trial() {
    let mu = CoeffArray::from_fn(3, 2, |i, k| (i + k) as f64);
    let g = CoeffArray::zeros(3, 2);
    let cfg = OptimizerConfig { zeta0: 2.5, ..Default::default() };
    let ls = armijo_backtrack(&mu, 1.0, &g, &cfg, |_| Ok(1.0)).unwrap();
    assert!(ls.accepted);
    assert_eq!(ls.zeta, 2.5);
    assert_eq!(ls.point, mu);
}

#[test]
fn armijo_quadratic_accepts_unit_step() {
    let mu = CoeffArray::from_fn(4, 3, |i, k| 0.3 * i as f64 - 0.2 * k as f64 + 0.1);
    let f = |m: &CoeffArray| Ok(0.5 * m.dot(m));
    let cfg = OptimizerConfig { zeta0: 1.0, c_armijo: 0.5, ..Default::default() };
    let ls = armijo_backtrack(&mu, 0.5 * mu.dot(&mu), &mu, &cfg, f).unwrap();
    assert!(ls.accepted);
    assert_eq!(ls.zeta, 1.0);
    assert!(ls.point.norm() < 1e-15);
}

#[test]
fn armijo_backtracks_to_the_minimiser_region() {
    let mu = CoeffArray::from_fn(2, 1, |_, _| 1.0);
    let f = |m: &CoeffArray| Ok(0.5 * m.dot(m));
    let cfg = OptimizerConfig { zeta0: 8.0, ..Default::default() };
    let ls = armijo_backtrack(&mu, 1.0, &mu, &cfg, f).unwrap();
    assert!(ls.accepted);
    // 8 and 4 overshoot badly, 2 is borderline, 1 lands on zero
    assert!(ls.zeta <= 2.0);
    assert!(ls.objective <= 1.0 - 1e-4 * ls.zeta * 2.0);
}

#[test]
fn armijo_failure_returns_smallest_trial() {
    let mu = CoeffArray::from_fn(2, 2, |_, _| 1.0);
    let g = CoeffArray::from_fn(2, 2, |_, _| 1.0);
    let cfg = OptimizerConfig { zeta0: 1.0, rho: 0.5, max_backtracks: 4, ..Default::default() };
    let mut calls = 0;
    let ls = armijo_backtrack(&mu, 0.0, &g, &cfg, |_| {
        calls += 1;
        Ok(1.0)
    })
    .unwrap();
    assert!(!ls.accepted);
    assert_eq!(calls, 5);
    assert_eq!(ls.zeta, 1.0 / 16.0);
    assert_eq!(ls.point.get(0, 0), 1.0 - 1.0 / 16.0);
}

#[test]
fn armijo_treats_overflow_as_too_long() {
    let mu = CoeffArray::from_fn(1, 1, |_, _| 1.0);
    let cfg = OptimizerConfig { zeta0: 4.0, ..Default::default() };
    let ls = armijo_backtrack(&mu, 0.5, &mu, &cfg, |m| {
        let x = m.get(0, 0);
        if x.abs() > 2.0 {
            Err(Error::NonFinite { what: "state", particle: 0, t: 0.0 })
        } else {
            Ok(0.5 * x * x)
        }
    })
    .unwrap();
    assert!(ls.accepted);
    assert!(ls.zeta <= 2.0);
}

#[test]
fn armijo_descends_on_sampled_objective() {
    let p = tracking_problem(3);
    let cf = zero_control(10, 2.0);
    let r = p.setup.sample_realization(0).unwrap();
    let (j, g, _) = p.objective_and_gradient(&cf, &r, 0).unwrap();
    assert!(g.norm() > 0.0);
    let cfg = OptimizerConfig { zeta0: 10.0, ..Default::default() };
    let ls = jdoc_core::optimizer::armijo_search(&p, &cf, &r, j, &g, &cfg).unwrap();
    assert!(ls.accepted);
    assert!(ls.objective <= j - cfg.c_armijo * ls.zeta * g.dot(&g));
    assert_eq!(ls.objective, p.objective(&ls.point, &r).unwrap());
}

#[test]
fn zero_iterations_return_the_initial_guess() {
    let p = tracking_problem(3);
    let cf = zero_control(10, 2.0);
    let cfg = OptimizerConfig { max_iter: 0, ..quiet() };
    let out = optimize(&p, cf.clone(), &cfg, |_| panic!("no iterations expected")).unwrap();
    assert!(out.reports.is_empty());
    assert!(!out.converged);
    assert_eq!(out.control.coefficients(), cf.coefficients());
}

#[test]
fn huge_tolerance_stops_after_one_iteration() {
    let p = tracking_problem(3);
    let cfg = OptimizerConfig { tol: 1e12, ..quiet() };
    let out = optimize(&p, zero_control(10, 2.0), &cfg, |_| {}).unwrap();
    assert_eq!(out.reports.len(), 1);
    assert!(out.converged);
    let rep = out.reports[0];
    assert_eq!(rep.n, 0);
    assert!((rep.e - rep.zeta * rep.grad_norm).abs() <= 1e-15 * rep.e.max(1.0));
}

#[test]
fn descent_lowers_the_objective_on_held_out_noise() {
    let p = tracking_problem(3);
    let cf = zero_control(10, 2.0);
    let mut seen = Vec::new();
    let out = optimize(&p, cf.clone(), &quiet(), |r| seen.push(r.n)).unwrap();
    assert_eq!(seen, (0..out.reports.len()).collect::<Vec<_>>());
    let eval = p.setup.sample_realization(u64::MAX).unwrap();
    let before = p.objective(&cf, &eval).unwrap();
    let after = p.objective(&out.control, &eval).unwrap();
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn control_penalty_gradient_is_gram_operator() {
    // zero running cost, particles pinned at rest: only α/2 ∫u² remains
    let d = Dynamics::new(DynamicsKind::Free, 0.0, 0.0).unwrap();
    let grid = PhaseGrid::new(2.0, 2.0, 5, 5).unwrap();
    let (cx, cv) = grid.center(12);
    let starts = vec![PhaseState::new(cx, cv)];
    let mut s = setup(d, 1.0, 4, 1, starts);
    s.jump = quiet_jumps();
    let alpha = 0.3;
    let p = Problem {
        setup: s,
        cost: CostSpec { kind: CostKind::Zero, alpha },
        source: AdjointSource::Exact,
    };
    let cf = ControlField::zeros(grid, 0.5, 1.0, 4).unwrap();
    let r = p.setup.sample_realization(0).unwrap();
    let (j, g, _) = p.objective_and_gradient(&cf, &r, 0).unwrap();
    assert_eq!(j, 0.0);
    assert!(g.norm() == 0.0);
    // μ = h e_(12, 2): only τ^2 reads interval 2, and ∇φ vanishes at the centre
    let mut e = CoeffArray::zeros(25, 4);
    e.set(12, 2, 1e-4);
    let shifted = cf.with_coefficients(e).unwrap();
    let (_, g2, _) = p.objective_and_gradient(&shifted, &r, 0).unwrap();
    let phi = shifted.value_in_interval(2, cx, cv) / 1e-4;
    assert!(phi > 0.0);
    let expect = alpha * cf.dtau() * phi * phi * 1e-4;
    assert!((g2.get(12, 2) - expect).abs() <= 1e-6 * expect.abs(), "{} vs {expect}", g2.get(12, 2));
}

#[test]
fn gradient_does_not_depend_on_thread_count() {
    let p = tracking_problem(300);
    let cf = zero_control(10, 2.0);
    let r = p.setup.sample_realization(1).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let tr = p.setup.simulate(&cf, &r).unwrap();
                let (_, g, _) = p.objective_and_gradient(&cf, &r, 1).unwrap();
                let adj = jdoc_core::adjoint::solve_adjoint_ensemble(
                    &p.setup.dynamics,
                    &p.cost,
                    &cf,
                    &p.setup.jump,
                    &tr,
                    &p.source,
                    p.setup.seed,
                    1,
                )
                .unwrap();
                let again = assemble_gradient(&p.cost, &cf, &tr, &adj).unwrap();
                assert_eq!(g, again);
                g
            })
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}

#[test]
fn pinned_particles_on_target_score_minus_horizon() {
    let d = Dynamics::new(DynamicsKind::Free, 0.0, 0.0).unwrap();
    let mut s = setup(d, 3.0, 12, 4, vec![PhaseState::new(0.0, 0.0)]);
    s.jump = quiet_jumps();
    let cost = CostSpec {
        kind: CostKind::Tracking { sigma: 0.5, desired: DesiredTrajectory::constant(0.0, 0.0) },
        alpha: 1.0,
    };
    let cf = zero_control(12, 3.0);
    let tr = s.run_ensemble(&cf, 0).unwrap();
    let j = jdoc_core::objective::reduced_objective(&cost, &cf, &tr).unwrap();
    assert!((j + 3.0).abs() < 1e-12, "{j}");
}

#[test]
fn objective_matches_brute_force_sum() {
    let p = tracking_problem(7);
    let grid = PhaseGrid::new(2.0, 2.0, 6, 6).unwrap();
    let mu = CoeffArray::from_fn(36, 10, |i, k| ((i * 7 + k * 3) % 11) as f64 * 0.05 - 0.25);
    let cf = ControlField::new(grid, 0.5, 2.0, mu).unwrap();
    let tr = p.setup.run_ensemble(&cf, 4).unwrap();
    let j = jdoc_core::objective::reduced_objective(&p.cost, &cf, &tr).unwrap();
    let dtau = 0.2;
    let mut total = 0.0;
    for t in &tr {
        for kappa in 1..=10 {
            let z = t.uniform_state(kappa);
            let iv = (kappa).min(9);
            let u = cf.value_in_interval(iv, z.x, z.v);
            let r2 = z.x * z.x + z.v * z.v;
            total += dtau * (-(-r2 / 0.5).exp() + 0.5e-3 * u * u);
        }
    }
    total /= tr.len() as f64;
    assert!((j - total).abs() < 1e-12, "{j} vs {total}");
}

#[test]
fn pure_diffusion_variance() {
    let b = 0.4;
    let t_final = 1.5;
    let d = Dynamics::new(DynamicsKind::Free, b, 0.0).unwrap();
    let mut s = setup(d, t_final, 30, 20000, vec![PhaseState::new(0.0, 0.0)]);
    s.jump = quiet_jumps();
    let tr = s.run_ensemble(&zero_control(30, t_final), 0).unwrap();
    let calm: Vec<_> = tr.iter().filter(|t| t.schedule.is_empty()).collect();
    assert!(calm.len() > 19990);
    let xs: Vec<f64> = calm.iter().map(|t| t.final_state().x).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let expect = b * b * t_final;
    assert!((var / expect - 1.0).abs() < 0.03, "{var} vs {expect}");
    assert!(calm.iter().all(|t| t.final_state().v == 0.0));
}

#[test]
fn harmonic_orbit_returns_after_one_period() {
    let t_final = 2.0 * std::f64::consts::PI;
    let d = Dynamics::new(DynamicsKind::Harmonic { eta: 1.0 }, 0.0, 0.0).unwrap();
    let mut s = setup(d, t_final, 4000, 1, vec![PhaseState::new(1.0, 0.0)]);
    s.jump = quiet_jumps();
    let tr = s.run_ensemble(&zero_control(4000, t_final), 0).unwrap();
    let z = tr[0].final_state();
    // explicit Euler inflates the radius by about exp(T dt / 2)
    assert!((z.x - 1.0).abs() < 1e-2 && z.v.abs() < 1e-2, "{z:?}");
    let quarter = tr[0].state_at(t_final / 4.0);
    assert!(quarter.x.abs() < 1e-2 && (quarter.v + 1.0).abs() < 1e-2, "{quarter:?}");
}

#[test]
fn single_particle_ensemble_matches_direct_integration() {
    let p = tracking_problem(1);
    let cf = ControlField::new(
        PhaseGrid::new(2.0, 2.0, 6, 6).unwrap(),
        0.5,
        2.0,
        CoeffArray::from_fn(36, 10, |i, k| (i as f64 - k as f64) * 0.01),
    )
    .unwrap();
    let r = p.setup.sample_realization(2).unwrap();
    let ens = p.setup.simulate(&cf, &r).unwrap();
    let direct =
        jdoc_core::forward::integrate_with_noise(&p.setup.dynamics, &cf, &p.setup.jump, &r.particles[0], 0).unwrap();
    assert_eq!(ens[0].states, direct.states);
}
