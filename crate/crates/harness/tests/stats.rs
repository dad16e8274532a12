use std::sync::Arc;

use jdoc::stats::compute_stats;
use jdoc_core::forward::FixedInitial;
use jdoc_core::*;

fn ensemble(starts: Vec<PhaseState>, n: usize, b: f64) -> Vec<TrajectoryRecord> {
    ensemble_with(starts, n, b, JumpParams::new(0.9, 10.0).unwrap())
}

fn ensemble_with(starts: Vec<PhaseState>, n: usize, b: f64, jump: JumpParams) -> Vec<TrajectoryRecord> {
    let setup = EnsembleSetup {
        dynamics: Dynamics::new(DynamicsKind::Harmonic { eta: 1.0 }, b, b).unwrap(),
        jump,
        t_final: 1.0,
        n_t_u: 10,
        n_particles: n,
        seed: 5,
        sampler: Arc::new(FixedInitial(starts)),
    };
    let cf = ControlField::zeros(PhaseGrid::new(2.0, 2.0, 3, 3).unwrap(), 0.5, 1.0, 10).unwrap();
    setup.run_ensemble(&cf, 0).unwrap()
}

#[test]
fn matches_two_pass_formulas() {
    let tr = ensemble(vec![PhaseState::new(0.3, -0.2), PhaseState::new(-1.0, 0.5)], 257, 0.3);
    let s = compute_stats(&tr);
    assert_eq!(s.len(), 11);
    for kappa in 0..=10 {
        let xs: Vec<f64> = tr.iter().map(|t| t.uniform_state(kappa).x).collect();
        let vs: Vec<f64> = tr.iter().map(|t| t.uniform_state(kappa).v).collect();
        for (vals, mean, std) in [(&xs, s.mean_x[kappa], s.std_x[kappa]), (&vs, s.mean_v[kappa], s.std_v[kappa])] {
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            assert!((mean - m).abs() < 1e-12);
            assert!((std - sd).abs() < 1e-12);
        }
        assert!((s.t[kappa] - kappa as f64 * 0.1).abs() < 1e-12);
    }
}

#[test]
fn single_particle_has_zero_spread() {
    let tr = ensemble(vec![PhaseState::new(0.3, -0.2)], 1, 0.3);
    let s = compute_stats(&tr);
    assert!(s.std_x.iter().chain(&s.std_v).all(|&v| v == 0.0));
    assert_eq!(s.final_mean(), [tr[0].final_state().x, tr[0].final_state().v]);
}

#[test]
fn symmetric_pair() {
    let a = 0.7;
    // jump rate ~ 6e-5
    let quiet = JumpParams::new(1.0, 1e-8).unwrap();
    let tr = ensemble_with(vec![PhaseState::new(a, 0.0), PhaseState::new(-a, 0.0)], 2, 0.0, quiet);
    assert!(tr.iter().all(|t| t.schedule.is_empty()));
    let s = compute_stats(&tr);
    // the harmonic flow is linear, so the pair stays symmetric
    assert_eq!(s.mean_x[0], 0.0);
    assert!((s.std_x[0] - a).abs() < 1e-15);
    assert!(s.mean_x.iter().chain(&s.mean_v).all(|m| m.abs() < 1e-15));
    assert!(s.mean_distance(|_| [0.0, 0.0]) < 1e-15);
    assert!((s.mean_distance(|_| [3.0, 4.0]) - 5.0).abs() < 1e-12);
}

#[test]
fn empty_ensemble() {
    assert!(compute_stats(&[]).is_empty());
}
