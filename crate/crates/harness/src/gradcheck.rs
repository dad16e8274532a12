//! Finite-difference check of the adjoint gradient on frozen noise.

use jdoc_core::adjoint::AdjointSource;
use jdoc_core::streams::{stream, Purpose};
use jdoc_core::CoeffArray;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::RunConfig;
use crate::experiment::{build_problem, zero_control};
use crate::Result;

pub const DEFAULT_STEPS: [f64; 6] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub n_directions: usize,
    pub grad_norm: f64,
    /// FD steps and, for each, the worst relative error over all directions.
    pub steps: Vec<f64>,
    pub max_rel_error: Vec<f64>,
    pub best_step: f64,
    pub best_error: f64,
}

fn gaussian(seed: u64, id: u64, n: usize, scale: f64) -> Vec<f64> {
    let mut rng = stream(seed, 0, Purpose::Directions, id);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect()
}

/// Compares `⟨∇Ĵ, d⟩` with central differences of `Ĵ` along `n_directions`
/// random unit directions, at a random base control, for every step in
/// `steps`. Always uses the exact adjoint, since the surrogate one is not a
/// gradient of the sampled objective.
pub fn gradient_check(cfg: &RunConfig, n_directions: usize, steps: &[f64]) -> Result<GradCheckReport> {
    let mut problem = build_problem(cfg)?;
    problem.source = AdjointSource::Exact;
    let zero = zero_control(cfg)?;
    let (l, n) = (zero.grid().len(), zero.n_intervals());
    let mut base = CoeffArray::zeros(l, n);
    base.as_mut_slice().copy_from_slice(&gaussian(cfg.seed, u64::MAX, l * n, 0.5));
    let control = zero.with_coefficients(base)?;
    let realization = problem.setup.sample_realization(0)?;
    let (_, grad, _) = problem.objective_and_gradient(&control, &realization, 0)?;

    let mut max_rel_error = vec![0.0f64; steps.len()];
    for i in 0..n_directions {
        let mut dir = CoeffArray::zeros(l, n);
        dir.as_mut_slice().copy_from_slice(&gaussian(cfg.seed, i as u64, l * n, 1.0));
        let norm = dir.norm();
        dir.scale(1.0 / norm);
        let ad = grad.dot(&dir);
        for (s, &h) in steps.iter().enumerate() {
            let mut plus = control.coefficients().clone();
            plus.add_scaled(h, &dir);
            let mut minus = control.coefficients().clone();
            minus.add_scaled(-h, &dir);
            let jp = problem.objective(&control.with_coefficients(plus)?, &realization)?;
            let jm = problem.objective(&control.with_coefficients(minus)?, &realization)?;
            let fd = (jp - jm) / (2.0 * h);
            let scale = ad.abs().max(fd.abs());
            let err = if scale == 0.0 { 0.0 } else { (fd - ad).abs() / scale };
            max_rel_error[s] = max_rel_error[s].max(err);
        }
    }
    let (best, best_error) = max_rel_error
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, f64::NAN));
    Ok(GradCheckReport {
        n_directions,
        grad_norm: grad.norm(),
        steps: steps.to_vec(),
        max_rel_error,
        best_step: steps.get(best).copied().unwrap_or(f64::NAN),
        best_error,
    })
}
