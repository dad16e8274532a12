//! Gradient assembly and steepest descent with Armijo backtracking.

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{solve_adjoint_ensemble, AdjointPath, AdjointSource};
use crate::control::{CoeffArray, ControlField};
use crate::error::{Error, Result};
use crate::forward::{EnsembleSetup, Realization, TrajectoryRecord};
use crate::objective::{interval_for_uniform_node, reduced_objective, CostSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// First trial step.
    pub zeta0: f64,
    /// Backtracking factor.
    pub rho: f64,
    /// Sufficient-decrease constant.
    pub c_armijo: f64,
    pub max_backtracks: usize,
    /// Stop once `ζ‖g‖` falls to this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            zeta0: 1.0,
            rho: 0.5,
            c_armijo: 1e-4,
            max_backtracks: 30,
            tol: 1e-6,
            max_iter: 50,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta0 > 0.0 && self.zeta0.is_finite()) {
            return Err(Error::invalid("zeta0 must be positive"));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid("rho must lie in (0, 1)"));
        }
        if !(self.c_armijo > 0.0 && self.c_armijo < 1.0) {
            return Err(Error::invalid("c_armijo must lie in (0, 1)"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub n: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub zeta: f64,
    #[serde(rename = "E")]
    pub e: f64,
}

/// Everything needed to evaluate the sampled objective and its gradient.
#[derive(Debug, Clone)]
pub struct Problem {
    pub setup: EnsembleSetup,
    pub cost: CostSpec,
    pub source: AdjointSource,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        self.setup.validate()?;
        self.cost.validate()
    }

    pub fn objective(&self, control: &ControlField, realization: &Realization) -> Result<f64> {
        let tr = self.setup.simulate(control, realization)?;
        reduced_objective(&self.cost, control, &tr)
    }

    /// Objective, gradient and forward paths on a fixed realization.
    pub fn objective_and_gradient(
        &self,
        control: &ControlField,
        realization: &Realization,
        iteration: u64,
    ) -> Result<(f64, CoeffArray, Vec<TrajectoryRecord>)> {
        let tr = self.setup.simulate(control, realization)?;
        let j = reduced_objective(&self.cost, control, &tr)?;
        let adj = solve_adjoint_ensemble(
            &self.setup.dynamics,
            &self.cost,
            control,
            &self.setup.jump,
            &tr,
            &self.source,
            self.setup.seed,
            iteration,
        )?;
        let g = assemble_gradient(&self.cost, control, &tr, &adj)?;
        Ok((j, g, tr))
    }
}

const CHUNK: usize = 64;

fn accumulate_particle(
    spec: &CostSpec,
    control: &ControlField,
    tr: &TrajectoryRecord,
    adj: &AdjointPath,
    out: &mut CoeffArray,
) {
    let grid = &*tr.grid;
    let l = control.grid().len();
    let data = out.as_mut_slice();
    for k in 0..grid.n_steps() {
        let coef = -grid.step_size(k) * adj.step_p[k];
        if coef == 0.0 {
            continue;
        }
        let z = tr.states[k];
        let off = grid.interval_of(k) * l;
        control
            .basis_values_at(z.x, z.v)
            .for_each_value(|i, phi| data[off + i] += coef * phi);
    }
    if spec.alpha != 0.0 {
        let n_t_u = control.n_intervals();
        for kappa in 1..=n_t_u {
            let iv = interval_for_uniform_node(kappa, n_t_u);
            let z = tr.uniform_state(kappa);
            let basis = control.basis_values_at(z.x, z.v);
            let coef = spec.alpha * control.dtau() * basis.value(control.coefficients().interval(iv));
            let off = iv * l;
            basis.for_each_value(|i, phi| data[off + i] += coef * phi);
        }
    }
}

/// `∂Ĵ/∂μ` from forward paths and their adjoints. Particles are reduced in
/// fixed-size chunks, summed in order, so the result is independent of the
/// number of threads.
pub fn assemble_gradient(
    spec: &CostSpec,
    control: &ControlField,
    trajectories: &[TrajectoryRecord],
    adjoints: &[AdjointPath],
) -> Result<CoeffArray> {
    if trajectories.is_empty() || trajectories.len() != adjoints.len() {
        return Err(Error::Misaligned(format!(
            "{} trajectories, {} adjoint paths",
            trajectories.len(),
            adjoints.len()
        )));
    }
    let shape = || CoeffArray::zeros(control.grid().len(), control.n_intervals());
    let partial: Vec<CoeffArray> = trajectories
        .par_chunks(CHUNK)
        .zip(adjoints.par_chunks(CHUNK))
        .map(|(trs, adjs)| {
            let mut acc = shape();
            for (tr, adj) in trs.iter().zip(adjs) {
                accumulate_particle(spec, control, tr, adj, &mut acc);
            }
            acc
        })
        .collect();
    let mut g = shape();
    for p in &partial {
        g.add_scaled(1.0, p);
    }
    g.scale(1.0 / trajectories.len() as f64);
    if !g.is_finite() {
        return Err(Error::NonFinite {
            what: "gradient",
            particle: 0,
            t: 0.0,
        });
    }
    Ok(g)
}

/// Samples the realization for `iteration` and returns `(Ĵ, ∇Ĵ)`.
pub fn compute_gradient(problem: &Problem, control: &ControlField, iteration: u64) -> Result<(f64, CoeffArray)> {
    let r = problem.setup.sample_realization(iteration)?;
    let (j, g, _) = problem.objective_and_gradient(control, &r, iteration)?;
    Ok((j, g))
}

/// Outcome of a backtracking search along `-g`.
#[derive(Debug, Clone)]
pub struct LineSearch<T> {
    pub zeta: f64,
    pub point: T,
    pub objective: f64,
    /// False when no trial met the sufficient-decrease condition and the
    /// smallest trial step was returned instead.
    pub accepted: bool,
}

/// Backtracking on an arbitrary objective `f` from `mu` along `-gradient`.
/// Trials are `ζ₀ρ^m`, `m = 0..=max_backtracks`; the first with
/// `f(μ - ζg) ≤ f(μ) - c ζ ‖g‖²` is taken.
pub fn armijo_backtrack(
    mu: &CoeffArray,
    objective: f64,
    gradient: &CoeffArray,
    cfg: &OptimizerConfig,
    mut f: impl FnMut(&CoeffArray) -> Result<f64>,
) -> Result<LineSearch<CoeffArray>> {
    let g2 = gradient.dot(gradient);
    let mut zeta = cfg.zeta0;
    let mut last = None;
    for m in 0..=cfg.max_backtracks {
        let mut trial = mu.clone();
        trial.add_scaled(-zeta, gradient);
        let value = match f(&trial) {
            Ok(j) => j,
            // an overflowing trial step is simply too long
            Err(Error::NonFinite { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if value <= objective - cfg.c_armijo * zeta * g2 {
            return Ok(LineSearch {
                zeta,
                point: trial,
                objective: value,
                accepted: true,
            });
        }
        debug!("armijo reject zeta={zeta:e} J={value}");
        if m == cfg.max_backtracks {
            last = Some((trial, value));
        } else {
            zeta *= cfg.rho;
        }
    }
    let (point, value) = last.expect("at least one trial");
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "objective",
            particle: 0,
            t: 0.0,
        });
    }
    warn!("no step satisfied the Armijo condition; taking the smallest trial zeta={zeta:e}");
    Ok(LineSearch {
        zeta,
        point,
        objective: value,
        accepted: false,
    })
}

/// [`armijo_backtrack`] on the sampled objective with frozen `realization`.
pub fn armijo_search(
    problem: &Problem,
    control: &ControlField,
    realization: &Realization,
    objective: f64,
    gradient: &CoeffArray,
    cfg: &OptimizerConfig,
) -> Result<LineSearch<ControlField>> {
    let ls = armijo_backtrack(control.coefficients(), objective, gradient, cfg, |mu| {
        problem.objective(&control.with_coefficients(mu.clone())?, realization)
    })?;
    Ok(LineSearch {
        zeta: ls.zeta,
        point: control.with_coefficients(ls.point)?,
        objective: ls.objective,
        accepted: ls.accepted,
    })
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub control: ControlField,
    pub reports: Vec<IterationReport>,
    pub converged: bool,
}

/// Steepest descent. Iteration `n` draws a fresh realization, keeps it for
/// the line search, and reports `(n, Ĵ(μ_n), ‖g_n‖, ζ_n, E_n = ‖μ_{n+1} - μ_n‖)`.
/// Stops once an accepted step has `E_n ≤ tol` or after `max_iter` iterations.
pub fn optimize(
    problem: &Problem,
    initial: ControlField,
    cfg: &OptimizerConfig,
    mut on_report: impl FnMut(&IterationReport),
) -> Result<OptimizeOutcome> {
    cfg.validate()?;
    problem.validate()?;
    let mut control = initial;
    let mut reports = Vec::new();
    let mut converged = false;
    for n in 0..cfg.max_iter {
        let realization = problem.setup.sample_realization(n as u64)?;
        let (j, g, _) = problem.objective_and_gradient(&control, &realization, n as u64)?;
        let grad_norm = g.norm();
        let mut direction = g.clone();
        direction.scale(-1.0);
        assert!(direction.dot(&g) <= 0.0, "search direction is not a descent direction");
        let ls = armijo_search(problem, &control, &realization, j, &g, cfg)?;
        let rep = IterationReport {
            n,
            objective: j,
            grad_norm,
            zeta: ls.zeta,
            e: ls.zeta * grad_norm,
        };
        on_report(&rep);
        reports.push(rep);
        control = ls.point;
        // a failed search says nothing about convergence
        if ls.accepted && rep.e <= cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(OptimizeOutcome {
        control,
        reports,
        converged,
    })
}
