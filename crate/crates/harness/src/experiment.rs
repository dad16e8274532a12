//! Experiment orchestration: build the problem, optimize, evaluate on a
//! held-out realization, write artifacts.

use std::path::Path;
use std::sync::Arc;

use jdoc_core::adjoint::{solve_adjoint_ensemble, AdjointSource, VarianceProfile};
use jdoc_core::objective::reduced_objective;
use jdoc_core::optimizer::{optimize, IterationReport};
use jdoc_core::{ControlField, EnsembleSetup, Problem, TrajectoryRecord};
use log::info;
use serde::Serialize;

use crate::config::{AdjointMode, Experiment, RunConfig};
use crate::output::{self, JsonLines};
use crate::stats::{compute_stats, EnsembleStats};
use crate::{HarnessError, Result};

/// Iteration index of the realization used for final evaluation. Optimizer
/// iterations count up from zero and never reach it.
pub const EVAL_ITERATION: u64 = u64::MAX;
/// Iteration index of the uncontrolled ensemble used to fit the surrogate
/// variance.
pub const FIT_ITERATION: u64 = u64::MAX - 1;

pub fn ensemble_setup(cfg: &RunConfig) -> EnsembleSetup {
    EnsembleSetup {
        dynamics: cfg.dynamics.clone(),
        jump: cfg.jump,
        t_final: cfg.t_final,
        n_t_u: cfg.n_t_u,
        n_particles: cfg.n_particles,
        seed: cfg.seed,
        sampler: Arc::new(cfg.initial.clone()),
    }
}

pub fn zero_control(cfg: &RunConfig) -> Result<ControlField> {
    Ok(ControlField::zeros(cfg.grid.clone(), cfg.eps_phi, cfg.t_final, cfg.n_t_u)?)
}

/// The control named by `control.input`, if any. For `stabilization` it is
/// averaged in time and held constant over the configured horizon.
pub fn load_control(cfg: &RunConfig) -> Result<Option<ControlField>> {
    let Some(path) = &cfg.control_input else {
        return Ok(None);
    };
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let cf = ControlField::read_csv(std::io::BufReader::new(file))?;
    let cf = if cfg.experiment == Experiment::Stabilization {
        cf.time_average().with_horizon(cfg.t_final)?.spread(cfg.n_t_u)?
    } else {
        cf
    };
    if cf.grid() != &cfg.grid || cf.eps_phi() != cfg.eps_phi || cf.n_intervals() != cfg.n_t_u || cf.t_final() != cfg.t_final {
        return Err(HarnessError::Config(format!(
            "control.input: {} does not match the configured grid, eps_phi and time discretization",
            path.display()
        )));
    }
    Ok(Some(cf))
}

/// Builds the optimization problem, fitting the surrogate variance to an
/// uncontrolled ensemble when the config does not give one.
pub fn build_problem(cfg: &RunConfig) -> Result<Problem> {
    let setup = ensemble_setup(cfg);
    let source = match &cfg.adjoint {
        AdjointMode::Exact => AdjointSource::Exact,
        AdjointMode::Surrogate { variance } => {
            let desired = cfg
                .cost
                .desired()
                .cloned()
                .ok_or_else(|| HarnessError::Config("cost.desired: surrogate adjoint needs a desired trajectory".into()))?;
            let variance = match variance {
                Some(v) => *v,
                None => {
                    let tr = setup.run_ensemble(&zero_control(cfg)?, FIT_ITERATION)?;
                    VarianceProfile::fit(&tr)?
                }
            };
            AdjointSource::Surrogate { desired, variance }
        }
    };
    Ok(Problem {
        setup,
        cost: cfg.cost.clone(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub experiment: String,
    pub seed: u64,
    pub n_particles: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Objective of the starting control on the evaluation realization.
    pub initial_objective: f64,
    /// Objective of the returned control on the evaluation realization.
    pub final_objective: f64,
    pub relative_objective: f64,
    pub uncontrolled_objective: f64,
    pub final_mean: [f64; 2],
    pub uncontrolled_final_mean: [f64; 2],
    /// Time-averaged distance of the ensemble mean to the desired path.
    pub tracking_error: Option<f64>,
    pub uncontrolled_tracking_error: Option<f64>,
    pub variance_profile: Option<VarianceProfile>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub control: ControlField,
    pub stats: EnsembleStats,
    pub uncontrolled_stats: EnsembleStats,
    pub reports: Vec<IterationReport>,
}

/// Runs `cfg`, calling `on_report` after every optimizer iteration. With
/// `out` set, writes `control.csv`, `stats.csv`, `stats_uncontrolled.csv`,
/// `iterations.jsonl`, `summary.json` and the optional dumps there.
pub fn run_experiment(
    cfg: &RunConfig,
    out: Option<&Path>,
    mut on_report: impl FnMut(&IterationReport),
) -> Result<RunOutcome> {
    let problem = build_problem(cfg)?;
    let zero = zero_control(cfg)?;
    let start = load_control(cfg)?.unwrap_or_else(|| zero.clone());
    if cfg.experiment == Experiment::Stabilization && cfg.optimizer.max_iter != 0 {
        return Err(HarnessError::Config("optimizer.max_iter: stabilization runs no optimizer iterations".into()));
    }

    let mut log = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
            Some(JsonLines::new(output::create(&dir.join("iterations.jsonl"))?))
        }
        None => None,
    };
    let mut log_error = None;
    info!("{}: optimizing with {} particles", cfg.experiment, cfg.n_particles);
    let outcome = optimize(&problem, start.clone(), &cfg.optimizer, |rep| {
        if let Some(w) = log.as_mut() {
            if let Err(e) = w.write(rep) {
                log_error.get_or_insert(e);
            }
        }
        on_report(rep);
    })?;
    if let (Some(e), Some(dir)) = (log_error, out) {
        return Err(HarnessError::io(&dir.join("iterations.jsonl"), e));
    }
    if let (Some(w), Some(dir)) = (log.as_mut(), out) {
        w.flush().map_err(|e| HarnessError::io(&dir.join("iterations.jsonl"), e))?;
    }

    let eval = problem.setup.sample_realization(EVAL_ITERATION)?;
    let final_tr = problem.setup.simulate(&outcome.control, &eval)?;
    let start_tr = problem.setup.simulate(&start, &eval)?;
    let free_tr = problem.setup.simulate(&zero, &eval)?;
    let final_objective = reduced_objective(&cfg.cost, &outcome.control, &final_tr)?;
    let initial_objective = reduced_objective(&cfg.cost, &start, &start_tr)?;
    let uncontrolled_objective = reduced_objective(&cfg.cost, &zero, &free_tr)?;

    let mut stats = compute_stats(&final_tr);
    stats.objective_trace = outcome.reports.iter().map(|r| r.objective).collect();
    let uncontrolled_stats = compute_stats(&free_tr);
    let tracking = |s: &EnsembleStats| {
        cfg.cost.desired().map(|d| {
            s.mean_distance(|t| {
                let z = d.at(t);
                [z.x, z.v]
            })
        })
    };

    let summary = RunSummary {
        experiment: cfg.experiment.to_string(),
        seed: cfg.seed,
        n_particles: cfg.n_particles,
        iterations: outcome.reports.len(),
        converged: outcome.converged,
        initial_objective,
        final_objective,
        relative_objective: final_objective / initial_objective,
        uncontrolled_objective,
        final_mean: stats.final_mean(),
        uncontrolled_final_mean: uncontrolled_stats.final_mean(),
        tracking_error: tracking(&stats),
        uncontrolled_tracking_error: tracking(&uncontrolled_stats),
        variance_profile: match &problem.source {
            AdjointSource::Surrogate { variance, .. } => Some(*variance),
            AdjointSource::Exact => None,
        },
    };

    if let Some(dir) = out {
        write_artifacts(cfg, &problem, dir, &outcome.control, &final_tr, &stats, &uncontrolled_stats, &summary)?;
    }
    Ok(RunOutcome {
        summary,
        control: outcome.control,
        stats,
        uncontrolled_stats,
        reports: outcome.reports,
    })
}

#[allow(clippy::too_many_arguments)]
fn write_artifacts(
    cfg: &RunConfig,
    problem: &Problem,
    dir: &Path,
    control: &ControlField,
    trajectories: &[TrajectoryRecord],
    stats: &EnsembleStats,
    uncontrolled: &EnsembleStats,
    summary: &RunSummary,
) -> Result<()> {
    let path = dir.join("control.csv");
    control.write_csv(output::create(&path)?)?;

    for (name, s) in [("stats.csv", stats), ("stats_uncontrolled.csv", uncontrolled)] {
        let path = dir.join(name);
        s.write_csv(output::create(&path)?).map_err(|e| output::csv_error(&path, e))?;
    }

    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;

    if cfg.output.trajectories {
        output::write_trajectories(&dir.join("trajectories.csv"), trajectories, cfg.output.dump_particles)?;
    }
    if cfg.output.adjoint {
        let adj = solve_adjoint_ensemble(
            &problem.setup.dynamics,
            &problem.cost,
            control,
            &problem.setup.jump,
            trajectories,
            &problem.source,
            problem.setup.seed,
            EVAL_ITERATION,
        )?;
        output::write_adjoints(&dir.join("adjoint.csv"), trajectories, &adj, cfg.output.dump_particles)?;
    }
    Ok(())
}
