//! Run configuration: a TOML file whose sections mirror [`RunConfig`].
//!
//! Every experiment has a preset; values in the file override it field by
//! field, except `[initial]`, which replaces the preset law as a whole. The
//! jump parameters have no preset and must always be given.
//!
//! ```toml
//! experiment = "centering-gaussian"
//!
//! [jump]
//! beta = 10.0
//! gamma = 0.9
//!
//! [ensemble]
//! n_particles = 500
//! seed = 7
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use jdoc_core::adjoint::VarianceProfile;
use jdoc_core::{
    CostKind, CostSpec, DesiredTrajectory, Dynamics, DynamicsKind, JumpParams, OptimizerConfig, PhaseGrid, PhaseState,
};
use serde::{Deserialize, Serialize};

use crate::sampling::{InitialLaw, MixtureComponent};
use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    CenteringGaussian,
    CenteringUniform,
    Stabilization,
    Trajectory,
    Coupled,
    TrajectoryFree,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Self::CenteringGaussian,
        Self::CenteringUniform,
        Self::Stabilization,
        Self::Trajectory,
        Self::Coupled,
        Self::TrajectoryFree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::CenteringGaussian => "centering-gaussian",
            Self::CenteringUniform => "centering-uniform",
            Self::Stabilization => "stabilization",
            Self::Trajectory => "trajectory",
            Self::Coupled => "coupled",
            Self::TrajectoryFree => "trajectory-free",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum AdjointMode {
    Exact,
    /// Surrogate samples around the desired trajectory. Without an explicit
    /// profile the variance is fitted to an uncontrolled ensemble.
    Surrogate { variance: Option<VarianceProfile> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub trajectories: bool,
    pub adjoint: bool,
    pub dump_particles: usize,
}

/// Fully resolved, validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub grid: PhaseGrid,
    pub eps_phi: f64,
    pub t_final: f64,
    pub n_t_u: usize,
    pub dynamics: Dynamics,
    pub jump: JumpParams,
    pub cost: CostSpec,
    pub n_particles: usize,
    pub seed: u64,
    pub initial: InitialLaw,
    pub optimizer: OptimizerConfig,
    pub adjoint: AdjointMode,
    /// Control to start from; required by `stabilization`.
    pub control_input: Option<PathBuf>,
    pub output: OutputConfig,
}

macro_rules! section {
    ($name:ident { $($field:ident : $ty:ty),* $(,)? }) => {
        #[derive(Debug, Clone, Default, Deserialize)]
        #[serde(deny_unknown_fields)]
        struct $name {
            $($field: Option<$ty>),*
        }

        impl $name {
            fn over(self, base: Self) -> Self {
                Self { $($field: self.$field.or(base.$field)),* }
            }
        }
    };
}

section!(RawGrid { x_max: f64, v_max: f64, n_x: usize, n_v: usize, eps_phi: f64 });
section!(RawTime { t_final: f64, n_t_u: usize });
section!(RawDynamics { kind: String, eta: f64, omega: f64, b1: f64, b2: f64 });
section!(RawJump { beta: f64, gamma: f64 });
section!(RawCost { kind: String, sigma: f64, alpha: f64, a_x: f64, a_v: f64, desired: RawDesired });
section!(RawEnsemble { n_particles: usize, seed: u64 });
section!(RawOptimizer { zeta0: f64, rho: f64, c_armijo: f64, max_backtracks: usize, tol: f64, max_iter: usize });
section!(RawAdjoint { mode: String, variance_intercept: f64, variance_slope: f64 });
section!(RawControl { input: PathBuf });
section!(RawOutput { dir: PathBuf, trajectories: bool, adjoint: bool, dump_particles: usize });

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RawDesired {
    Constant { x: f64, v: f64 },
    /// The piecewise-linear path across the box used by the tracking runs.
    Ramp,
    Tabulated { times: Vec<f64>, states: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<Experiment>,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    time: RawTime,
    #[serde(default)]
    dynamics: RawDynamics,
    #[serde(default)]
    jump: RawJump,
    #[serde(default)]
    cost: RawCost,
    #[serde(default)]
    ensemble: RawEnsemble,
    initial: Option<InitialLaw>,
    #[serde(default)]
    optimizer: RawOptimizer,
    #[serde(default)]
    adjoint: RawAdjoint,
    #[serde(default)]
    control: RawControl,
    #[serde(default)]
    output: RawOutput,
}

impl RawConfig {
    fn over(self, base: Self) -> Self {
        Self {
            experiment: self.experiment.or(base.experiment),
            grid: self.grid.over(base.grid),
            time: self.time.over(base.time),
            dynamics: self.dynamics.over(base.dynamics),
            jump: self.jump.over(base.jump),
            cost: self.cost.over(base.cost),
            ensemble: self.ensemble.over(base.ensemble),
            initial: self.initial.or(base.initial),
            optimizer: self.optimizer.over(base.optimizer),
            adjoint: self.adjoint.over(base.adjoint),
            control: self.control.over(base.control),
            output: self.output.over(base.output),
        }
    }
}

/// Preset values for `experiment`. Jump parameters are deliberately absent.
fn preset(experiment: Experiment) -> RawConfig {
    let mut raw = RawConfig {
        experiment: Some(experiment),
        grid: RawGrid {
            x_max: Some(2.0),
            v_max: Some(2.0),
            n_x: Some(10),
            n_v: Some(10),
            eps_phi: Some(0.5),
        },
        time: RawTime {
            t_final: Some(5.0),
            n_t_u: Some(50),
        },
        dynamics: RawDynamics {
            kind: Some("harmonic".into()),
            eta: Some(1.0),
            omega: Some(0.0),
            b1: Some(0.1),
            b2: Some(0.1),
        },
        jump: RawJump::default(),
        cost: RawCost {
            kind: Some("tracking".into()),
            sigma: Some(0.5),
            alpha: Some(1e-3),
            a_x: None,
            a_v: None,
            desired: Some(RawDesired::Constant { x: 0.0, v: 0.0 }),
        },
        ensemble: RawEnsemble {
            n_particles: Some(2000),
            seed: Some(0),
        },
        initial: Some(InitialLaw::Gaussian {
            mean: [0.75, 0.75],
            var: 0.01,
        }),
        optimizer: RawOptimizer {
            zeta0: Some(100.0),
            rho: Some(0.5),
            c_armijo: Some(1e-4),
            max_backtracks: Some(30),
            tol: Some(1e-6),
            max_iter: Some(50),
        },
        adjoint: RawAdjoint {
            mode: Some("exact".into()),
            variance_intercept: None,
            variance_slope: None,
        },
        control: RawControl::default(),
        output: RawOutput {
            dir: None,
            trajectories: Some(false),
            adjoint: Some(false),
            dump_particles: Some(20),
        },
    };
    match experiment {
        Experiment::CenteringGaussian => {}
        Experiment::CenteringUniform => {
            raw.initial = Some(InitialLaw::Uniform {
                low: [-1.0, -1.0],
                high: [1.0, 1.0],
            });
        }
        Experiment::Stabilization => {
            raw.initial = Some(stabilization_law());
            raw.optimizer.max_iter = Some(0);
        }
        Experiment::Trajectory | Experiment::TrajectoryFree => {
            raw.dynamics.eta = Some(0.0);
            raw.grid.eps_phi = Some(0.1);
            raw.cost.desired = Some(RawDesired::Ramp);
            raw.initial = Some(InitialLaw::Gaussian {
                mean: [-1.0, 1.0],
                var: 0.01,
            });
            if experiment == Experiment::TrajectoryFree {
                raw.adjoint.mode = Some("surrogate".into());
            }
        }
        Experiment::Coupled => {
            let (a_x, a_v) = (1.5, 1.7071067811865475);
            raw.dynamics.kind = Some("coupled".into());
            raw.dynamics.omega = Some(0.5);
            raw.cost.kind = Some("ellipse".into());
            raw.cost.a_x = Some(a_x);
            raw.cost.a_v = Some(a_v);
            raw.cost.desired = None;
            raw.ensemble.n_particles = Some(100);
            raw.initial = Some(InitialLaw::Ellipse { a_x, a_v });
        }
    }
    raw
}

/// Two Gaussian modes and a uniform patch, all outside `[-1, 1]²`.
pub fn stabilization_law() -> InitialLaw {
    InitialLaw::Mixture {
        components: vec![
            MixtureComponent {
                weight: 0.35,
                law: InitialLaw::Gaussian {
                    mean: [2.5, 0.0],
                    var: 0.04,
                },
            },
            MixtureComponent {
                weight: 0.35,
                law: InitialLaw::Gaussian {
                    mean: [0.0, 2.5],
                    var: 0.04,
                },
            },
            MixtureComponent {
                weight: 0.3,
                law: InitialLaw::Uniform {
                    low: [1.5, 1.5],
                    high: [3.0, 3.0],
                },
            },
        ],
    }
}

struct Checker {
    problems: Vec<String>,
}

impl Checker {
    fn need<T: Clone>(&mut self, v: &Option<T>, path: &str) -> Option<T> {
        if v.is_none() {
            self.problems.push(format!("{path}: required"));
        }
        v.clone()
    }

    fn check(&mut self, ok: bool, path: &str, msg: impl fmt::Display) {
        if !ok {
            self.problems.push(format!("{path}: {msg}"));
        }
    }
}

fn resolve(raw: RawConfig) -> Result<RunConfig> {
    let mut c = Checker { problems: Vec::new() };
    let experiment = c.need(&raw.experiment, "experiment");

    let x_max = c.need(&raw.grid.x_max, "grid.x_max");
    let v_max = c.need(&raw.grid.v_max, "grid.v_max");
    let n_x = c.need(&raw.grid.n_x, "grid.n_x");
    let n_v = c.need(&raw.grid.n_v, "grid.n_v");
    let eps_phi = c.need(&raw.grid.eps_phi, "grid.eps_phi");
    if let Some(x) = x_max {
        c.check(x > 0.0 && x.is_finite(), "grid.x_max", format!("must be positive, got {x}"));
    }
    if let Some(v) = v_max {
        c.check(v > 0.0 && v.is_finite(), "grid.v_max", format!("must be positive, got {v}"));
    }
    if let Some(n) = n_x {
        c.check(n >= 1, "grid.n_x", "must be at least 1");
    }
    if let Some(n) = n_v {
        c.check(n >= 1, "grid.n_v", "must be at least 1");
    }
    if let Some(e) = eps_phi {
        c.check(e > 0.0 && e.is_finite(), "grid.eps_phi", format!("must be positive, got {e}"));
    }

    let t_final = c.need(&raw.time.t_final, "time.t_final");
    let n_t_u = c.need(&raw.time.n_t_u, "time.n_t_u");
    if let Some(t) = t_final {
        c.check(t > 0.0 && t.is_finite(), "time.t_final", format!("must be positive, got {t}"));
    }
    if let Some(n) = n_t_u {
        c.check(n >= 1, "time.n_t_u", "must be at least 1");
    }

    let kind = c.need(&raw.dynamics.kind, "dynamics.kind");
    let eta = c.need(&raw.dynamics.eta, "dynamics.eta");
    let b1 = c.need(&raw.dynamics.b1, "dynamics.b1");
    let b2 = c.need(&raw.dynamics.b2, "dynamics.b2");
    for (v, p) in [(b1, "dynamics.b1"), (b2, "dynamics.b2")] {
        if let Some(b) = v {
            c.check(b >= 0.0 && b.is_finite(), p, format!("must be finite and nonnegative, got {b}"));
        }
    }
    let dyn_kind = match kind.as_deref() {
        Some("harmonic") => eta.map(|eta| DynamicsKind::Harmonic { eta }),
        Some("free") => Some(DynamicsKind::Free),
        Some("coupled") => {
            let omega = c.need(&raw.dynamics.omega, "dynamics.omega");
            eta.zip(omega).map(|(eta, omega)| DynamicsKind::Coupled { eta, omega })
        }
        Some(other) => {
            c.check(false, "dynamics.kind", format!("unknown `{other}` (harmonic, free, coupled)"));
            None
        }
        None => None,
    };

    let beta = c.need(&raw.jump.beta, "jump.beta");
    let gamma = c.need(&raw.jump.gamma, "jump.gamma");
    if let Some(b) = beta {
        c.check(b > 0.0 && b.is_finite(), "jump.beta", format!("must be positive, got {b}"));
    }
    if let Some(g) = gamma {
        c.check(g.is_finite(), "jump.gamma", format!("must be finite, got {g}"));
    }

    let alpha = c.need(&raw.cost.alpha, "cost.alpha");
    if let Some(a) = alpha {
        c.check(a >= 0.0 && a.is_finite(), "cost.alpha", format!("must be nonnegative, got {a}"));
    }
    let desired = raw.cost.desired.clone().map(|d| match d {
        RawDesired::Constant { x, v } => DesiredTrajectory::Constant { x, v },
        RawDesired::Ramp => DesiredTrajectory::Ramp {
            x_max: x_max.unwrap_or(f64::NAN),
            v_max: v_max.unwrap_or(f64::NAN),
            t_final: t_final.unwrap_or(f64::NAN),
        },
        RawDesired::Tabulated { times, states } => DesiredTrajectory::Tabulated {
            times,
            states: states.into_iter().map(|s| PhaseState::new(s[0], s[1])).collect(),
        },
    });
    if let Some(d) = &desired {
        c.check(d.validate().is_ok(), "cost.desired", "malformed desired trajectory");
    }
    let cost_kind = match c.need(&raw.cost.kind, "cost.kind").as_deref() {
        Some("tracking") => {
            let sigma = c.need(&raw.cost.sigma, "cost.sigma");
            let d = c.need(&desired, "cost.desired");
            if let Some(s) = sigma {
                c.check(s > 0.0, "cost.sigma", format!("must be positive, got {s}"));
            }
            sigma.zip(d).map(|(sigma, desired)| CostKind::Tracking { sigma, desired })
        }
        Some("ellipse") => {
            let sigma = c.need(&raw.cost.sigma, "cost.sigma");
            let a_x = c.need(&raw.cost.a_x, "cost.a_x");
            let a_v = c.need(&raw.cost.a_v, "cost.a_v");
            for (v, p) in [(sigma, "cost.sigma"), (a_x, "cost.a_x"), (a_v, "cost.a_v")] {
                if let Some(v) = v {
                    c.check(v > 0.0, p, format!("must be positive, got {v}"));
                }
            }
            match (sigma, a_x, a_v) {
                (Some(sigma), Some(a_x), Some(a_v)) => Some(CostKind::Ellipse { a_x, a_v, sigma }),
                _ => None,
            }
        }
        Some("zero") => Some(CostKind::Zero),
        Some(other) => {
            c.check(false, "cost.kind", format!("unknown `{other}` (tracking, ellipse, zero)"));
            None
        }
        None => None,
    };

    let n_particles = c.need(&raw.ensemble.n_particles, "ensemble.n_particles");
    let seed = c.need(&raw.ensemble.seed, "ensemble.seed");
    if let Some(n) = n_particles {
        c.check(n >= 1, "ensemble.n_particles", "must be at least 1");
        if matches!(dyn_kind, Some(DynamicsKind::Coupled { .. })) {
            c.check(n >= 2, "ensemble.n_particles", "coupled dynamics need at least 2 particles");
        }
    }

    let initial = c.need(&raw.initial, "initial");
    if let Some(law) = &initial {
        c.problems.extend(law.problems("initial"));
    }

    let o = &raw.optimizer;
    let optimizer = OptimizerConfig {
        zeta0: c.need(&o.zeta0, "optimizer.zeta0").unwrap_or(1.0),
        rho: c.need(&o.rho, "optimizer.rho").unwrap_or(0.5),
        c_armijo: c.need(&o.c_armijo, "optimizer.c_armijo").unwrap_or(1e-4),
        max_backtracks: c.need(&o.max_backtracks, "optimizer.max_backtracks").unwrap_or(0),
        tol: c.need(&o.tol, "optimizer.tol").unwrap_or(0.0),
        max_iter: c.need(&o.max_iter, "optimizer.max_iter").unwrap_or(0),
    };
    c.check(optimizer.zeta0 > 0.0 && optimizer.zeta0.is_finite(), "optimizer.zeta0", "must be positive");
    c.check(optimizer.rho > 0.0 && optimizer.rho < 1.0, "optimizer.rho", "must lie in (0, 1)");
    c.check(
        optimizer.c_armijo > 0.0 && optimizer.c_armijo < 1.0,
        "optimizer.c_armijo",
        "must lie in (0, 1)",
    );
    c.check(optimizer.tol >= 0.0, "optimizer.tol", "must be nonnegative");

    let adjoint = match c.need(&raw.adjoint.mode, "adjoint.mode").as_deref() {
        Some("exact") => AdjointMode::Exact,
        Some("surrogate") => {
            if desired.is_none() {
                c.check(false, "cost.desired", "surrogate adjoint needs a desired trajectory");
            }
            let variance = match (raw.adjoint.variance_intercept, raw.adjoint.variance_slope) {
                (None, None) => None,
                (i, s) => Some(VarianceProfile {
                    intercept: i.unwrap_or(0.0),
                    slope: s.unwrap_or(0.0),
                }),
            };
            if let Some(v) = variance {
                c.check(v.intercept >= 0.0, "adjoint.variance_intercept", "must be nonnegative");
                c.check(v.slope >= 0.0, "adjoint.variance_slope", "must be nonnegative");
            }
            AdjointMode::Surrogate { variance }
        }
        Some(other) => {
            c.check(false, "adjoint.mode", format!("unknown `{other}` (exact, surrogate)"));
            AdjointMode::Exact
        }
        None => AdjointMode::Exact,
    };

    if experiment == Some(Experiment::Stabilization) {
        c.need(&raw.control.input, "control.input");
        c.check(
            raw.optimizer.max_iter == Some(0),
            "optimizer.max_iter",
            "stabilization runs no optimizer iterations",
        );
    }

    if !c.problems.is_empty() {
        return Err(HarnessError::Config(c.problems.join("\n  ")));
    }

    let wrap = |e: jdoc_core::Error| HarnessError::Config(e.to_string());
    let grid = PhaseGrid::new(x_max.unwrap(), v_max.unwrap(), n_x.unwrap(), n_v.unwrap()).map_err(wrap)?;
    let dynamics = Dynamics::new(dyn_kind.unwrap(), b1.unwrap(), b2.unwrap()).map_err(wrap)?;
    let jump = JumpParams::new(gamma.unwrap(), beta.unwrap()).map_err(wrap)?;
    let cost = CostSpec {
        kind: cost_kind.unwrap(),
        alpha: alpha.unwrap(),
    };
    cost.validate().map_err(wrap)?;
    Ok(RunConfig {
        experiment: experiment.unwrap(),
        grid,
        eps_phi: eps_phi.unwrap(),
        t_final: t_final.unwrap(),
        n_t_u: n_t_u.unwrap(),
        dynamics,
        jump,
        cost,
        n_particles: n_particles.unwrap(),
        seed: seed.unwrap(),
        initial: initial.unwrap(),
        optimizer,
        adjoint,
        control_input: raw.control.input,
        output: OutputConfig {
            dir: raw.output.dir,
            trajectories: raw.output.trajectories.unwrap_or(false),
            adjoint: raw.output.adjoint.unwrap_or(false),
            dump_particles: raw.output.dump_particles.unwrap_or(20),
        },
    })
}

/// Parses a configuration from text. `experiment` overrides the file's
/// `experiment` key. Relative `control.input` paths are kept as written.
pub fn parse_config_str(text: &str, experiment: Option<Experiment>) -> Result<RunConfig> {
    let mut user: RawConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    if experiment.is_some() {
        user.experiment = experiment;
    }
    let Some(exp) = user.experiment else {
        return Err(HarnessError::Config("experiment: required".into()));
    };
    resolve(user.over(preset(exp)))
}

/// Reads and validates a configuration file. A relative `control.input` is
/// resolved against the file's directory.
pub fn parse_config(path: &Path, experiment: Option<Experiment>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut cfg = parse_config_str(&text, experiment)?;
    if let (Some(input), Some(dir)) = (&cfg.control_input, path.parent()) {
        if input.is_relative() {
            cfg.control_input = Some(dir.join(input));
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const JUMP: &str = "[jump]\nbeta = 10.0\ngamma = 0.9\n";

    fn parse(extra: &str, exp: &str) -> Result<RunConfig> {
        parse_config_str(&format!("experiment = \"{exp}\"\n{JUMP}{extra}"), None)
    }

    #[test]
    fn missing_beta_is_named() {
        let err = parse_config_str("experiment = \"coupled\"\n[jump]\ngamma = 0.9\n", None).unwrap_err();
        assert!(err.to_string().contains("jump.beta"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn centering_gaussian_defaults() {
        let cfg = parse("", "centering-gaussian").unwrap();
        assert_eq!(cfg.dynamics.kind, DynamicsKind::Harmonic { eta: 1.0 });
        assert_eq!(cfg.cost.desired(), Some(&DesiredTrajectory::Constant { x: 0.0, v: 0.0 }));
        assert_eq!(cfg.initial, InitialLaw::Gaussian { mean: [0.75, 0.75], var: 0.01 });
        assert_eq!(cfg.jump.beta, 10.0);
        assert_eq!(cfg.n_t_u, 50);
        assert_eq!(cfg.t_final, 5.0);
        assert_eq!(cfg.grid.len(), 100);
    }

    #[test]
    fn trajectory_defaults() {
        let cfg = parse("", "trajectory").unwrap();
        assert_eq!(cfg.dynamics.kind, DynamicsKind::Harmonic { eta: 0.0 });
        assert_eq!(cfg.eps_phi, 0.1);
        let d = cfg.cost.desired().unwrap();
        assert_eq!(d.at(0.0), PhaseState::new(-1.0, 1.0));
        assert_eq!(d.at(5.0), PhaseState::new(1.0, 0.0));
    }

    #[test]
    fn coupled_defaults() {
        let cfg = parse("", "coupled").unwrap();
        assert_eq!(cfg.dynamics.kind, DynamicsKind::Coupled { eta: 1.0, omega: 0.5 });
        assert_eq!(
            cfg.cost.kind,
            CostKind::Ellipse {
                a_x: 1.5,
                a_v: 1.7071067811865475,
                sigma: 0.5
            }
        );
    }

    #[test]
    fn uniform_and_surrogate_defaults() {
        let cfg = parse("", "centering-uniform").unwrap();
        assert_eq!(cfg.initial, InitialLaw::Uniform { low: [-1.0, -1.0], high: [1.0, 1.0] });
        let cfg = parse("", "trajectory-free").unwrap();
        assert_eq!(cfg.adjoint, AdjointMode::Surrogate { variance: None });
    }

    #[test]
    fn overrides_and_cli_experiment() {
        let cfg = parse("[ensemble]\nn_particles = 50\n[time]\nn_t_u = 20\n", "centering-gaussian").unwrap();
        assert_eq!(cfg.n_particles, 50);
        assert_eq!(cfg.n_t_u, 20);
        assert_eq!(cfg.seed, 0);
        let cfg = parse_config_str(
            &format!("experiment = \"coupled\"\n{JUMP}"),
            Some(Experiment::Trajectory),
        )
        .unwrap();
        assert_eq!(cfg.experiment, Experiment::Trajectory);
    }

    #[test]
    fn every_problem_is_listed() {
        let err = parse("[grid]\nx_max = -1.0\n[optimizer]\nrho = 2.0\n", "centering-gaussian").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("grid.x_max") && msg.contains("optimizer.rho"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse("[grid]\nxmax = 1.0\n", "centering-gaussian").unwrap_err();
        assert!(err.to_string().contains("xmax"), "{err}");
    }

    #[test]
    fn stabilization_needs_control() {
        let err = parse("", "stabilization").unwrap_err();
        assert!(err.to_string().contains("control.input"));
        let cfg = parse("[control]\ninput = \"c.csv\"\n", "stabilization").unwrap();
        assert_eq!(cfg.optimizer.max_iter, 0);
    }

    #[test]
    fn initial_law_table() {
        let cfg = parse(
            "[initial]\nlaw = \"mixture\"\n[[initial.components]]\nweight = 1.0\nlaw = \"gaussian\"\nmean = [2.0, 0.0]\nvar = 0.1\n",
            "stabilization",
        );
        assert!(cfg.is_err());
        let cfg = parse(
            "[control]\ninput = \"c.csv\"\n[initial]\nlaw = \"mixture\"\n[[initial.components]]\nweight = 1.0\nlaw = \"gaussian\"\nmean = [2.0, 0.0]\nvar = 0.1\n",
            "stabilization",
        )
        .unwrap();
        assert!(matches!(cfg.initial, InitialLaw::Mixture { .. }));
    }
}
