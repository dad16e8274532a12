//! Running costs and the sampled reduced objective.
//!
//! The objective is evaluated at the uniform control nodes `τ^1, …, τ^{N_t^u}`:
//!
//! `Ĵ(μ) = (1/N) Σ_j Δτ Σ_κ [ j(z_j(τ^κ), τ^κ) + α/2 · u(z_j(τ^κ), τ^κ)² ]`
//!
//! where `u` at `τ^κ` uses the coefficients of interval `min(κ, N_t^u - 1)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::forward::{PhaseState, TrajectoryRecord};

/// Target `z̄_d(t)` for tracking costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DesiredTrajectory {
    Constant { x: f64, v: f64 },
    /// `(-x_max/2 + x_max t/T, v_max/2 - |v_max t / (2T)|)`.
    Ramp { x_max: f64, v_max: f64, t_final: f64 },
    /// Piecewise-linear through `(times[i], states[i])`, constant outside.
    Tabulated { times: Vec<f64>, states: Vec<PhaseState> },
}

impl DesiredTrajectory {
    pub fn constant(x: f64, v: f64) -> Self {
        Self::Constant { x, v }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Constant { x, v } if x.is_finite() && v.is_finite() => Ok(()),
            Self::Ramp { t_final, .. } if *t_final > 0.0 => Ok(()),
            Self::Tabulated { times, states }
                if !times.is_empty()
                    && times.len() == states.len()
                    && times.windows(2).all(|w| w[0] < w[1]) =>
            {
                Ok(())
            }
            _ => Err(Error::invalid("malformed desired trajectory")),
        }
    }

    pub fn at(&self, t: f64) -> PhaseState {
        match self {
            Self::Constant { x, v } => PhaseState::new(*x, *v),
            Self::Ramp { x_max, v_max, t_final } => PhaseState::new(
                -x_max / 2.0 + x_max * t / t_final,
                -(v_max * t / (2.0 * t_final)).abs() + v_max / 2.0,
            ),
            Self::Tabulated { times, states } => {
                let p = times.partition_point(|&s| s <= t);
                if p == 0 {
                    return states[0];
                }
                if p == times.len() {
                    return states[p - 1];
                }
                let (t0, t1) = (times[p - 1], times[p]);
                let w = (t - t0) / (t1 - t0);
                let (a, b) = (states[p - 1], states[p]);
                PhaseState::new(a.x + w * (b.x - a.x), a.v + w * (b.v - a.v))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CostKind {
    /// `-exp(-|z - z̄_d(t)|² / (2σ²))`.
    Tracking { sigma: f64, desired: DesiredTrajectory },
    /// `-exp(-s² / (2σ²))` with `s = x²/A_x² + v²/A_v² - 1`.
    Ellipse { a_x: f64, a_v: f64, sigma: f64 },
    /// No state cost; only the control penalty remains.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub kind: CostKind,
    pub alpha: f64,
}

impl CostSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        match &self.kind {
            CostKind::Tracking { sigma, desired } => {
                if !(*sigma > 0.0) {
                    return Err(Error::invalid("cost sigma must be positive"));
                }
                desired.validate()
            }
            CostKind::Ellipse { a_x, a_v, sigma } => {
                if !(*a_x > 0.0 && *a_v > 0.0 && *sigma > 0.0) {
                    return Err(Error::invalid("ellipse axes and sigma must be positive"));
                }
                Ok(())
            }
            CostKind::Zero => Ok(()),
        }
    }

    /// Target state for tracking costs.
    pub fn desired(&self) -> Option<&DesiredTrajectory> {
        match &self.kind {
            CostKind::Tracking { desired, .. } => Some(desired),
            CostKind::Ellipse { .. } | CostKind::Zero => None,
        }
    }
}

pub fn running_cost(spec: &CostSpec, z: PhaseState, t: f64) -> f64 {
    match &spec.kind {
        CostKind::Tracking { sigma, desired } => {
            let d = desired.at(t);
            let r2 = (z.x - d.x).powi(2) + (z.v - d.v).powi(2);
            -(-r2 / (2.0 * sigma * sigma)).exp()
        }
        CostKind::Ellipse { a_x, a_v, sigma } => {
            let s = z.x * z.x / (a_x * a_x) + z.v * z.v / (a_v * a_v) - 1.0;
            -(-s * s / (2.0 * sigma * sigma)).exp()
        }
        CostKind::Zero => 0.0,
    }
}

/// `∇_z j(z, t)`.
pub fn running_cost_grad(spec: &CostSpec, z: PhaseState, t: f64) -> [f64; 2] {
    match &spec.kind {
        CostKind::Tracking { sigma, desired } => {
            let d = desired.at(t);
            let s2 = sigma * sigma;
            let (dx, dv) = (z.x - d.x, z.v - d.v);
            let e = (-(dx * dx + dv * dv) / (2.0 * s2)).exp();
            [dx / s2 * e, dv / s2 * e]
        }
        CostKind::Ellipse { a_x, a_v, sigma } => {
            let s2 = sigma * sigma;
            let s = z.x * z.x / (a_x * a_x) + z.v * z.v / (a_v * a_v) - 1.0;
            let f = (-s * s / (2.0 * s2)).exp() * s / s2;
            [f * 2.0 * z.x / (a_x * a_x), f * 2.0 * z.v / (a_v * a_v)]
        }
        CostKind::Zero => [0.0, 0.0],
    }
}

/// `∇_z [j + α/2 u²]` with `u` taken from control interval `interval`.
pub fn cost_with_control_grad_in_interval(
    spec: &CostSpec,
    control: &ControlField,
    interval: usize,
    z: PhaseState,
    t: f64,
) -> [f64; 2] {
    let g = running_cost_grad(spec, z, t);
    if spec.alpha == 0.0 {
        return g;
    }
    let ev = control.eval_in_interval(interval, z.x, z.v);
    let a = spec.alpha * ev.u;
    [g[0] + a * ev.u_x, g[1] + a * ev.u_v]
}

/// `∇_z [j + α/2 u²]` at time `t`.
pub fn cost_with_control_grad(spec: &CostSpec, control: &ControlField, z: PhaseState, t: f64) -> Result<[f64; 2]> {
    let interval = control.interval_at(t)?;
    Ok(cost_with_control_grad_in_interval(spec, control, interval, z, t))
}

/// Interval whose coefficients define `u` at the uniform node `τ^κ`.
pub fn interval_for_uniform_node(kappa: usize, n_t_u: usize) -> usize {
    kappa.min(n_t_u - 1)
}

/// One particle's contribution `Δτ Σ_κ [j + α/2 u²]` (not divided by N).
pub fn particle_objective(spec: &CostSpec, control: &ControlField, trajectory: &TrajectoryRecord) -> f64 {
    let n_t_u = control.n_intervals();
    let dtau = control.dtau();
    let mut acc = 0.0;
    for kappa in 1..=n_t_u {
        let z = trajectory.uniform_state(kappa);
        let t = trajectory.grid.nodes()[trajectory.grid.uniform_nodes()[kappa]];
        let u = control.value_in_interval(interval_for_uniform_node(kappa, n_t_u), z.x, z.v);
        acc += running_cost(spec, z, t) + 0.5 * spec.alpha * u * u;
    }
    dtau * acc
}

/// Sample average of [`particle_objective`]. Summation order is fixed so
/// the result does not depend on the thread count.
pub fn reduced_objective(spec: &CostSpec, control: &ControlField, trajectories: &[TrajectoryRecord]) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::invalid("no trajectories"));
    }
    let parts: Vec<f64> = trajectories
        .par_iter()
        .map(|tr| particle_objective(spec, control, tr))
        .collect();
    let value = parts.iter().sum::<f64>() / trajectories.len() as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "objective",
            particle: 0,
            t: control.t_final(),
        });
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tracking(x: f64, v: f64) -> CostSpec {
        CostSpec {
            kind: CostKind::Tracking {
                sigma: 0.5,
                desired: DesiredTrajectory::constant(x, v),
            },
            alpha: 0.1,
        }
    }

    fn ellipse() -> CostSpec {
        CostSpec {
            kind: CostKind::Ellipse {
                a_x: 1.5,
                a_v: 1.7071067811865475,
                sigma: 0.5,
            },
            alpha: 0.0,
        }
    }

    fn fd_grad(spec: &CostSpec, z: PhaseState) -> [f64; 2] {
        let h = 1e-6;
        let f = |x, v| running_cost(spec, PhaseState::new(x, v), 0.3);
        [
            (f(z.x + h, z.v) - f(z.x - h, z.v)) / (2.0 * h),
            (f(z.x, z.v + h) - f(z.x, z.v - h)) / (2.0 * h),
        ]
    }

    #[test]
    fn tracking_minimum_is_minus_one() {
        let s = tracking(0.2, -0.1);
        assert_eq!(running_cost(&s, PhaseState::new(0.2, -0.1), 0.0), -1.0);
        assert_eq!(running_cost_grad(&s, PhaseState::new(0.2, -0.1), 0.0), [0.0, 0.0]);
        // |Δ|² = 0.5, σ² = 0.25
        assert_relative_eq!(running_cost(&s, PhaseState::new(0.7, 0.4), 0.0), -(-1.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn ellipse_minimum_on_curve() {
        let s = ellipse();
        let z = PhaseState::new(1.5 * 0.6, 1.7071067811865475 * 0.8);
        assert_relative_eq!(running_cost(&s, z, 0.0), -1.0, max_relative = 1e-14);
        let g = running_cost_grad(&s, z, 0.0);
        assert!(g[0].abs() < 1e-13 && g[1].abs() < 1e-13);
        assert_relative_eq!(running_cost(&s, PhaseState::default(), 0.0), -(-2.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for z in [PhaseState::new(0.3, -0.4), PhaseState::new(-1.2, 0.9), PhaseState::new(2.0, 1.0)] {
            for spec in [tracking(0.1, 0.2), ellipse()] {
                let g = running_cost_grad(&spec, z, 0.3);
                let f = fd_grad(&spec, z);
                for c in 0..2 {
                    assert!((g[c] - f[c]).abs() < 1e-8, "{spec:?} {z:?} {g:?} {f:?}");
                }
            }
        }
    }

    #[test]
    fn ramp_endpoints() {
        let d = DesiredTrajectory::Ramp { x_max: 2.0, v_max: 2.0, t_final: 5.0 };
        assert_eq!(d.at(0.0), PhaseState::new(-1.0, 1.0));
        assert_eq!(d.at(5.0), PhaseState::new(1.0, 0.0));
        assert_eq!(d.at(2.5), PhaseState::new(0.0, 0.5));
    }

    #[test]
    fn tabulated_interpolates() {
        let d = DesiredTrajectory::Tabulated {
            times: vec![0.0, 1.0],
            states: vec![PhaseState::new(0.0, 2.0), PhaseState::new(1.0, 0.0)],
        };
        d.validate().unwrap();
        assert_eq!(d.at(0.25), PhaseState::new(0.25, 1.5));
        assert_eq!(d.at(-1.0), PhaseState::new(0.0, 2.0));
        assert_eq!(d.at(3.0), PhaseState::new(1.0, 0.0));
    }

    #[test]
    fn control_penalty_gradient_matches_fd() {
        use crate::control::CoeffArray;
        use crate::grid::PhaseGrid;
        let grid = PhaseGrid::new(2.0, 2.0, 4, 4).unwrap();
        let mu = CoeffArray::from_fn(16, 2, |l, k| ((l * 7 + k * 3) % 5) as f64 - 2.0);
        let cf = ControlField::new(grid, 0.5, 1.0, mu).unwrap();
        let spec = tracking(0.1, -0.1);
        let z = PhaseState::new(0.3, 0.2);
        let g = cost_with_control_grad(&spec, &cf, z, 0.7).unwrap();
        let f = |x: f64, v: f64| {
            let u = cf.eval_u(x, v, 0.7).unwrap().u;
            running_cost(&spec, PhaseState::new(x, v), 0.7) + 0.5 * spec.alpha * u * u
        };
        let h = 1e-6;
        let fx = (f(z.x + h, z.v) - f(z.x - h, z.v)) / (2.0 * h);
        let fv = (f(z.x, z.v + h) - f(z.x, z.v - h)) / (2.0 * h);
        assert_relative_eq!(g[0], fx, max_relative = 1e-6);
        assert_relative_eq!(g[1], fv, max_relative = 1e-6);

        let zero = ControlField::zeros(cf.grid().clone(), 0.5, 1.0, 2).unwrap();
        assert_eq!(cost_with_control_grad(&spec, &zero, z, 0.7).unwrap(), running_cost_grad(&spec, z, 0.7));
        let no_penalty = CostSpec { alpha: 0.0, ..spec.clone() };
        assert_eq!(cost_with_control_grad(&no_penalty, &cf, z, 0.7).unwrap(), running_cost_grad(&spec, z, 0.7));
    }

    #[test]
    fn validation() {
        let mut s = tracking(0.0, 0.0);
        s.alpha = -1.0;
        assert!(s.validate().is_err());
        assert!(ellipse().validate().is_ok());
    }
}
