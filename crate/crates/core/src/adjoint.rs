//! Discrete adjoint of the forward scheme.
//!
//! Stored quantity is `r^k = (q, p) = -∂Ĵ_j/∂z^k` for a single particle (the
//! `1/N` is applied when the gradient is assembled). Stepping backward:
//!
//! `r^k = (I + Δt_k ∂_z a)ᵀ C_{k+1}ᵀ r^{k+1} - w_k ∇_z ℓ(z^k)`
//!
//! where `C_{k+1} = diag(1, γ)` per jump on node `k+1`, `ℓ = j + α/2 u²`, and
//! `w_k = Δτ` on uniform nodes `τ^κ`, `κ ≥ 1`, zero elsewhere. This is the
//! exact derivative of the sampled objective with respect to the states.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlEval, ControlField};
use crate::error::{Error, Result};
use crate::forward::{check_shared_nodes, ring_neighbours, Dynamics, PhaseState, TimeGrid, TrajectoryRecord};
use crate::jump::JumpParams;
use crate::objective::{cost_with_control_grad_in_interval, interval_for_uniform_node, CostSpec, DesiredTrajectory};
use crate::streams::{stream, Purpose};

/// Backward solution for one particle.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPath {
    /// `r^k = (q^k, p^k)` at every node.
    pub states: Vec<[f64; 2]>,
    /// Velocity component of `C_{k+1}ᵀ r^{k+1}`, the multiplier that pairs with
    /// the control on step `k`.
    pub step_p: Vec<f64>,
}

/// Linear-in-time variance `ς(t) = max(0, intercept + slope·t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceProfile {
    pub intercept: f64,
    pub slope: f64,
}

impl VarianceProfile {
    pub fn at(&self, t: f64) -> f64 {
        (self.intercept + self.slope * t).max(0.0)
    }

    /// Least-squares line through the mean per-component variance of the
    /// ensemble at the uniform nodes. A negative slope is replaced by the
    /// constant mean so the profile is nondecreasing.
    pub fn fit(trajectories: &[TrajectoryRecord]) -> Result<Self> {
        let first = trajectories.first().ok_or_else(|| Error::invalid("no trajectories"))?;
        let n_t_u = first.grid.n_intervals();
        let n = trajectories.len() as f64;
        let mut ts = Vec::with_capacity(n_t_u + 1);
        let mut vs = Vec::with_capacity(n_t_u + 1);
        for kappa in 0..=n_t_u {
            let (mut sx, mut sv, mut sxx, mut svv) = (0.0, 0.0, 0.0, 0.0);
            for tr in trajectories {
                let z = tr.uniform_state(kappa);
                sx += z.x;
                sv += z.v;
                sxx += z.x * z.x;
                svv += z.v * z.v;
            }
            let var_x = (sxx / n - (sx / n).powi(2)).max(0.0);
            let var_v = (svv / n - (sv / n).powi(2)).max(0.0);
            ts.push(first.grid.dtau() * kappa as f64);
            vs.push(0.5 * (var_x + var_v));
        }
        Ok(Self::least_squares(&ts, &vs))
    }

    pub fn least_squares(ts: &[f64], vs: &[f64]) -> Self {
        let m = ts.len() as f64;
        let tm = ts.iter().sum::<f64>() / m;
        let vm = vs.iter().sum::<f64>() / m;
        let stt: f64 = ts.iter().map(|t| (t - tm).powi(2)).sum();
        let stv: f64 = ts.iter().zip(vs).map(|(t, v)| (t - tm) * (v - vm)).sum();
        let slope = if stt > 0.0 { stv / stt } else { 0.0 };
        if slope < 0.0 {
            return Self {
                intercept: vm.max(0.0),
                slope: 0.0,
            };
        }
        Self {
            intercept: (vm - slope * tm).max(0.0),
            slope,
        }
    }
}

/// Where the adjoint linearizes and evaluates its source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum AdjointSource {
    /// Along the particle's own forward path.
    Exact,
    /// At states sampled from `N(z̄_d(t), ς(t) I)`, independent of the
    /// forward path.
    Surrogate {
        desired: DesiredTrajectory,
        variance: VarianceProfile,
    },
}

/// `-∇_z [j + α/2 u²]` at the final time, using the last control interval.
pub fn terminal_condition(spec: &CostSpec, control: &ControlField, z: PhaseState) -> [f64; 2] {
    let s = cost_with_control_grad_in_interval(spec, control, control.n_intervals() - 1, z, control.t_final());
    [-s[0], -s[1]]
}

/// `C_{k+1}ᵀ r` for `count` jumps on the node.
pub fn jump_transmission(p: &JumpParams, count: u32, r: [f64; 2]) -> [f64; 2] {
    [r[0], p.gamma.powi(count as i32) * r[1]]
}

/// One backward step for an uncoupled particle:
/// `(I + dt ∂_z a)ᵀ r_next - weight · source`, where `r_next` already includes
/// the jump transmission and `∂_z a` is linearized at `state`.
pub fn adjoint_step_back(
    dynamics: &Dynamics,
    control: ControlEval,
    state: PhaseState,
    t: f64,
    dt: f64,
    r_next: [f64; 2],
    weight: f64,
    source: [f64; 2],
) -> [f64; 2] {
    let jac = dynamics.drift_jacobian(state, t);
    let jvx = jac[1][0] + control.u_x;
    let jvv = jac[1][1] + control.u_v;
    let [q, p] = r_next;
    [
        q + dt * (jac[0][0] * q + jvx * p) - weight * source[0],
        p + dt * (jac[0][1] * q + jvv * p) - weight * source[1],
    ]
}

/// `Some(κ)` for nodes that are uniform control nodes.
fn uniform_index(grid: &TimeGrid) -> Vec<Option<usize>> {
    let mut out = vec![None; grid.len()];
    for (kappa, &k) in grid.uniform_nodes().iter().enumerate() {
        out[k] = Some(kappa);
    }
    out
}

/// States at which the adjoint is linearized, one per node.
fn linearization_points(source: &AdjointSource, tr: &TrajectoryRecord, rng: &mut dyn RngCore) -> Vec<PhaseState> {
    match source {
        AdjointSource::Exact => tr.states.clone(),
        AdjointSource::Surrogate { desired, variance } => tr
            .grid
            .nodes()
            .iter()
            .map(|&t| {
                let m = desired.at(t);
                let s = variance.at(t).sqrt();
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                PhaseState::new(m.x + s * a, m.v + s * b)
            })
            .collect(),
    }
}

struct NodeTerms {
    n_t_u: usize,
    dtau: f64,
    kappa: Vec<Option<usize>>,
}

impl NodeTerms {
    fn new(grid: &TimeGrid) -> Self {
        Self {
            n_t_u: grid.n_intervals(),
            dtau: grid.dtau(),
            kappa: uniform_index(grid),
        }
    }

    /// `w_k ∇ℓ(z^k)`, zero off the uniform nodes and at `t = 0`.
    fn weighted_source(&self, spec: &CostSpec, control: &ControlField, k: usize, z: PhaseState, t: f64) -> [f64; 2] {
        match self.kappa[k] {
            Some(kappa) if kappa >= 1 => {
                let s = cost_with_control_grad_in_interval(spec, control, interval_for_uniform_node(kappa, self.n_t_u), z, t);
                [self.dtau * s[0], self.dtau * s[1]]
            }
            _ => [0.0, 0.0],
        }
    }
}

fn check_finite(r: [f64; 2], particle: usize, t: f64) -> Result<()> {
    if r[0].is_finite() && r[1].is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: "adjoint",
            particle,
            t,
        })
    }
}

/// Backward solve for one uncoupled particle. `rng` is only drawn from in
/// surrogate mode.
#[allow(clippy::too_many_arguments)]
pub fn solve_adjoint(
    dynamics: &Dynamics,
    spec: &CostSpec,
    control: &ControlField,
    jump: &JumpParams,
    trajectory: &TrajectoryRecord,
    source: &AdjointSource,
    rng: &mut dyn RngCore,
    particle: usize,
) -> Result<AdjointPath> {
    if dynamics.is_coupled() {
        return Err(Error::MissingEnsemble);
    }
    let grid = &*trajectory.grid;
    let terms = NodeTerms::new(grid);
    let points = linearization_points(source, trajectory, rng);
    let n = grid.n_steps();
    let mut states = vec![[0.0; 2]; n + 1];
    let mut step_p = vec![0.0; n];

    let ws = terms.weighted_source(spec, control, n, points[n], grid.nodes()[n]);
    states[n] = [-ws[0], -ws[1]];
    check_finite(states[n], particle, grid.t_final())?;
    for k in (0..n).rev() {
        let t = grid.nodes()[k];
        let rt = jump_transmission(jump, grid.jump_count(k + 1), states[k + 1]);
        step_p[k] = rt[1];
        let z = points[k];
        let ev = control.eval_in_interval(grid.interval_of(k), z.x, z.v);
        let ws = terms.weighted_source(spec, control, k, z, t);
        states[k] = adjoint_step_back(dynamics, ev, z, t, grid.step_size(k), rt, 1.0, ws);
        check_finite(states[k], particle, t)?;
    }
    Ok(AdjointPath { states, step_p })
}

/// Backward solve for a whole ensemble. Surrogate samples come from the
/// `Surrogate` stream of `(seed, iteration)`.
#[allow(clippy::too_many_arguments)]
pub fn solve_adjoint_ensemble(
    dynamics: &Dynamics,
    spec: &CostSpec,
    control: &ControlField,
    jump: &JumpParams,
    trajectories: &[TrajectoryRecord],
    source: &AdjointSource,
    seed: u64,
    iteration: u64,
) -> Result<Vec<AdjointPath>> {
    if dynamics.is_coupled() {
        return solve_coupled(dynamics, spec, control, jump, trajectories, source, seed, iteration);
    }
    trajectories
        .par_iter()
        .enumerate()
        .map(|(j, tr)| {
            let mut rng = stream(seed, iteration, Purpose::Surrogate, j as u64);
            solve_adjoint(dynamics, spec, control, jump, tr, source, &mut rng, j)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn solve_coupled(
    dynamics: &Dynamics,
    spec: &CostSpec,
    control: &ControlField,
    jump: &JumpParams,
    trajectories: &[TrajectoryRecord],
    source: &AdjointSource,
    seed: u64,
    iteration: u64,
) -> Result<Vec<AdjointPath>> {
    let m = trajectories.len();
    if m < 2 {
        return Err(Error::invalid("coupled dynamics need at least 2 particles"));
    }
    check_shared_nodes(trajectories.iter().map(|t| &*t.grid))?;
    let grid = &*trajectories[0].grid;
    let terms = NodeTerms::new(grid);
    let omega = dynamics.coupling();
    let points: Vec<Vec<PhaseState>> = trajectories
        .iter()
        .enumerate()
        .map(|(j, tr)| linearization_points(source, tr, &mut stream(seed, iteration, Purpose::Surrogate, j as u64)))
        .collect();
    let n = grid.n_steps();
    let t_n = grid.nodes()[n];
    let mut paths: Vec<AdjointPath> = points
        .iter()
        .enumerate()
        .map(|(j, pts)| {
            let ws = terms.weighted_source(spec, control, n, pts[n], t_n);
            let mut states = vec![[0.0; 2]; n + 1];
            states[n] = [-ws[0], -ws[1]];
            check_finite(states[n], j, t_n)?;
            Ok(AdjointPath {
                states,
                step_p: vec![0.0; n],
            })
        })
        .collect::<Result<_>>()?;

    let mut rt = vec![[0.0; 2]; m];
    for k in (0..n).rev() {
        let t = grid.nodes()[k];
        let dt = grid.step_size(k);
        for (j, r) in rt.iter_mut().enumerate() {
            *r = jump_transmission(jump, trajectories[j].grid.jump_count(k + 1), paths[j].states[k + 1]);
        }
        let next: Vec<[f64; 2]> = (0..m)
            .into_par_iter()
            .map(|j| {
                let z = points[j][k];
                let ev = control.eval_in_interval(grid.interval_of(k), z.x, z.v);
                let ws = terms.weighted_source(spec, control, k, z, t);
                let mut r = adjoint_step_back(dynamics, ev, z, t, dt, rt[j], 1.0, ws);
                r[0] += dt * omega * ring_neighbours(j, m).map(|i| rt[i][1]).sum::<f64>();
                check_finite(r, j, t)?;
                Ok(r)
            })
            .collect::<Result<_>>()?;
        for (j, r) in next.into_iter().enumerate() {
            paths[j].states[k] = r;
            paths[j].step_p[k] = rt[j][1];
        }
    }
    Ok(paths)
}
