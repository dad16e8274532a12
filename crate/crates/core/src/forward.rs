//! Forward simulation of the controlled jump-diffusion.
//!
//! Each particle integrates on its own union grid: the uniform control nodes
//! `κ·Δτ` merged with its sampled jump times. On every sub-step the state is
//! advanced with Euler–Maruyama; when the step lands on a jump node the jump
//! map is applied to the advanced state. Brownian increments are drawn per
//! sub-step with variance equal to its length and kept for the adjoint.

use std::fmt::Debug;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::jump::{self, apply_jump, JumpParams, JumpSchedule};
use crate::streams::{stream, Purpose};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub x: f64,
    pub v: f64,
}

impl PhaseState {
    pub fn new(x: f64, v: f64) -> Self {
        Self { x, v }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.v.is_finite()
    }
}

/// Relative tolerance (times `T`) under which a jump time is merged into an
/// existing node.
pub const MERGE_TOL: f64 = 1e-12;

/// Per-particle union of the uniform control grid and jump times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    jump_counts: Vec<u32>,
    uniform_nodes: Vec<usize>,
    interval_of: Vec<usize>,
    t_final: f64,
}

impl TimeGrid {
    pub fn uniform(t_final: f64, n_t_u: usize) -> Result<Self> {
        build_time_grid(t_final, n_t_u, &JumpSchedule::empty())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn step_size(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    pub fn step_sizes(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn is_jump(&self, k: usize) -> bool {
        self.jump_counts[k] > 0
    }

    /// Jumps landing on node `k`; more than one only if jump times coincide
    /// within the merge tolerance.
    pub fn jump_count(&self, k: usize) -> u32 {
        self.jump_counts[k]
    }

    pub fn jump_flags(&self) -> Vec<bool> {
        self.jump_counts.iter().map(|&c| c > 0).collect()
    }

    /// Node indices of `τ^0, …, τ^{N_t^u}`.
    pub fn uniform_nodes(&self) -> &[usize] {
        &self.uniform_nodes
    }

    /// Control interval in effect on the step leaving node `k`.
    pub fn interval_of(&self, k: usize) -> usize {
        self.interval_of[k]
    }

    pub fn n_intervals(&self) -> usize {
        self.uniform_nodes.len() - 1
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn dtau(&self) -> f64 {
        self.t_final / self.n_intervals() as f64
    }

    /// Index of the greatest node `≤ t`.
    pub fn node_at(&self, t: f64) -> usize {
        match self.nodes.partition_point(|&n| n <= t) {
            0 => 0,
            p => p - 1,
        }
    }
}

pub fn build_time_grid(t_final: f64, n_t_u: usize, schedule: &JumpSchedule) -> Result<TimeGrid> {
    build_time_grid_with_extra(t_final, n_t_u, schedule, &[])
}

/// As [`build_time_grid`], additionally inserting the non-jump nodes
/// `extra`. Coupled ensembles use this to put every particle on the same
/// node set.
pub fn build_time_grid_with_extra(
    t_final: f64,
    n_t_u: usize,
    schedule: &JumpSchedule,
    extra: &[f64],
) -> Result<TimeGrid> {
    if n_t_u < 1 {
        return Err(Error::invalid("need at least one control interval"));
    }
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::invalid(format!("t_final must be positive, got {t_final}")));
    }
    let dtau = t_final / n_t_u as f64;
    let tol = MERGE_TOL * t_final;

    struct Event {
        t: f64,
        jumps: u32,
        uniform: Option<usize>,
    }
    let mut events: Vec<Event> = (0..=n_t_u)
        .map(|k| Event {
            t: if k == n_t_u { t_final } else { k as f64 * dtau },
            jumps: 0,
            uniform: Some(k),
        })
        .collect();
    for &t in schedule.times() {
        if !(0.0..=t_final + tol).contains(&t) {
            return Err(Error::invalid(format!("jump time {t} outside (0, {t_final}]")));
        }
        events.push(Event { t, jumps: 1, uniform: None });
    }
    for &t in extra {
        if (0.0..=t_final).contains(&t) {
            events.push(Event { t, jumps: 0, uniform: None });
        }
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));

    let mut nodes: Vec<f64> = Vec::with_capacity(events.len());
    let mut jump_counts: Vec<u32> = Vec::with_capacity(events.len());
    let mut uniform_nodes = vec![usize::MAX; n_t_u + 1];
    let mut is_uniform: Vec<bool> = Vec::with_capacity(events.len());
    for ev in events {
        let merge = nodes.last().is_some_and(|&last| ev.t - last <= tol);
        if merge {
            let k = nodes.len() - 1;
            jump_counts[k] += ev.jumps;
            if let Some(u) = ev.uniform {
                // uniform nodes keep their exact time
                nodes[k] = ev.t;
                is_uniform[k] = true;
                uniform_nodes[u] = k;
            }
        } else {
            if let Some(u) = ev.uniform {
                uniform_nodes[u] = nodes.len();
            }
            nodes.push(ev.t);
            jump_counts.push(ev.jumps);
            is_uniform.push(ev.uniform.is_some());
        }
    }
    debug_assert!(uniform_nodes.iter().all(|&k| k != usize::MAX));

    let mut interval_of = Vec::with_capacity(nodes.len());
    let mut current = 0usize;
    for k in 0..nodes.len() {
        if is_uniform[k] {
            current = uniform_nodes.iter().position(|&u| u == k).unwrap_or(current);
        }
        interval_of.push(current.min(n_t_u - 1));
    }

    Ok(TimeGrid {
        nodes,
        jump_counts,
        uniform_nodes,
        interval_of,
        t_final,
    })
}

/// Smooth state-dependent addition to the drift, `h(z, t)`, with its
/// Jacobian for the adjoint.
pub trait Nonlinearity: Send + Sync + Debug {
    /// Contribution `(h_x, h_v)` to `(dx/dt, dv/dt)`.
    fn value(&self, x: f64, v: f64, t: f64) -> (f64, f64);

    /// `[[∂h_x/∂x, ∂h_x/∂v], [∂h_v/∂x, ∂h_v/∂v]]`.
    fn jacobian(&self, x: f64, v: f64, t: f64) -> [[f64; 2]; 2];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DynamicsKind {
    /// `dv/dt = u - η x`.
    Harmonic { eta: f64 },
    /// `dv/dt = u`.
    Free,
    /// Harmonic plus nearest-neighbour springs on a ring:
    /// `dv_i/dt = u - η x_i - ω (2 x_i - Σ_{n ∈ nbr(i)} x_n)`.
    Coupled { eta: f64, omega: f64 },
}

#[derive(Debug, Clone)]
pub struct Dynamics {
    pub kind: DynamicsKind,
    pub b1: f64,
    pub b2: f64,
    pub nonlinearity: Option<Arc<dyn Nonlinearity>>,
}

impl Dynamics {
    pub fn new(kind: DynamicsKind, b1: f64, b2: f64) -> Result<Self> {
        let d = Self {
            kind,
            b1,
            b2,
            nonlinearity: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_nonlinearity(mut self, h: Arc<dyn Nonlinearity>) -> Self {
        self.nonlinearity = Some(h);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b1 >= 0.0 && self.b1.is_finite() && self.b2 >= 0.0 && self.b2.is_finite()) {
            return Err(Error::invalid("diffusion coefficients must be finite and nonnegative"));
        }
        let finite = match self.kind {
            DynamicsKind::Harmonic { eta } => eta.is_finite(),
            DynamicsKind::Free => true,
            DynamicsKind::Coupled { eta, omega } => eta.is_finite() && omega.is_finite(),
        };
        if !finite {
            return Err(Error::invalid("dynamics coefficients must be finite"));
        }
        Ok(())
    }

    pub fn is_coupled(&self) -> bool {
        matches!(self.kind, DynamicsKind::Coupled { .. })
    }

    fn eta(&self) -> f64 {
        match self.kind {
            DynamicsKind::Harmonic { eta } | DynamicsKind::Coupled { eta, .. } => eta,
            DynamicsKind::Free => 0.0,
        }
    }

    /// Spring constant to each neighbour; zero when uncoupled.
    pub fn coupling(&self) -> f64 {
        match self.kind {
            DynamicsKind::Coupled { omega, .. } => omega,
            _ => 0.0,
        }
    }

    /// `(dx/dt, dv/dt)` for particle `j`. Coupled dynamics need
    /// `ensemble = Some((positions, j))`.
    pub fn drift(
        &self,
        state: PhaseState,
        u: f64,
        t: f64,
        ensemble: Option<(&[f64], usize)>,
    ) -> Result<(f64, f64)> {
        let mut dv = u - self.eta() * state.x;
        if let DynamicsKind::Coupled { omega, .. } = self.kind {
            let (positions, j) = ensemble.ok_or(Error::MissingEnsemble)?;
            let n = positions.len();
            if n < 2 || j >= n {
                return Err(Error::invalid(format!(
                    "coupled dynamics need at least 2 particles and a valid index, got j = {j}, n = {n}"
                )));
            }
            let (count, sum) = ring_neighbours(j, n).fold((0usize, 0.0), |(c, s), m| (c + 1, s + positions[m]));
            debug_assert!(count >= 1);
            dv -= omega * (2.0 * state.x - sum);
        }
        let mut dx = state.v;
        if let Some(h) = &self.nonlinearity {
            let (hx, hv) = h.value(state.x, state.v, t);
            dx += hx;
            dv += hv;
        }
        Ok((dx, dv))
    }

    /// Jacobian of the drift with respect to the particle's own `(x, v)`,
    /// excluding the control: `[[∂ẋ/∂x, ∂ẋ/∂v], [∂v̇/∂x, ∂v̇/∂v]]`.
    /// Cross-particle coupling entries are `+ω` for each ring neighbour.
    pub fn drift_jacobian(&self, state: PhaseState, t: f64) -> [[f64; 2]; 2] {
        let mut jac = [[0.0, 1.0], [-self.eta() - 2.0 * self.coupling(), 0.0]];
        if let Some(h) = &self.nonlinearity {
            let hj = h.jacobian(state.x, state.v, t);
            for r in 0..2 {
                for c in 0..2 {
                    jac[r][c] += hj[r][c];
                }
            }
        }
        jac
    }
}

/// Neighbours on a ring of `n` particles. With `n = 2` each particle has a
/// single neighbour; with `n = 3` every other particle is a neighbour.
pub fn ring_neighbours(j: usize, n: usize) -> impl Iterator<Item = usize> {
    let (a, b) = match n {
        0 | 1 => (None, None),
        2 => (Some(1 - j), None),
        _ => (Some((j + n - 1) % n), Some((j + 1) % n)),
    };
    a.into_iter().chain(b)
}

pub fn drift(
    dynamics: &Dynamics,
    state: PhaseState,
    u: f64,
    t: f64,
    ensemble: Option<(&[f64], usize)>,
) -> Result<(f64, f64)> {
    dynamics.drift(state, u, t, ensemble)
}

/// One Euler–Maruyama step over `[t, t + dt]` with increments `db`.
pub fn euler_maruyama_step(
    dynamics: &Dynamics,
    state: PhaseState,
    u: f64,
    t: f64,
    dt: f64,
    db: [f64; 2],
    ensemble: Option<(&[f64], usize)>,
) -> Result<PhaseState> {
    let (dx, dv) = dynamics.drift(state, u, t, ensemble)?;
    Ok(PhaseState {
        x: state.x + dt * dx + dynamics.b1 * db[0],
        v: state.v + dt * dv + dynamics.b2 * db[1],
    })
}

/// Forward path of one particle on its union grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub grid: Arc<TimeGrid>,
    pub states: Vec<PhaseState>,
    pub increments: Arc<Vec<[f64; 2]>>,
    pub schedule: Arc<JumpSchedule>,
}

impl TrajectoryRecord {
    /// Piecewise-constant evaluation: the state at the greatest node `≤ t`.
    pub fn state_at(&self, t: f64) -> PhaseState {
        self.states[self.grid.node_at(t)]
    }

    /// State at the uniform node `τ^κ`.
    pub fn uniform_state(&self, kappa: usize) -> PhaseState {
        self.states[self.grid.uniform_nodes()[kappa]]
    }

    pub fn final_state(&self) -> PhaseState {
        *self.states.last().expect("nonempty trajectory")
    }
}

/// Everything random about one particle in one realization. The forward
/// map is deterministic given this and the control.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleNoise {
    pub initial: PhaseState,
    pub grid: Arc<TimeGrid>,
    pub schedule: Arc<JumpSchedule>,
    pub increments: Arc<Vec<[f64; 2]>>,
}

impl ParticleNoise {
    pub fn new(
        initial: PhaseState,
        grid: TimeGrid,
        schedule: JumpSchedule,
        increments: Vec<[f64; 2]>,
    ) -> Result<Self> {
        if increments.len() != grid.n_steps() {
            return Err(Error::Misaligned(format!(
                "{} increments for {} steps",
                increments.len(),
                grid.n_steps()
            )));
        }
        let jumps: u32 = (0..grid.len()).map(|k| grid.jump_count(k)).sum();
        if jumps as usize != schedule.len() {
            return Err(Error::Misaligned(format!(
                "grid has {jumps} jump nodes but the schedule has {} jumps",
                schedule.len()
            )));
        }
        Ok(Self {
            initial,
            grid: Arc::new(grid),
            schedule: Arc::new(schedule),
            increments: Arc::new(increments),
        })
    }

    /// The same Brownian path on the coarser grid with `n_t_u` control
    /// intervals: each coarse increment is the sum of the fine increments it
    /// spans. The fine node set must contain the coarse one.
    pub fn coarsen(&self, n_t_u: usize) -> Result<Self> {
        let fine = &*self.grid;
        let coarse = build_time_grid(fine.t_final(), n_t_u, &self.schedule)?;
        let tol = MERGE_TOL * fine.t_final() * 4.0;
        let mut increments = vec![[0.0; 2]; coarse.n_steps()];
        let mut c = 0usize;
        for k in 0..fine.n_steps() {
            while c + 1 < coarse.len() && coarse.nodes()[c + 1] <= fine.nodes()[k] + tol {
                c += 1;
            }
            increments[c][0] += self.increments[k][0];
            increments[c][1] += self.increments[k][1];
        }
        for &t in coarse.nodes() {
            let k = fine.node_at(t + tol);
            if (fine.nodes()[k] - t).abs() > tol {
                return Err(Error::Misaligned(format!("coarse node {t} is not a fine node")));
            }
        }
        Self::new(self.initial, coarse, (*self.schedule).clone(), increments)
    }

    /// Draws `ΔB ~ N(0, Δt)` per component for every step of `grid`.
    pub fn draw_increments(grid: &TimeGrid, rng: &mut dyn RngCore) -> Vec<[f64; 2]> {
        (0..grid.n_steps())
            .map(|k| {
                let s = grid.step_size(k).sqrt();
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                [s * a, s * b]
            })
            .collect()
    }
}

/// Samples initial states. `index` and `n` allow deterministic layouts
/// such as equidistant points on a curve.
pub trait InitialSampler: Send + Sync + Debug {
    fn sample(&self, index: usize, n: usize, rng: &mut dyn RngCore) -> PhaseState;
}

/// Fixed initial states, cycled if fewer than the ensemble size.
#[derive(Debug, Clone)]
pub struct FixedInitial(pub Vec<PhaseState>);

impl InitialSampler for FixedInitial {
    fn sample(&self, index: usize, _n: usize, _rng: &mut dyn RngCore) -> PhaseState {
        self.0[index % self.0.len()]
    }
}

/// One sampled noise realization for the whole ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub particles: Vec<ParticleNoise>,
}

impl Realization {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

/// Static description of an ensemble run.
#[derive(Debug, Clone)]
pub struct EnsembleSetup {
    pub dynamics: Dynamics,
    pub jump: JumpParams,
    pub t_final: f64,
    pub n_t_u: usize,
    pub n_particles: usize,
    pub seed: u64,
    pub sampler: Arc<dyn InitialSampler>,
}

impl EnsembleSetup {
    pub fn validate(&self) -> Result<()> {
        self.dynamics.validate()?;
        self.jump.validate()?;
        if self.n_particles < 1 {
            return Err(Error::invalid("need at least one particle"));
        }
        if self.dynamics.is_coupled() && self.n_particles < 2 {
            return Err(Error::invalid("coupled dynamics need at least 2 particles"));
        }
        if self.n_t_u < 1 {
            return Err(Error::invalid("need at least one control interval"));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::invalid("t_final must be positive"));
        }
        Ok(())
    }

    /// Fresh initial states, jump schedules and Brownian increments for
    /// optimizer iteration `iteration`.
    pub fn sample_realization(&self, iteration: u64) -> Result<Realization> {
        self.validate()?;
        let n = self.n_particles;
        let seed = self.seed;
        let heads: Vec<(PhaseState, JumpSchedule)> = (0..n)
            .into_par_iter()
            .map(|j| {
                let initial = self
                    .sampler
                    .sample(j, n, &mut stream(seed, iteration, Purpose::Initial, j as u64));
                let schedule = jump::build_schedule(
                    &self.jump,
                    self.t_final,
                    &mut stream(seed, iteration, Purpose::Jumps, j as u64),
                )?;
                Ok((initial, schedule))
            })
            .collect::<Result<_>>()?;

        let shared: Vec<f64> = if self.dynamics.is_coupled() {
            heads.iter().flat_map(|(_, s)| s.times().iter().copied()).collect()
        } else {
            Vec::new()
        };

        let particles = heads
            .into_par_iter()
            .enumerate()
            .map(|(j, (initial, schedule))| {
                let grid = build_time_grid_with_extra(self.t_final, self.n_t_u, &schedule, &shared)?;
                let increments = ParticleNoise::draw_increments(
                    &grid,
                    &mut stream(seed, iteration, Purpose::Brownian, j as u64),
                );
                ParticleNoise::new(initial, grid, schedule, increments)
            })
            .collect::<Result<_>>()?;
        Ok(Realization { particles })
    }

    pub fn simulate(&self, control: &ControlField, realization: &Realization) -> Result<Vec<TrajectoryRecord>> {
        simulate(&self.dynamics, control, &self.jump, realization)
    }

    pub fn run_ensemble(&self, control: &ControlField, iteration: u64) -> Result<Vec<TrajectoryRecord>> {
        let realization = self.sample_realization(iteration)?;
        self.simulate(control, &realization)
    }
}

fn check_alignment(control: &ControlField, grid: &TimeGrid) -> Result<()> {
    if grid.n_intervals() != control.n_intervals() || grid.t_final() != control.t_final() {
        return Err(Error::Misaligned(format!(
            "grid has {} intervals on [0, {}], control has {} on [0, {}]",
            grid.n_intervals(),
            grid.t_final(),
            control.n_intervals(),
            control.t_final()
        )));
    }
    Ok(())
}

fn jump_noise_cursor(grid: &TimeGrid) -> Vec<usize> {
    let mut start = Vec::with_capacity(grid.len());
    let mut acc = 0usize;
    for k in 0..grid.len() {
        start.push(acc);
        acc += grid.jump_count(k) as usize;
    }
    start
}

fn apply_node_jumps(
    p: &JumpParams,
    grid: &TimeGrid,
    schedule: &JumpSchedule,
    cursor: &[usize],
    k: usize,
    mut z: PhaseState,
) -> PhaseState {
    for i in 0..grid.jump_count(k) as usize {
        let (x, v) = apply_jump(p, z.x, z.v, schedule.noises()[cursor[k] + i]);
        z = PhaseState { x, v };
    }
    z
}

/// Integrates one uncoupled particle with prescribed noise.
pub fn integrate_with_noise(
    dynamics: &Dynamics,
    control: &ControlField,
    jump: &JumpParams,
    noise: &ParticleNoise,
    particle: usize,
) -> Result<TrajectoryRecord> {
    if dynamics.is_coupled() {
        return Err(Error::MissingEnsemble);
    }
    let grid = &*noise.grid;
    check_alignment(control, grid)?;
    if !noise.initial.is_finite() {
        return Err(Error::NonFinite {
            what: "initial state",
            particle,
            t: 0.0,
        });
    }
    let cursor = jump_noise_cursor(grid);
    let mut states = Vec::with_capacity(grid.len());
    let mut z = apply_node_jumps(jump, grid, &noise.schedule, &cursor, 0, noise.initial);
    states.push(z);
    for k in 0..grid.n_steps() {
        let t = grid.nodes()[k];
        let u = control.value_in_interval(grid.interval_of(k), z.x, z.v);
        z = euler_maruyama_step(dynamics, z, u, t, grid.step_size(k), noise.increments[k], None)?;
        z = apply_node_jumps(jump, grid, &noise.schedule, &cursor, k + 1, z);
        if !z.is_finite() {
            return Err(Error::NonFinite {
                what: "state",
                particle,
                t: grid.nodes()[k + 1],
            });
        }
        states.push(z);
    }
    Ok(TrajectoryRecord {
        grid: noise.grid.clone(),
        states,
        increments: noise.increments.clone(),
        schedule: noise.schedule.clone(),
    })
}

/// Draws the Brownian increments for `grid` from `rng` and integrates.
pub fn integrate_particle(
    dynamics: &Dynamics,
    control: &ControlField,
    jump: &JumpParams,
    grid: TimeGrid,
    schedule: JumpSchedule,
    initial: PhaseState,
    rng: &mut dyn RngCore,
) -> Result<TrajectoryRecord> {
    let increments = ParticleNoise::draw_increments(&grid, rng);
    let noise = ParticleNoise::new(initial, grid, schedule, increments)?;
    integrate_with_noise(dynamics, control, jump, &noise, 0)
}

/// Integrates all particles of a realization. Uncoupled particles run in
/// parallel; coupled ensembles advance in lockstep on a shared node set.
pub fn simulate(
    dynamics: &Dynamics,
    control: &ControlField,
    jump: &JumpParams,
    realization: &Realization,
) -> Result<Vec<TrajectoryRecord>> {
    if realization.is_empty() {
        return Err(Error::invalid("empty realization"));
    }
    if dynamics.is_coupled() {
        return simulate_coupled(dynamics, control, jump, realization);
    }
    realization
        .particles
        .par_iter()
        .enumerate()
        .map(|(j, noise)| integrate_with_noise(dynamics, control, jump, noise, j))
        .collect()
}

pub(crate) fn check_shared_nodes<'a>(grids: impl Iterator<Item = &'a TimeGrid>) -> Result<()> {
    let mut first: Option<&TimeGrid> = None;
    for g in grids {
        match first {
            None => first = Some(g),
            Some(f) if f.nodes() != g.nodes() => {
                return Err(Error::Misaligned("coupled particles must share one node set".into()))
            }
            _ => {}
        }
    }
    Ok(())
}

fn simulate_coupled(
    dynamics: &Dynamics,
    control: &ControlField,
    jump: &JumpParams,
    realization: &Realization,
) -> Result<Vec<TrajectoryRecord>> {
    let parts = &realization.particles;
    let n = parts.len();
    if n < 2 {
        return Err(Error::invalid("coupled dynamics need at least 2 particles"));
    }
    check_shared_nodes(parts.iter().map(|p| &*p.grid))?;
    let grid = &*parts[0].grid;
    check_alignment(control, grid)?;
    let cursors: Vec<Vec<usize>> = parts.iter().map(|p| jump_noise_cursor(&p.grid)).collect();

    let mut z: Vec<PhaseState> = parts
        .iter()
        .zip(&cursors)
        .map(|(p, c)| apply_node_jumps(jump, &p.grid, &p.schedule, c, 0, p.initial))
        .collect();
    let mut paths: Vec<Vec<PhaseState>> = z.iter().map(|&s| {
        let mut v = Vec::with_capacity(grid.len());
        v.push(s);
        v
    }).collect();
    let mut positions = vec![0.0; n];
    for k in 0..grid.n_steps() {
        let t = grid.nodes()[k];
        let dt = grid.step_size(k);
        let interval = grid.interval_of(k);
        for (pos, s) in positions.iter_mut().zip(&z) {
            *pos = s.x;
        }
        let next: Vec<PhaseState> = (0..n)
            .into_par_iter()
            .map(|j| {
                let p = &parts[j];
                let u = control.value_in_interval(interval, z[j].x, z[j].v);
                let s = euler_maruyama_step(dynamics, z[j], u, t, dt, p.increments[k], Some((&positions, j)))?;
                let s = apply_node_jumps(jump, &p.grid, &p.schedule, &cursors[j], k + 1, s);
                if !s.is_finite() {
                    return Err(Error::NonFinite {
                        what: "state",
                        particle: j,
                        t: grid.nodes()[k + 1],
                    });
                }
                Ok(s)
            })
            .collect::<Result<_>>()?;
        z = next;
        for (path, s) in paths.iter_mut().zip(&z) {
            path.push(*s);
        }
    }
    Ok(parts
        .iter()
        .zip(paths)
        .map(|(p, states)| TrajectoryRecord {
            grid: p.grid.clone(),
            states,
            increments: p.increments.clone(),
            schedule: p.schedule.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PhaseGrid;
    use approx::assert_relative_eq;

    fn zero_control(t_final: f64, n: usize) -> ControlField {
        ControlField::zeros(PhaseGrid::new(2.0, 2.0, 4, 4).unwrap(), 0.5, t_final, n).unwrap()
    }

    fn sched(times: &[f64]) -> JumpSchedule {
        JumpSchedule::new(times.to_vec(), vec![0.0; times.len()]).unwrap()
    }

    #[test]
    fn union_grid_basic() {
        let g = build_time_grid(1.0, 2, &sched(&[0.3])).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.3, 0.5, 1.0]);
        assert_eq!(g.jump_flags(), vec![false, true, false, false]);
        assert_eq!(g.uniform_nodes(), &[0, 2, 3]);
        assert_eq!((0..4).map(|k| g.interval_of(k)).collect::<Vec<_>>(), vec![0, 0, 1, 1]);
        assert_relative_eq!(g.step_sizes()[0], 0.3);
    }

    #[test]
    fn union_grid_empty_schedule_is_uniform() {
        let g = build_time_grid(5.0, 50, &JumpSchedule::empty()).unwrap();
        assert_eq!(g.len(), 51);
        assert!(g.jump_flags().iter().all(|f| !f));
        for (k, &t) in g.nodes().iter().enumerate() {
            assert_relative_eq!(t, k as f64 * 0.1, max_relative = 1e-14);
        }
        assert_eq!(g.nodes()[50], 5.0);
    }

    #[test]
    fn union_grid_merges_coincident_jump() {
        let g = build_time_grid(1.0, 2, &sched(&[0.5])).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.5, 1.0]);
        assert_eq!(g.jump_flags(), vec![false, true, false]);
        let g = build_time_grid(1.0, 2, &sched(&[0.5 + 1e-13])).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.5, 1.0]);
        assert!(g.is_jump(1));
        let g = build_time_grid(1.0, 2, &sched(&[0.5 + 1e-9])).unwrap();
        assert_eq!(g.len(), 4);
        let g = build_time_grid(1.0, 2, &sched(&[1.0])).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.5, 1.0]);
        assert!(g.is_jump(2));
    }

    #[test]
    fn node_lookup_is_piecewise_constant() {
        let g = build_time_grid(1.0, 2, &sched(&[0.3])).unwrap();
        assert_eq!(g.node_at(0.0), 0);
        assert_eq!(g.node_at(0.29), 0);
        assert_eq!(g.node_at(0.3), 1);
        assert_eq!(g.node_at(0.7), 2);
        assert_eq!(g.node_at(1.0), 3);
    }

    #[test]
    fn drift_values() {
        let h = Dynamics::new(DynamicsKind::Harmonic { eta: 1.0 }, 0.0, 0.0).unwrap();
        assert_eq!(h.drift(PhaseState::new(1.0, 2.0), 0.0, 0.0, None).unwrap(), (2.0, -1.0));
        let f = Dynamics::new(DynamicsKind::Free, 0.0, 0.0).unwrap();
        assert_eq!(f.drift(PhaseState::new(3.0, 0.0), 0.5, 0.0, None).unwrap(), (0.0, 0.5));
        let c = Dynamics::new(DynamicsKind::Coupled { eta: 1.0, omega: 0.5 }, 0.0, 0.0).unwrap();
        let pos = [1.0, 0.0, -1.0];
        assert_eq!(c.drift(PhaseState::new(0.0, 0.7), 0.0, 0.0, Some((&pos, 1))).unwrap(), (0.7, 0.0));
        // end particle: -1·1 - 0.5·(2 - (0 + -1)) = -2.5
        assert_eq!(c.drift(PhaseState::new(1.0, 0.0), 0.0, 0.0, Some((&pos, 0))).unwrap(), (0.0, -2.5));
        assert_eq!(c.drift(PhaseState::new(1.0, 0.0), 0.0, 0.0, None), Err(Error::MissingEnsemble));
    }

    #[test]
    fn ring_topology() {
        assert_eq!(ring_neighbours(0, 2).collect::<Vec<_>>(), vec![1]);
        assert_eq!(ring_neighbours(1, 3).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(ring_neighbours(0, 5).collect::<Vec<_>>(), vec![4, 1]);
        assert_eq!(ring_neighbours(4, 5).collect::<Vec<_>>(), vec![3, 0]);
    }

    #[test]
    fn euler_step_values() {
        let h = Dynamics::new(DynamicsKind::Harmonic { eta: 1.0 }, 0.0, 0.0).unwrap();
        let s = euler_maruyama_step(&h, PhaseState::new(1.0, 2.0), 0.0, 0.0, 0.1, [0.3, -0.2], None).unwrap();
        assert_relative_eq!(s.x, 1.2, max_relative = 1e-15);
        assert_relative_eq!(s.v, 1.9, max_relative = 1e-15);
        let s0 = euler_maruyama_step(&h, PhaseState::new(1.0, 2.0), 0.4, 0.0, 0.0, [0.0, 0.0], None).unwrap();
        assert_eq!(s0, PhaseState::new(1.0, 2.0));
        let d = Dynamics::new(DynamicsKind::Free, 0.5, 2.0).unwrap();
        let s = euler_maruyama_step(&d, PhaseState::new(0.0, 0.0), 0.0, 0.0, 0.1, [0.2, 0.1], None).unwrap();
        assert_relative_eq!(s.x, 0.1);
        assert_relative_eq!(s.v, 0.2);
    }

    #[test]
    fn straight_line_motion() {
        let d = Dynamics::new(DynamicsKind::Free, 0.0, 0.0).unwrap();
        let jp = JumpParams::new(0.9, 10.0).unwrap();
        let cf = zero_control(1.0, 10);
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let noise = ParticleNoise::new(PhaseState::new(0.0, 1.0), grid, JumpSchedule::empty(), vec![[0.0; 2]; 10]).unwrap();
        let tr = integrate_with_noise(&d, &cf, &jp, &noise, 0).unwrap();
        assert_relative_eq!(tr.final_state().x, 1.0, max_relative = 1e-14);
        assert_eq!(tr.states.len(), 11);
    }

    #[test]
    fn single_jump_scales_velocity_and_keeps_position() {
        let d = Dynamics::new(DynamicsKind::Free, 0.0, 0.0).unwrap();
        let jp = JumpParams::new(0.9, 10.0).unwrap();
        let cf = zero_control(1.0, 10);
        let schedule = JumpSchedule::new(vec![0.5], vec![0.0]).unwrap();
        let grid = build_time_grid(1.0, 10, &schedule).unwrap();
        let n = grid.n_steps();
        let noise = ParticleNoise::new(PhaseState::new(0.0, 1.0), grid, schedule, vec![[0.0; 2]; n]).unwrap();
        let tr = integrate_with_noise(&d, &cf, &jp, &noise, 0).unwrap();
        assert_relative_eq!(tr.final_state().v, 0.9, max_relative = 1e-14);
        assert_relative_eq!(tr.final_state().x, 0.5 + 0.45, max_relative = 1e-12);
        let k = tr.grid.node_at(0.5);
        assert!(tr.grid.is_jump(k));
        assert_relative_eq!(tr.states[k].x, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn coarsening_sums_increments() {
        let schedule = JumpSchedule::new(vec![0.3], vec![0.1]).unwrap();
        let fine = build_time_grid(1.0, 4, &schedule).unwrap();
        let inc: Vec<[f64; 2]> = (0..fine.n_steps()).map(|k| [k as f64, 1.0]).collect();
        let noise = ParticleNoise::new(PhaseState::default(), fine, schedule, inc).unwrap();
        let c = noise.coarsen(2).unwrap();
        // fine nodes 0, .25, .3, .5, .75, 1; coarse 0, .3, .5, 1
        assert_eq!(c.grid.nodes(), &[0.0, 0.3, 0.5, 1.0]);
        assert_eq!(*c.increments, vec![[1.0, 2.0], [2.0, 1.0], [7.0, 2.0]]);
        assert!(noise.coarsen(3).is_err());
    }

    #[test]
    fn noise_alignment_is_checked() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        assert!(ParticleNoise::new(PhaseState::default(), grid.clone(), JumpSchedule::empty(), vec![[0.0; 2]; 3]).is_err());
        let s = sched(&[0.3]);
        assert!(ParticleNoise::new(PhaseState::default(), grid, s, vec![[0.0; 2]; 4]).is_err());
    }

    #[test]
    fn overflow_is_reported() {
        let d = Dynamics::new(DynamicsKind::Harmonic { eta: -1e300 }, 0.0, 0.0).unwrap();
        let jp = JumpParams::new(0.9, 10.0).unwrap();
        let cf = zero_control(1.0, 4);
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let noise = ParticleNoise::new(PhaseState::new(1e300, 0.0), grid, JumpSchedule::empty(), vec![[0.0; 2]; 4]).unwrap();
        assert!(matches!(
            integrate_with_noise(&d, &cf, &jp, &noise, 7),
            Err(Error::NonFinite { particle: 7, .. })
        ));
    }

    #[test]
    fn coupled_grids_share_nodes() {
        let d = Dynamics::new(DynamicsKind::Coupled { eta: 1.0, omega: 0.5 }, 0.1, 0.1).unwrap();
        let setup = EnsembleSetup {
            dynamics: d,
            jump: JumpParams::new(0.9, 10.0).unwrap(),
            t_final: 2.0,
            n_t_u: 10,
            n_particles: 4,
            seed: 3,
            sampler: Arc::new(FixedInitial(vec![PhaseState::new(1.0, 0.0)])),
        };
        let r = setup.sample_realization(0).unwrap();
        let total: usize = r.particles.iter().map(|p| p.schedule.len()).sum();
        for p in &r.particles {
            assert_eq!(p.grid.len(), 11 + total);
        }
        let cf = zero_control(2.0, 10);
        let tr = setup.simulate(&cf, &r).unwrap();
        assert_eq!(tr.len(), 4);
    }
}
