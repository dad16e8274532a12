//! Monte Carlo optimal control of jump-diffusion particle systems.
//!
//! Particles live in a two-dimensional phase space `(x, v)`. Between jumps
//! they follow a controlled Langevin-type SDE integrated with Euler–Maruyama;
//! at exponentially distributed times their velocity is redrawn from a
//! Keilson–Storer kernel. The control is a feedback-like field
//! `u(x, v, t) = Σ_ℓ μ_ℓ(t) φ_ℓ(x, v)` built from compactly supported bump
//! functions centred on a phase-space grid, with `μ` piecewise constant on a
//! uniform time grid.
//!
//! The reduced gradient of the Monte Carlo objective with respect to `μ` is
//! obtained from the exact discrete adjoint of the forward scheme, and the
//! coefficients are optimised with stochastic gradient descent plus an Armijo
//! linesearch on a frozen noise realization.
//!
//! Module map:
//!
//! - [`grid`]: phase-space box and RBF centres.
//! - [`control`]: bump functions, basis evaluation, the control field.
//! - [`jump`]: jump frequency, jump-time schedules, the jump map.
//! - [`forward`]: union time grids, dynamics, Euler–Maruyama, ensembles.
//! - [`objective`]: running costs, their gradients, the discrete objective.
//! - [`adjoint`]: backward sweep with jump transmission.
//! - [`optimizer`]: gradient assembly, Armijo search, the SGD loop.

pub mod adjoint;
pub mod control;
pub mod error;
pub mod forward;
pub mod grid;
pub mod jump;
pub mod objective;
pub mod optimizer;
pub mod streams;

pub use adjoint::{AdjointPath, AdjointSource, VarianceProfile};
pub use control::{BasisEval, CoeffArray, ControlEval, ControlField};
pub use error::{Error, Result};
pub use forward::{
    Dynamics, DynamicsKind, EnsembleSetup, InitialSampler, Nonlinearity, ParticleNoise,
    PhaseState, Realization, TimeGrid, TrajectoryRecord,
};
pub use grid::PhaseGrid;
pub use jump::{JumpParams, JumpSchedule};
pub use objective::{CostKind, CostSpec, DesiredTrajectory};
pub use optimizer::{IterationReport, OptimizerConfig, Problem};
