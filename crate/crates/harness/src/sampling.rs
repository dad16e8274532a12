//! Initial particle laws.

use jdoc_core::forward::InitialSampler;
use jdoc_core::streams::{stream, Purpose};
use jdoc_core::PhaseState;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum InitialLaw {
    /// Isotropic Gaussian with covariance `var · I`.
    Gaussian { mean: [f64; 2], var: f64 },
    /// Uniform on the box `[low, high]`.
    Uniform { low: [f64; 2], high: [f64; 2] },
    /// Weighted superposition of Gaussian and uniform components.
    Mixture { components: Vec<MixtureComponent> },
    /// Deterministic points `(a_x cos θ_j, a_v sin θ_j)`, `θ_j = 2πj/N`.
    Ellipse { a_x: f64, a_v: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    #[serde(flatten)]
    pub law: InitialLaw,
}

impl InitialLaw {
    /// Every violated constraint, prefixed with `path`.
    pub fn problems(&self, path: &str) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            Self::Gaussian { mean, var } => {
                if !(mean[0].is_finite() && mean[1].is_finite()) {
                    out.push(format!("{path}.mean: must be finite"));
                }
                if !(*var >= 0.0 && var.is_finite()) {
                    out.push(format!("{path}.var: must be finite and nonnegative, got {var}"));
                }
            }
            Self::Uniform { low, high } => {
                if !(low[0] < high[0] && low[1] < high[1]) {
                    out.push(format!("{path}: need low < high componentwise"));
                }
            }
            Self::Mixture { components } => {
                if components.is_empty() {
                    out.push(format!("{path}.components: empty"));
                }
                for (i, c) in components.iter().enumerate() {
                    let p = format!("{path}.components[{i}]");
                    if !(c.weight > 0.0 && c.weight.is_finite()) {
                        out.push(format!("{p}.weight: must be positive"));
                    }
                    match c.law {
                        Self::Gaussian { .. } | Self::Uniform { .. } => out.extend(c.law.problems(&p)),
                        _ => out.push(format!("{p}.law: mixtures take gaussian or uniform components")),
                    }
                }
            }
            Self::Ellipse { a_x, a_v } => {
                if !(*a_x > 0.0 && *a_v > 0.0) {
                    out.push(format!("{path}: ellipse axes must be positive"));
                }
            }
        }
        out
    }

    fn draw(&self, index: usize, n: usize, rng: &mut dyn RngCore) -> PhaseState {
        match self {
            Self::Gaussian { mean, var } => {
                let s = var.sqrt();
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                PhaseState::new(mean[0] + s * a, mean[1] + s * b)
            }
            Self::Uniform { low, high } => {
                let a: f64 = rng.random();
                let b: f64 = rng.random();
                PhaseState::new(low[0] + (high[0] - low[0]) * a, low[1] + (high[1] - low[1]) * b)
            }
            Self::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let pick = rng.random::<f64>() * total;
                let mut acc = 0.0;
                for c in components {
                    acc += c.weight;
                    if pick < acc {
                        return c.law.draw(index, n, rng);
                    }
                }
                components.last().expect("nonempty mixture").law.draw(index, n, rng)
            }
            Self::Ellipse { a_x, a_v } => {
                let theta = 2.0 * std::f64::consts::PI * index as f64 / n as f64;
                PhaseState::new(a_x * theta.cos(), a_v * theta.sin())
            }
        }
    }
}

impl InitialSampler for InitialLaw {
    fn sample(&self, index: usize, n: usize, rng: &mut dyn RngCore) -> PhaseState {
        self.draw(index, n, rng)
    }
}

/// The initial states an ensemble of `n` particles would start from in
/// optimizer iteration `iteration`.
pub fn sample_initial(law: &InitialLaw, n: usize, seed: u64, iteration: u64) -> Vec<PhaseState> {
    (0..n)
        .map(|j| law.draw(j, n, &mut stream(seed, iteration, Purpose::Initial, j as u64)))
        .collect()
}
