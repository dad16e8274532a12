//! Keilson–Storer velocity jumps.
//!
//! A jump keeps the position and maps the velocity to `γ v + ς` with
//! `ς ~ N(0, 1/(2β))`. Jumps arrive as a Poisson process of rate
//! `σ = √(β/π)`.

use rand::Rng;
use rand_distr::{Distribution, Normal, Open01};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpParams {
    pub gamma: f64,
    pub beta: f64,
}

impl JumpParams {
    pub fn new(gamma: f64, beta: f64) -> Result<Self> {
        let p = Self { gamma, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must lie in [-1, 1], got {}", self.gamma)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }

    /// Jump frequency `σ = √(β/π)`.
    pub fn sigma(&self) -> f64 {
        (self.beta / std::f64::consts::PI).sqrt()
    }

    /// Standard deviation `(2β)^{-1/2}` of the post-jump noise.
    pub fn noise_std(&self) -> f64 {
        (2.0 * self.beta).sqrt().recip()
    }
}

pub fn jump_frequency(p: &JumpParams) -> Result<f64> {
    if !(p.beta > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {}", p.beta)));
    }
    Ok(p.sigma())
}

/// Inverse-transform sample of an exponential gap, `-ln(ν)/σ`.
pub fn sample_jump_gap(p: &JumpParams, nu: f64) -> Result<f64> {
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::invalid(format!("nu must lie in (0, 1), got {nu}")));
    }
    Ok(-nu.ln() / jump_frequency(p)?)
}

/// Jump times in `(0, T]` with their pre-drawn velocity noises.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JumpSchedule {
    times: Vec<f64>,
    noises: Vec<f64>,
}

impl JumpSchedule {
    pub fn new(times: Vec<f64>, noises: Vec<f64>) -> Result<Self> {
        if times.len() != noises.len() {
            return Err(Error::invalid("jump times and noises differ in length"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("jump times must be strictly increasing"));
        }
        if times.first().is_some_and(|&t| t <= 0.0) {
            return Err(Error::invalid("jump times must be positive"));
        }
        Ok(Self { times, noises })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Accumulates `gaps` until the running time exceeds `t_final`; the
    /// overshooting time is discarded. One noise is taken per kept time.
    pub fn from_gaps(
        gaps: impl IntoIterator<Item = f64>,
        t_final: f64,
        mut noises: impl FnMut() -> f64,
    ) -> Self {
        let mut times = Vec::new();
        let mut t = 0.0;
        for gap in gaps {
            t += gap;
            if t > t_final {
                break;
            }
            // A zero gap would duplicate a time; skip it.
            if gap > 0.0 {
                times.push(t);
            }
        }
        let noises = times.iter().map(|_| noises()).collect();
        Self { times, noises }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn noises(&self) -> &[f64] {
        &self.noises
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub fn build_schedule<R: Rng + ?Sized>(p: &JumpParams, t_final: f64, rng: &mut R) -> Result<JumpSchedule> {
    if !(t_final > 0.0) {
        return Err(Error::invalid(format!("t_final must be positive, got {t_final}")));
    }
    let sigma = jump_frequency(p)?;
    let mut times = Vec::new();
    let mut t = 0.0;
    loop {
        let nu: f64 = Open01.sample(rng);
        t += -nu.ln() / sigma;
        if t > t_final {
            break;
        }
        if times.last().is_none_or(|&last| t > last) {
            times.push(t);
        }
    }
    let normal = Normal::new(0.0, p.noise_std()).expect("positive std");
    let noises = times.iter().map(|_| normal.sample(rng)).collect();
    Ok(JumpSchedule { times, noises })
}

/// The jump map `c(x, v) = (x, γ v + ς)`.
pub fn apply_jump(p: &JumpParams, x: f64, v: f64, noise: f64) -> (f64, f64) {
    (x, p.gamma * v + noise)
}

/// Jacobian of [`apply_jump`] with respect to `(x, v)`.
pub fn jump_jacobian(p: &JumpParams) -> [[f64; 2]; 2] {
    [[1.0, 0.0], [0.0, p.gamma]]
}
