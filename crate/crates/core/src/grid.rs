//! Cell-centred phase-space grid supplying the RBF centres.
//!
//! The box `(-x_max, x_max) × (-v_max, v_max)` is split into `n_x × n_v`
//! equal cells. No boundary conditions are attached: the box only fixes how
//! many shape functions there are and where they sit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridParams", into = "GridParams")]
pub struct PhaseGrid {
    x_max: f64,
    v_max: f64,
    n_x: usize,
    n_v: usize,
    dx: f64,
    dv: f64,
    centers: Vec<(f64, f64)>,
}

/// Serialized form; the derived fields are recomputed on load.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridParams {
    pub x_max: f64,
    pub v_max: f64,
    pub n_x: usize,
    pub n_v: usize,
}

impl TryFrom<GridParams> for PhaseGrid {
    type Error = Error;

    fn try_from(p: GridParams) -> Result<Self> {
        PhaseGrid::new(p.x_max, p.v_max, p.n_x, p.n_v)
    }
}

impl From<PhaseGrid> for GridParams {
    fn from(g: PhaseGrid) -> Self {
        g.params()
    }
}

impl PhaseGrid {
    /// Centres are enumerated position-major: `ℓ = i·n_v + l` for zero-based
    /// position index `i` and velocity index `l`.
    pub fn new(x_max: f64, v_max: f64, n_x: usize, n_v: usize) -> Result<Self> {
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(Error::invalid(format!("x_max must be positive, got {x_max}")));
        }
        if !(v_max > 0.0 && v_max.is_finite()) {
            return Err(Error::invalid(format!("v_max must be positive, got {v_max}")));
        }
        if n_x < 2 || n_v < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 cells per axis, got n_x = {n_x}, n_v = {n_v}"
            )));
        }
        let dx = 2.0 * x_max / n_x as f64;
        let dv = 2.0 * v_max / n_v as f64;
        let xs = cell_centres(x_max, dx, n_x);
        let vs = cell_centres(v_max, dv, n_v);
        let centers = xs
            .iter()
            .flat_map(|&x| vs.iter().map(move |&v| (x, v)))
            .collect();
        Ok(Self {
            x_max,
            v_max,
            n_x,
            n_v,
            dx,
            dv,
            centers,
        })
    }

    pub fn params(&self) -> GridParams {
        GridParams {
            x_max: self.x_max,
            v_max: self.v_max,
            n_x: self.n_x,
            n_v: self.n_v,
        }
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dv(&self) -> f64 {
        self.dv
    }

    /// Number of basis functions `L = n_x · n_v`.
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[(f64, f64)] {
        &self.centers
    }

    pub fn center(&self, index: usize) -> (f64, f64) {
        self.centers[index]
    }

    /// Position coordinates of the cell centres, in index order.
    pub fn x_centres(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_x).map(|i| self.centers[i * self.n_v].0)
    }

    /// Velocity coordinates of the cell centres, in index order.
    pub fn v_centres(&self) -> impl Iterator<Item = f64> + '_ {
        self.centers[..self.n_v].iter().map(|c| c.1)
    }

    pub fn index(&self, i: usize, l: usize) -> usize {
        debug_assert!(i < self.n_x && l < self.n_v);
        i * self.n_v + l
    }

    /// Inverse of [`PhaseGrid::index`].
    pub fn split_index(&self, index: usize) -> (usize, usize) {
        (index / self.n_v, index % self.n_v)
    }
}

fn cell_centres(half_width: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) * step - half_width).collect()
}
