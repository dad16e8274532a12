//! Feedback-like control field built from compactly supported bumps.
//!
//! `u(x, v, t) = Σ_ℓ μ_ℓκ φ_ℓ(x, v)` where `κ` is the uniform control
//! interval containing `t` and `φ_ℓ(x, v) = φ(x; x_ℓ) · φ(v; v_ℓ)` with the
//! one-dimensional bump
//!
//! ```text
//! φ(x; c) = exp(-1 / (1 - (ε |x - c|)²))   for |x - c| < 1/ε, else 0.
//! ```

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PhaseGrid;

/// One-dimensional bump centred at `center`; range `[0, e⁻¹]`.
pub fn bump(x: f64, center: f64, eps: f64) -> f64 {
    let r = eps * (x - center);
    let s = r * r;
    if s < 1.0 {
        (-1.0 / (1.0 - s)).exp()
    } else {
        0.0
    }
}

/// Exact derivative of [`bump`] with respect to `x`; odd about `center`.
pub fn bump_derivative(x: f64, center: f64, eps: f64) -> f64 {
    let d = x - center;
    let s = eps * eps * d * d;
    if s < 1.0 {
        let w = 1.0 - s;
        (-1.0 / w).exp() * (-2.0 * eps * eps * d) / (w * w)
    } else {
        0.0
    }
}

/// Values and first derivatives of all `L` basis functions at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEval {
    pub values: Vec<f64>,
    pub dx_values: Vec<f64>,
    pub dv_values: Vec<f64>,
}

pub fn eval_basis(grid: &PhaseGrid, eps_phi: f64, x: f64, v: f64) -> BasisEval {
    let sep = SeparableBasis::new(grid, eps_phi, x, v);
    let l = grid.len();
    let mut out = BasisEval {
        values: vec![0.0; l],
        dx_values: vec![0.0; l],
        dv_values: vec![0.0; l],
    };
    for i in 0..grid.n_x() {
        for k in 0..grid.n_v() {
            let idx = grid.index(i, k);
            out.values[idx] = sep.bx[i] * sep.bv[k];
            out.dx_values[idx] = sep.dbx[i] * sep.bv[k];
            out.dv_values[idx] = sep.bx[i] * sep.dbv[k];
        }
    }
    out
}

/// The tensor-product basis factorises, so only `n_x + n_v` bumps are
/// evaluated per point instead of `L` products.
#[derive(Debug, Clone)]
pub(crate) struct SeparableBasis {
    pub bx: Vec<f64>,
    pub dbx: Vec<f64>,
    pub bv: Vec<f64>,
    pub dbv: Vec<f64>,
}

impl SeparableBasis {
    pub fn new(grid: &PhaseGrid, eps: f64, x: f64, v: f64) -> Self {
        let (bx, dbx) = grid
            .x_centres()
            .map(|c| (bump(x, c, eps), bump_derivative(x, c, eps)))
            .unzip();
        let (bv, dbv) = grid
            .v_centres()
            .map(|c| (bump(v, c, eps), bump_derivative(v, c, eps)))
            .unzip();
        Self { bx, dbx, bv, dbv }
    }

    /// Only the values, for callers that never need derivatives.
    pub fn values_only(grid: &PhaseGrid, eps: f64, x: f64, v: f64) -> Self {
        let bx = grid.x_centres().map(|c| bump(x, c, eps)).collect();
        let bv = grid.v_centres().map(|c| bump(v, c, eps)).collect();
        Self {
            bx,
            dbx: Vec::new(),
            bv,
            dbv: Vec::new(),
        }
    }

    /// `φ_ℓ` for every `ℓ`, position-major.
    pub fn for_each_value(&self, mut f: impl FnMut(usize, f64)) {
        let nv = self.bv.len();
        for (i, &bx) in self.bx.iter().enumerate() {
            if bx == 0.0 {
                continue;
            }
            for (k, &bv) in self.bv.iter().enumerate() {
                if bv != 0.0 {
                    f(i * nv + k, bx * bv);
                }
            }
        }
    }

    pub fn value(&self, coeffs: &[f64]) -> f64 {
        let mut u = 0.0;
        self.for_each_value(|idx, phi| u += coeffs[idx] * phi);
        u
    }

    pub fn eval(&self, coeffs: &[f64]) -> ControlEval {
        let nv = self.bv.len();
        let mut out = ControlEval::default();
        for i in 0..self.bx.len() {
            let (bx, dbx) = (self.bx[i], self.dbx[i]);
            if bx == 0.0 && dbx == 0.0 {
                continue;
            }
            let row = &coeffs[i * nv..(i + 1) * nv];
            let mut s = 0.0;
            let mut sd = 0.0;
            for k in 0..nv {
                s += row[k] * self.bv[k];
                sd += row[k] * self.dbv[k];
            }
            out.u += bx * s;
            out.u_x += dbx * s;
            out.u_v += bx * sd;
        }
        out
    }
}

/// `u` and its partial derivatives at one phase-space point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ControlEval {
    pub u: f64,
    pub u_x: f64,
    pub u_v: f64,
}

/// Dense `L × n_intervals` array stored interval-major, so that the
/// coefficients of one control interval are contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffArray {
    n_basis: usize,
    n_intervals: usize,
    data: Vec<f64>,
}

impl CoeffArray {
    pub fn zeros(n_basis: usize, n_intervals: usize) -> Self {
        Self {
            n_basis,
            n_intervals,
            data: vec![0.0; n_basis * n_intervals],
        }
    }

    /// Builds from `f(ℓ, κ)`.
    pub fn from_fn(n_basis: usize, n_intervals: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(n_basis, n_intervals);
        for k in 0..n_intervals {
            for l in 0..n_basis {
                out.data[k * n_basis + l] = f(l, k);
            }
        }
        out
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn n_intervals(&self) -> usize {
        self.n_intervals
    }

    pub fn get(&self, basis: usize, interval: usize) -> f64 {
        self.data[interval * self.n_basis + basis]
    }

    pub fn set(&mut self, basis: usize, interval: usize, value: f64) {
        self.data[interval * self.n_basis + basis] = value;
    }

    pub fn interval(&self, interval: usize) -> &[f64] {
        &self.data[interval * self.n_basis..(interval + 1) * self.n_basis]
    }

    pub fn interval_mut(&mut self, interval: usize) -> &mut [f64] {
        &mut self.data[interval * self.n_basis..(interval + 1) * self.n_basis]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &CoeffArray) -> bool {
        self.n_basis == other.n_basis && self.n_intervals == other.n_intervals
    }

    pub fn dot(&self, other: &CoeffArray) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Euclidean norm of the flattened array.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += a · other`.
    pub fn add_scaled(&mut self, a: f64, other: &CoeffArray) {
        debug_assert!(self.same_shape(other));
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|s| *s *= a);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Time-piecewise-constant feedback control on a phase grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    mu: CoeffArray,
    grid: PhaseGrid,
    eps_phi: f64,
    t_final: f64,
}

impl ControlField {
    pub fn zeros(grid: PhaseGrid, eps_phi: f64, t_final: f64, n_t_u: usize) -> Result<Self> {
        let mu = CoeffArray::zeros(grid.len(), n_t_u);
        Self::new(grid, eps_phi, t_final, mu)
    }

    pub fn new(grid: PhaseGrid, eps_phi: f64, t_final: f64, mu: CoeffArray) -> Result<Self> {
        if !(eps_phi > 0.0 && eps_phi.is_finite()) {
            return Err(Error::invalid(format!("eps_phi must be positive, got {eps_phi}")));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::invalid(format!("t_final must be positive, got {t_final}")));
        }
        if mu.n_intervals() == 0 {
            return Err(Error::invalid("need at least one control interval"));
        }
        if mu.n_basis() != grid.len() {
            return Err(Error::invalid(format!(
                "coefficient rows ({}) do not match the grid size ({})",
                mu.n_basis(),
                grid.len()
            )));
        }
        if !mu.is_finite() {
            return Err(Error::invalid("control coefficients must be finite"));
        }
        Ok(Self {
            mu,
            grid,
            eps_phi,
            t_final,
        })
    }

    /// Same grid and timing with different coefficients.
    pub fn with_coefficients(&self, mu: CoeffArray) -> Result<Self> {
        if !mu.same_shape(&self.mu) {
            return Err(Error::invalid("coefficient shape mismatch"));
        }
        Self::new(self.grid.clone(), self.eps_phi, self.t_final, mu)
    }

    pub fn coefficients(&self) -> &CoeffArray {
        &self.mu
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn eps_phi(&self) -> f64 {
        self.eps_phi
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn n_intervals(&self) -> usize {
        self.mu.n_intervals()
    }

    /// Control interval length `Δτ = T / N_t^u`.
    pub fn dtau(&self) -> f64 {
        self.t_final / self.n_intervals() as f64
    }

    /// Left-closed interval lookup; `t = T` maps to the last interval.
    pub fn interval_at(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.t_final).contains(&t) {
            return Err(Error::OutOfRange {
                t,
                t_final: self.t_final,
            });
        }
        // The small offset keeps nodes generated as κ·Δτ in interval κ.
        let k = (t / self.dtau() + 1e-9).floor() as usize;
        Ok(k.min(self.n_intervals() - 1))
    }

    pub fn eval_u(&self, x: f64, v: f64, t: f64) -> Result<ControlEval> {
        let k = self.interval_at(t)?;
        Ok(self.eval_in_interval(k, x, v))
    }

    pub fn eval_in_interval(&self, interval: usize, x: f64, v: f64) -> ControlEval {
        SeparableBasis::new(&self.grid, self.eps_phi, x, v).eval(self.mu.interval(interval))
    }

    /// Value of `u` only.
    pub fn value_in_interval(&self, interval: usize, x: f64, v: f64) -> f64 {
        SeparableBasis::values_only(&self.grid, self.eps_phi, x, v).value(self.mu.interval(interval))
    }

    pub(crate) fn basis_values_at(&self, x: f64, v: f64) -> SeparableBasis {
        SeparableBasis::values_only(&self.grid, self.eps_phi, x, v)
    }

    /// Time average `μ̄_ℓ = (1/T) ∫ μ_ℓ dt`, returned as a single-interval
    /// control over the same horizon.
    pub fn time_average(&self) -> ControlField {
        let n = self.n_intervals();
        let mean = CoeffArray::from_fn(self.grid.len(), 1, |l, _| {
            (0..n).map(|k| self.mu.get(l, k)).sum::<f64>() / n as f64
        });
        ControlField {
            mu: mean,
            grid: self.grid.clone(),
            eps_phi: self.eps_phi,
            t_final: self.t_final,
        }
    }

    /// Same coefficients on a different horizon. Used to apply a
    /// single-interval averaged control over an arbitrary time span.
    pub fn with_horizon(&self, t_final: f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.eps_phi, t_final, self.mu.clone())
    }

    /// Repeats a single-interval control over `n_t_u` equal intervals.
    pub fn spread(&self, n_t_u: usize) -> Result<Self> {
        if self.n_intervals() != 1 {
            return Err(Error::invalid(format!(
                "spread needs a single-interval control, got {} intervals",
                self.n_intervals()
            )));
        }
        let mu = CoeffArray::from_fn(self.grid.len(), n_t_u, |l, _| self.mu.get(l, 0));
        Self::new(self.grid.clone(), self.eps_phi, self.t_final, mu)
    }

    /// Writes the coefficients as CSV, one row per basis function and one
    /// column per control interval, after a `#` metadata line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let g = self.grid.params();
        writeln!(
            out,
            "# jdoc-control L={} n_t_u={} t_final={} eps_phi={} x_max={} v_max={} n_x={} n_v={}",
            self.grid.len(),
            self.n_intervals(),
            self.t_final,
            self.eps_phi,
            g.x_max,
            g.v_max,
            g.n_x,
            g.n_v
        )
        .map_err(io_err)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for l in 0..self.grid.len() {
            let row: Vec<String> = (0..self.n_intervals())
                .map(|k| self.mu.get(l, k).to_string())
                .collect();
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(io_err)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut header = String::new();
        reader.read_line(&mut header).map_err(io_err)?;
        let meta = ControlHeader::parse(&header)?;
        let grid = PhaseGrid::new(meta.x_max, meta.v_max, meta.n_x, meta.n_v)?;
        if grid.len() != meta.l {
            return Err(Error::ControlFile(format!(
                "L = {} inconsistent with a {}x{} grid",
                meta.l, meta.n_x, meta.n_v
            )));
        }
        let mut mu = CoeffArray::zeros(meta.l, meta.n_t_u);
        let mut rows = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(reader);
        let mut count = 0;
        for (l, rec) in rows.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if l >= meta.l {
                return Err(Error::ControlFile(format!("more than L = {} rows", meta.l)));
            }
            if rec.len() != meta.n_t_u {
                return Err(Error::ControlFile(format!(
                    "row {} has {} columns, expected {}",
                    l + 1,
                    rec.len(),
                    meta.n_t_u
                )));
            }
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::ControlFile(format!("row {}, column {}: bad number {field:?}", l + 1, k + 1))
                })?;
                mu.set(l, k, v);
            }
            count += 1;
        }
        if count != meta.l {
            return Err(Error::ControlFile(format!("found {count} rows, expected {}", meta.l)));
        }
        Self::new(grid, meta.eps_phi, meta.t_final, mu)
    }
}

struct ControlHeader {
    l: usize,
    n_t_u: usize,
    t_final: f64,
    eps_phi: f64,
    x_max: f64,
    v_max: f64,
    n_x: usize,
    n_v: usize,
}

impl ControlHeader {
    fn parse(line: &str) -> Result<Self> {
        let body = line
            .trim()
            .strip_prefix("# jdoc-control")
            .ok_or_else(|| Error::ControlFile("missing '# jdoc-control' header".into()))?;
        let mut fields = std::collections::HashMap::new();
        for tok in body.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::ControlFile(format!("bad header token {tok:?}")))?;
            fields.insert(k, v);
        }
        fn get<T: std::str::FromStr>(
            f: &std::collections::HashMap<&str, &str>,
            key: &str,
        ) -> Result<T> {
            f.get(key)
                .ok_or_else(|| Error::ControlFile(format!("header lacks {key}")))?
                .parse()
                .map_err(|_| Error::ControlFile(format!("header field {key} is malformed")))
        }
        Ok(Self {
            l: get(&fields, "L")?,
            n_t_u: get(&fields, "n_t_u")?,
            t_final: get(&fields, "t_final")?,
            eps_phi: get(&fields, "eps_phi")?,
            x_max: get(&fields, "x_max")?,
            v_max: get(&fields, "v_max")?,
            n_x: get(&fields, "n_x")?,
            n_v: get(&fields, "n_v")?,
        })
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::ControlFile(e.to_string())
}

fn csv_err(e: csv::Error) -> Error {
    Error::ControlFile(e.to_string())
}
