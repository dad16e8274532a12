//! Ensemble mean and standard deviation at the control nodes.

use std::io::Write;

use jdoc_core::TrajectoryRecord;
use serde::Serialize;

/// Per-node statistics of an ensemble, plus the optimizer's objective trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub t: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub mean_v: Vec<f64>,
    pub std_x: Vec<f64>,
    pub std_v: Vec<f64>,
    pub objective_trace: Vec<f64>,
}

impl EnsembleStats {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn final_mean(&self) -> [f64; 2] {
        let k = self.len() - 1;
        [self.mean_x[k], self.mean_v[k]]
    }

    /// Trapezoidal time average of `|mean(t) - target(t)|`.
    pub fn mean_distance(&self, target: impl Fn(f64) -> [f64; 2]) -> f64 {
        let d: Vec<f64> = (0..self.len())
            .map(|k| {
                let z = target(self.t[k]);
                (self.mean_x[k] - z[0]).hypot(self.mean_v[k] - z[1])
            })
            .collect();
        let span = self.t[self.len() - 1] - self.t[0];
        let area: f64 = (1..d.len()).map(|k| 0.5 * (d[k] + d[k - 1]) * (self.t[k] - self.t[k - 1])).sum();
        area / span
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "mean_x", "mean_v", "std_x", "std_v"])?;
        for k in 0..self.len() {
            w.write_record([
                self.t[k].to_string(),
                self.mean_x[k].to_string(),
                self.mean_v[k].to_string(),
                self.std_x[k].to_string(),
                self.std_v[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean and population standard deviation of `x` and `v` at every uniform
/// control node, using the piecewise-constant path of each particle.
pub fn compute_stats(trajectories: &[TrajectoryRecord]) -> EnsembleStats {
    let mut stats = EnsembleStats::default();
    let Some(first) = trajectories.first() else {
        return stats;
    };
    let grid = &first.grid;
    for kappa in 0..grid.uniform_nodes().len() {
        let (mut n, mut mx, mut mv, mut sx, mut sv) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for tr in trajectories {
            let z = tr.uniform_state(kappa);
            n += 1.0;
            let dx = z.x - mx;
            mx += dx / n;
            sx += dx * (z.x - mx);
            let dv = z.v - mv;
            mv += dv / n;
            sv += dv * (z.v - mv);
        }
        stats.t.push(grid.nodes()[grid.uniform_nodes()[kappa]]);
        stats.mean_x.push(mx);
        stats.mean_v.push(mv);
        stats.std_x.push((sx / n).max(0.0).sqrt());
        stats.std_v.push((sv / n).max(0.0).sqrt());
    }
    stats
}
