//! Artifact writers. Nothing written here depends on wall-clock time or
//! thread count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use jdoc_core::{AdjointPath, TrajectoryRecord};

use crate::{HarnessError, Result};

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::io(path, e))
}

pub fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::io(path, std::io::Error::other(e))
}

/// `particle, t, x, v, is_jump` for the first `limit` particles.
pub fn write_trajectories(path: &Path, trajectories: &[TrajectoryRecord], limit: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let wrap = |e| csv_error(path, e);
    w.write_record(["particle", "t", "x", "v", "is_jump"]).map_err(wrap)?;
    for (j, tr) in trajectories.iter().take(limit).enumerate() {
        for (k, z) in tr.states.iter().enumerate() {
            w.write_record([
                j.to_string(),
                tr.grid.nodes()[k].to_string(),
                z.x.to_string(),
                z.v.to_string(),
                u8::from(tr.grid.is_jump(k)).to_string(),
            ])
            .map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// `particle, t, q, p` for the first `limit` particles.
pub fn write_adjoints(
    path: &Path,
    trajectories: &[TrajectoryRecord],
    adjoints: &[AdjointPath],
    limit: usize,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let wrap = |e| csv_error(path, e);
    w.write_record(["particle", "t", "q", "p"]).map_err(wrap)?;
    for (j, (tr, adj)) in trajectories.iter().zip(adjoints).take(limit).enumerate() {
        for (k, r) in adj.states.iter().enumerate() {
            w.write_record([
                j.to_string(),
                tr.grid.nodes()[k].to_string(),
                r[0].to_string(),
                r[1].to_string(),
            ])
            .map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Appends one JSON document per line.
pub struct JsonLines<W: Write> {
    out: W,
}

impl<W: Write> JsonLines<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write<T: serde::Serialize>(&mut self, value: &T) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}
