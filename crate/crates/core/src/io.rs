//! File formats and generators around the engine: run configuration,
//! snapshots, initial conditions, profile analysis, and timeline dumps.

pub mod config;
pub mod ic;
pub mod profile;
pub mod snapshot;

use std::io::Write;
use std::path::Path;

use crate::scheduler::TimelineEvent;
use crate::space::NONE;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Format(String),
}

/// One task execution per line: step, worker, kind, cells, nanosecond
/// interval since the engine epoch. Single-cell tasks print "-" for cell b.
pub fn write_timeline(path: &Path, events: &[TimelineEvent]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# step worker kind cell_a cell_b t_start_ns t_end_ns")?;
    for e in events {
        let b = if e.b == NONE {
            "-".to_string()
        } else {
            e.b.to_string()
        };
        writeln!(
            out,
            "{} {} {} {} {} {} {}",
            e.step,
            e.worker,
            e.kind.label(),
            e.a,
            b,
            e.t_start_ns,
            e.t_end_ns
        )?;
    }
    out.flush()
}
