//! Artifact writers.
//!
//! CSV schemas (all floats in `{:.16e}`, which round-trips an `f64`):
//!
//! | file | columns |
//! |------|---------|
//! | `cost_trace.csv` | `iteration,cost,std_error,best_so_far,synthesis_steps,evaluation_steps` |
//! | `control.csv` | `knot_time,u_1,…,u_d` (one row per control interval) |
//! | `paths_*.csv` | `time,particle,x_1,…,x_n` (every integrator substep) |
//!
//! Lines starting with `#` are the provenance header.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mindisp::descent::DescentReport;
use mindisp::sde::{EnsembleControl, Path as SamplePath, TimeGrid};

use crate::config::{ExperimentConfig, ModelKind};

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Caveats that travel with every artifact of a run.
pub fn notes(cfg: &ExperimentConfig) -> Vec<String> {
    let mut notes = Vec::new();
    if cfg.model.kind == ModelKind::Theta {
        notes.push(
            "theta initial law and penalty weight are calibration choices, not published values"
                .to_string(),
        );
    }
    notes
}

/// `#`-prefixed provenance block for CSV files.
pub fn header(command: &str, cfg: &ExperimentConfig) -> String {
    let mut h = format!(
        "# mindisp {} {command}\n# seed = {}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.seed
    );
    for n in notes(cfg) {
        writeln!(h, "# note: {n}").unwrap();
    }
    h.push_str("# config:\n");
    for line in cfg.echo().lines() {
        writeln!(h, "#   {line}").unwrap();
    }
    h
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn cost_trace(header: &str, report: &DescentReport) -> String {
    let mut s = header.to_string();
    s.push_str("iteration,cost,std_error,best_so_far,synthesis_steps,evaluation_steps\n");
    for (r, best) in report.iterations.iter().zip(report.best_so_far()) {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.iteration,
            float(r.cost),
            float(r.std_error),
            float(best),
            r.synthesis_steps,
            r.evaluation_steps
        )
        .unwrap();
    }
    s
}

pub fn control(header: &str, grid: &TimeGrid, control: &EnsembleControl) -> String {
    let mut s = header.to_string();
    s.push_str("knot_time");
    for j in 1..=control.width() {
        write!(s, ",u_{j}").unwrap();
    }
    s.push('\n');
    for (k, row) in control.rows().enumerate() {
        s.push_str(&float(grid.knot(k)));
        for v in row {
            write!(s, ",{}", float(*v)).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn paths(header: &str, paths: &[SamplePath]) -> String {
    let mut s = header.to_string();
    s.push_str("time,particle");
    let dim = paths
        .first()
        .and_then(|p| p.first())
        .map_or(0, |(_, x)| x.dim());
    for i in 1..=dim {
        write!(s, ",x_{i}").unwrap();
    }
    s.push('\n');
    for (l, path) in paths.iter().enumerate() {
        for (t, x) in path {
            write!(s, "{},{l}", float(*t)).unwrap();
            for v in x.as_slice() {
                write!(s, ",{}", float(*v)).unwrap();
            }
            s.push('\n');
        }
    }
    s
}
