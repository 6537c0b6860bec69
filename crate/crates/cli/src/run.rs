//! `mindisp run`: descent from the zero control, then artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use mindisp::descent::{run_descent, DescentReport, IterationRecord};
use mindisp::noise::{NoiseStream, Purpose};
use mindisp::sde::{sample_paths, EnsembleControl};

use crate::config::ExperimentConfig;
use crate::output;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub dry_run: bool,
}

/// What a finished (or dry) run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: Option<PathBuf>,
    pub report: Option<DescentReport>,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    notes: Vec<String>,
    config: &'a ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    report: &'a DescentReport,
}

/// One `key=value` record per iterate, prefixed for easy grepping.
pub fn progress_line(r: &IterationRecord, best: f64) -> String {
    format!(
        "[mindisp:progress] iteration={} cost={:.6e} std_error={:.3e} best={:.6e} synthesis_steps={} elapsed_s={:.3}",
        r.iteration, r.cost, r.std_error, best, r.synthesis_steps, r.elapsed
    )
}

pub fn load(config_path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn run(config_path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let cfg = load(config_path, opts.seed)?;
    let exp = cfg.build().context("invalid configuration")?;

    if opts.dry_run {
        let mut stdout = std::io::stdout().lock();
        write!(stdout, "{}", output::header("run (dry)", &cfg))?;
        writeln!(
            stdout,
            "# state_dim = {}, basis_len = {}, intervals = {}, substeps = {}",
            exp.model.state_dim(),
            exp.model.basis_len(),
            exp.grid.intervals(),
            exp.grid.substeps()
        )?;
        return Ok(RunOutcome {
            out_dir: None,
            report: None,
        });
    }

    let out_dir = crate::output_dir(opts.out.as_deref(), &cfg);
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let header = output::header("run", &cfg);
    let initial = EnsembleControl::zeros_on(&exp.grid, exp.model.basis_len());

    let mut best = f64::INFINITY;
    let result = run_descent(
        &exp.model,
        &exp.grid,
        &exp.cost,
        &exp.descent,
        &initial,
        |r| {
            best = best.min(r.cost);
            eprintln!("{}", progress_line(r, best));
        },
    );
    let (report, error) = match result {
        Ok(report) => (report, None),
        Err(failure) => (*failure.partial, Some(failure.source)),
    };

    let report_file = ReportFile {
        tool: "mindisp",
        version: env!("CARGO_PKG_VERSION"),
        command: "run",
        seed: cfg.seed,
        notes: output::notes(&cfg),
        config: &cfg,
        error: error.as_ref().map(ToString::to_string),
        report: &report,
    };
    output::write(
        &out_dir,
        "report.json",
        &serde_json::to_string_pretty(&report_file)?,
    )?;
    output::write(
        &out_dir,
        "cost_trace.csv",
        &output::cost_trace(&header, &report),
    )?;
    if let Some(e) = error {
        return Err(e).context("descent aborted; partial report written");
    }
    output::write(
        &out_dir,
        "control.csv",
        &output::control(&header, &exp.grid, &report.final_control),
    )?;

    // Both bundles replay the same noise, so they differ only by the control.
    let plot = NoiseStream::for_purpose(cfg.seed, Purpose::Plot);
    for (name, control) in [
        ("paths_initial.csv", &initial),
        ("paths_learned.csv", &report.final_control),
    ] {
        let paths = sample_paths(&exp.model, &exp.grid, control, cfg.plot.paths, &plot)?;
        output::write(&out_dir, name, &output::paths(&header, &paths))?;
    }

    Ok(RunOutcome {
        out_dir: Some(out_dir),
        report: Some(report),
    })
}
