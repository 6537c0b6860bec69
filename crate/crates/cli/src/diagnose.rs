//! `mindisp diagnose`: analytic oracle checks of the estimators.
//!
//! The checks run on fixed reference problems with known answers. The config
//! supplies the seed, the sample sizes and the pass thresholds.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::Rng;
use serde::Serialize;

use mindisp::adjoint::{duality_defect, estimate_p, increment_check, FdStep};
use mindisp::costs::{biased_covariance_trace, central_moment_cost, trace_covariance, MomentIndex};
use mindisp::models::{brownian_model, controlled_linear_model};
use mindisp::noise::{NoiseStream, Purpose};
use mindisp::sde::{EnsembleControl, InitialLaw, ParticleEnsemble, TimeGrid};
use mindisp::stats::z_score;

use crate::config::{DiagnoseConfig, ExperimentConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub expected: f64,
    /// Which quantity is held against `threshold`.
    pub statistic: &'static str,
    /// Worst observed value of `statistic`.
    pub score: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct Diagnostics {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub passed: bool,
    pub checks: Vec<Check>,
}

fn z_check(
    name: &'static str,
    measured: f64,
    expected: f64,
    se: f64,
    sigma: f64,
    detail: String,
) -> Check {
    let z = z_score(measured - expected, se);
    Check {
        name,
        passed: z.abs() <= sigma,
        measured,
        expected,
        statistic: "|z|",
        score: z.abs(),
        threshold: sigma,
        detail: format!("{detail}, std_error={se:.3e}"),
    }
}

fn square() -> mindisp::costs::CentralMoment {
    central_moment_cost(MomentIndex::new(vec![2], vec![0.0]).expect("valid index"))
}

/// `p̄_0(1)` for `dY = √(2β) dW`, `ℓ = y²` equals `1 + 2βT`.
pub fn feynman_kac_oracle(cfg: &DiagnoseConfig, seed: u64) -> Result<Check> {
    let (beta, horizon) = (0.05, 6.0);
    let model = brownian_model(beta)?;
    let grid = TimeGrid::uniform(horizon, 12, 1)?;
    let u = EnsembleControl::zeros_on(&grid, 1);
    let noise = NoiseStream::for_purpose(seed, Purpose::Diagnostic(1));
    let est = estimate_p(
        &model,
        &grid,
        &u,
        0.0,
        &[1.0],
        cfg.oracle_paths,
        &square(),
        &noise,
    )?;
    Ok(z_check(
        "feynman_kac_oracle",
        est.value,
        1.0 + 2.0 * beta * horizon,
        est.std_error,
        cfg.sigma,
        format!("N={}", cfg.oracle_paths),
    ))
}

/// A deterministic, motionless model makes every particle's defect vanish.
pub fn frozen_duality(seed: u64) -> Result<Check> {
    let model = brownian_model(0.0)?.with_initial(InitialLaw::Gaussian {
        mean: vec![1.0],
        std: vec![0.5],
    })?;
    let grid = TimeGrid::per_unit_time(6.0, 1, 2)?;
    let u = EnsembleControl::zeros_on(&grid, 1);
    let noise = NoiseStream::for_purpose(seed, Purpose::Diagnostic(2));
    let defects = duality_defect(
        &model,
        &grid,
        &u,
        &square(),
        &[1.0, 3.0, 5.0],
        4,
        64,
        &noise,
    )?;
    let worst = defects.iter().map(|d| d.defect.abs()).fold(0.0, f64::max);
    Ok(Check {
        name: "frozen_duality",
        passed: worst == 0.0,
        measured: worst,
        expected: 0.0,
        statistic: "max |defect|",
        score: worst,
        threshold: 0.0,
        detail: "β=0, 3 times".to_string(),
    })
}

/// `∫p̄_t dμ_t` is constant in `t` for the Brownian model.
pub fn brownian_duality(cfg: &DiagnoseConfig, seed: u64) -> Result<Check> {
    let model = brownian_model(0.05)?;
    let grid = TimeGrid::per_unit_time(6.0, 2, 5)?;
    let u = EnsembleControl::zeros_on(&grid, 1);
    let noise = NoiseStream::for_purpose(seed, Purpose::Diagnostic(3));
    let times = [1.0, 2.0, 3.0, 4.0, 5.0];
    let defects = duality_defect(
        &model,
        &grid,
        &u,
        &square(),
        &times,
        cfg.defect_paths,
        cfg.defect_particles,
        &noise,
    )?;
    let worst = defects
        .iter()
        .map(|d| (d, z_score(d.defect, d.std_error)))
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("five times");
    let detail = defects
        .iter()
        .map(|d| format!("t={}: {:.3e}±{:.1e}", d.time, d.defect, d.std_error))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(Check {
        name: "brownian_duality",
        passed: worst.1.abs() <= cfg.sigma,
        measured: worst.0.defect,
        expected: 0.0,
        statistic: "max |z|",
        score: worst.1.abs(),
        threshold: cfg.sigma,
        detail: format!(
            "N={}, M={}; {detail}",
            cfg.defect_paths, cfg.defect_particles
        ),
    })
}

/// Both sides of the increment formula for `dX = w dt + 0.5 dW`, `X_0 = 1`,
/// `ℓ = x²`, between `ū = 0` and `u = −0.5` (exact gap `−0.75`). The
/// direct difference is the measurement, the Hamiltonian integral the
/// expectation.
pub fn increment_formula(cfg: &DiagnoseConfig, seed: u64) -> Result<Check> {
    let model =
        controlled_linear_model(0.0, 1.0, 0.5)?.with_initial(InitialLaw::Dirac(vec![1.0]))?;
    let grid = TimeGrid::per_unit_time(1.0, 50, 4)?;
    let reference = EnsembleControl::zeros_on(&grid, 1);
    let target = EnsembleControl::constant(grid.intervals(), &[-0.5]);
    let noise = NoiseStream::for_purpose(seed, Purpose::Diagnostic(4));
    let c = increment_check(
        &model,
        &grid,
        &reference,
        &target,
        &square(),
        cfg.increment_direct_paths,
        cfg.increment_particles,
        cfg.increment_inner_paths,
        &noise,
        FdStep::default(),
    )?;
    Ok(z_check(
        "increment_formula",
        c.direct,
        c.integral,
        c.combined_std_error(),
        cfg.sigma,
        format!(
            "direct={:.5}±{:.1e}, integral={:.5}±{:.1e}",
            c.direct, c.direct_std_error, c.integral, c.integral_std_error
        ),
    ))
}

/// Pairwise-difference dispersion against the biased covariance trace.
pub fn trace_identity(cfg: &DiagnoseConfig, seed: u64) -> Result<Check> {
    let stream = NoiseStream::for_purpose(seed, Purpose::Diagnostic(5));
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let mut rng = stream.path_rng(i);
        let m = rng.random_range(1..=200);
        let n = rng.random_range(1..=5);
        let coords: Vec<f64> = (0..m * n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let e = ParticleEnsemble::new(0.0, n, coords);
        worst = worst.max((trace_covariance(&e) - biased_covariance_trace(&e)).abs());
    }
    Ok(Check {
        name: "trace_identity",
        passed: worst <= cfg.identity_tol,
        measured: worst,
        expected: 0.0,
        statistic: "max abs error",
        score: worst,
        threshold: cfg.identity_tol,
        detail: "100 ensembles, M ≤ 200, n ≤ 5".to_string(),
    })
}

pub fn run_checks(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    let d = &cfg.diagnose;
    Ok(vec![
        feynman_kac_oracle(d, cfg.seed)?,
        frozen_duality(cfg.seed)?,
        brownian_duality(d, cfg.seed)?,
        increment_formula(d, cfg.seed)?,
        trace_identity(d, cfg.seed)?,
    ])
}

/// Runs every check, writes `diagnostics.json` and returns the results.
pub fn diagnose(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(PathBuf, Diagnostics)> {
    let cfg = crate::run::load(config_path, seed)?;
    cfg.build().context("invalid configuration")?;
    let checks = run_checks(&cfg)?;
    let out_dir = crate::output_dir(out, &cfg);
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let diag = Diagnostics {
        tool: "mindisp",
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        passed: checks.iter().all(|c| c.passed),
        config: cfg,
        checks,
    };
    crate::output::write(
        &out_dir,
        "diagnostics.json",
        &serde_json::to_string_pretty(&diag)?,
    )?;
    Ok((out_dir, diag))
}
