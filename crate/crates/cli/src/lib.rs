//! Batch front-end for `mindisp`: TOML experiment configs in, CSV and JSON
//! artifacts out.
//!
//! Every artifact starts with a header carrying the tool version, the seed
//! and the fully resolved configuration, so a run can be repeated from any
//! single output file.

pub mod config;
pub mod diagnose;
pub mod output;
pub mod run;

pub use config::{Experiment, ExperimentConfig};

use std::path::{Path, PathBuf};

/// Environment variable naming the default artifact directory.
pub const OUT_ENV: &str = "MINDISP_OUT";

/// `--out`, then `[output] dir`, then `$MINDISP_OUT`, then `./mindisp-out`.
pub fn output_dir(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("mindisp-out"))
}
