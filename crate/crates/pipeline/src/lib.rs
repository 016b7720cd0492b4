//! Command-line pipeline around the `pcqd` library: band and gap sweeps,
//! cavity-mode solves, synthetic TCSPC experiments, lifetime fitting and a
//! full reference scenario.
//!
//! Every command reads one [`ExperimentConfig`], writes its results into an
//! output directory and returns a [`ResultBundle`]. Outputs depend only on
//! the config (including its seed), never on thread count or location.

// Validation writes `!(x >= 0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod io;
mod reproduce;

pub use commands::{cmd_bands, cmd_fit, cmd_modes, cmd_reproduce_paper, cmd_simulate};
pub use config::ExperimentConfig;
pub use error::{ConfigError, PipelineError};
pub use formats::ResultBundle;
pub use reproduce::{CriteriaReport, Criterion};

use std::path::{Path, PathBuf};

/// Environment variable that may set the output directory.
pub const OUT_DIR_ENV: &str = "PCQD_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "pcqd-out";

/// `--out` beats the environment, which beats the config file.
pub fn resolve_output_dir(flag: Option<&Path>, env: Option<&str>, config: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}
