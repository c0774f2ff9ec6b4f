//! The three reference experiments and their artifact plumbing.

pub mod config;
mod gp_compare;
pub mod manifest;
mod pendulum_budget;
mod pendulum_fixed;

use std::path::Path;
use std::time::Instant;

pub use config::{
    ExperimentConfig, GpCompareConfig, LearningPerfGranularity, PendulumBudgetConfig,
    PendulumFixedConfig,
};
pub use gp_compare::run_gp_compare;
pub use manifest::RunManifest;
pub use pendulum_budget::run_pendulum_budget;
pub use pendulum_fixed::run_pendulum_fixed;

use crate::error::Result;

/// Runs the configured experiment into `out_dir` and writes the manifest.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    let mut manifest = match config {
        ExperimentConfig::GpCompare(c) => run_gp_compare(c, out_dir)?,
        ExperimentConfig::PendulumBudget(c) => run_pendulum_budget(c, out_dir)?,
        ExperimentConfig::PendulumFixed(c) => run_pendulum_fixed(c, out_dir)?,
    };
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(out_dir)?;
    Ok(manifest)
}
