//! Config-driven experiment harness for the model-inversion lab.
//!
//! An [`ExperimentConfig`] names one of the built-in experiments and
//! overrides whatever defaults it wants; [`run`] executes it (optionally in
//! parallel) and [`emit`] writes the JSON report, metric tables and traces.

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, ExperimentKind, Variant};
pub use error::{LabError, Result};
pub use experiments::{calibrate_b, run, variants_for, CalibrationPoint};
pub use report::{emit, load_report, ExperimentReport, RunOutput, RunRecord, RunSeeds, Table};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "INVLAB_OUTPUT_ROOT";

/// `(name, description)` for every experiment, in a fixed order.
pub fn list_experiments() -> Vec<(&'static str, &'static str)> {
    ExperimentKind::ALL
        .iter()
        .map(|k| (k.name(), k.description()))
        .collect()
}

/// Where a run writes: `dir` itself when absolute, otherwise under `root`.
pub fn resolve_output(dir: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if dir.is_relative() => r.join(dir),
        _ => dir.to_path_buf(),
    }
}
