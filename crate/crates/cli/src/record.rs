use std::path::Path;

use fvi_core::estimators::SampleDiagnostics;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Summed over every bound estimate in the run.
    pub samples: SampleDiagnostics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clipped_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub degenerate_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub projected_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clamped_points: Option<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_s: f64,
}

/// Output of one run. `config` alone reproduces `results`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    /// Source revision, when the build provided `FVI_GIT_REV`.
    pub git_revision: Option<String>,
    pub config: RunConfig,
    pub results: serde_json::Value,
    pub diagnostics: Diagnostics,
    pub timing: Timing,
}

impl RunRecord {
    pub fn write(&self, path: Option<&Path>) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("run records serialize");
        match path {
            Some(p) => std::fs::write(p, text + "\n")
                .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", p.display()))),
            None => {
                println!("{text}");
                Ok(())
            }
        }
    }
}
