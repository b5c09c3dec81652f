//! Experiment harness for `dcpriv-core`: JSON experiment configs, batch runs
//! with hashed manifests, and the fixed example reproductions.

mod artifacts;
pub mod config;
mod experiment;
mod ppsc_check;
pub mod reproduce;
pub mod svg;

use std::path::PathBuf;

pub use artifacts::{ArtifactWriter, ManifestEntry, RunArtifacts};
pub use config::{AttackSpec, Experiment, ExperimentConfig, InitRange, ProtocolSpec};
pub use experiment::{run_experiment, AttackMetrics, TrialSummary};
pub use ppsc_check::{ppsc_check, PpscCheckConfig, PpscCheckReport};
pub use reproduce::{reproduce, Check, Example};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "DCPRIV_OUT";
pub const DEFAULT_OUT: &str = "dcpriv-out";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{source_name}:{line}:{column}: {message}")]
    ConfigSyntax {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("cannot read {path}: {source}")]
    Input {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] dcpriv_core::Error),
    #[error("assertion failed: {0}")]
    Assertion(String),
}

impl HarnessError {
    pub(crate) fn config(field: &str, message: impl ToString) -> Self {
        Self::Config {
            field: field.to_string(),
            message: message.to_string(),
        }
    }

    /// 2 for unusable input, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::ConfigSyntax { .. } | Self::Config { .. } | Self::Input { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Parses JSON, reporting the line and column of the first problem.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, source_name: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| HarnessError::ConfigSyntax {
        source_name: source_name.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Input {
        path: path.to_path_buf(),
        source,
    })?;
    parse_json(&text, &path.display().to_string())
}

/// `--out`, then the config's own directory, then `$DCPRIV_OUT`, then [`DEFAULT_OUT`].
pub fn resolve_out_dir(flag: Option<PathBuf>, configured: Option<PathBuf>) -> PathBuf {
    flag.or(configured)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}
