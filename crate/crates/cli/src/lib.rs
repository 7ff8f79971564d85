//! Front end for the simulator: config loading, parameter sweeps over seeds
//! and schemes, and tidy plot-data emission.

pub mod plotdata;
pub mod sweep;

use std::fs;
use std::path::{Path, PathBuf};

use iab_core::scenario::{validate_config, Config, ConfigError};
use thiserror::Error;

pub use plotdata::emit_plot_data;
pub use sweep::{run_sweep, SweepRow, SweepSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}", join_config_errors(.0))]
    Config(Vec<ConfigError>),
    #[error("sweep spec line {line}: {message}")]
    Spec { line: usize, message: String },
    #[error("unknown preset '{0}' (expected fig3, fig4 or fig5)")]
    UnknownPreset(String),
    #[error("--set expects key=value, got '{0}'")]
    BadOverride(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("sweep CSV: {0}")]
    SweepCsv(String),
}

fn join_config_errors(errs: &[ConfigError]) -> String {
    errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

pub(crate) fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Apply `key=value` overrides in order.
pub fn apply_overrides(cfg: &mut Config, sets: &[String]) -> Result<(), CliError> {
    let mut errs = Vec::new();
    for s in sets {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::BadOverride(s.clone()))?;
        if let Err(e) = cfg.set(k, v) {
            errs.push(e);
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(errs))
    }
}

/// Defaults, then the config file, then `--set` overrides; validated.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> Result<Config, CliError> {
    let mut cfg = Config::default();
    if let Some(p) = path {
        cfg.apply_kv_str(&read_file(p)?).map_err(CliError::Config)?;
    }
    apply_overrides(&mut cfg, sets)?;
    validate_config(cfg).map_err(CliError::Config)
}
