//! Run configuration file. Explicit flags win over file values, which win
//! over built-in defaults.

use std::path::{Path, PathBuf};

use dprisk::dpmcmc::{BaseMeasure, SamplerConfig};
use dprisk::loglinear::PathConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub pi: Option<f64>,
    pub variables: Option<String>,
    pub model: Option<String>,
    pub mask: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub chains: Option<usize>,
    /// `gamma`, `gaussian` or `none`.
    pub base: Option<String>,
    pub base_measure: Option<BaseMeasure>,
    pub quantile_levels: Option<Vec<f64>>,
    pub sampler: SamplerConfig,
    pub search: PathConfig,
    pub selection: SelectionSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    pub patience: Option<usize>,
    pub near_tie: Option<f64>,
    pub report_parametric: Option<bool>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::input(format!("config {}: {e}", path.display())))
    }

    /// Seed from the flag or the file; stochastic commands require one.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        flag.or(self.seed)
            .ok_or_else(|| CliError::input("this command is stochastic: pass --seed or set seed in the config"))
    }

    /// Base measure: `none` yields `None` (no random effects).
    pub fn base_measure(&self, flag: Option<&str>) -> Result<Option<BaseMeasure>, CliError> {
        let kind = flag.or(self.base.as_deref()).unwrap_or("gamma");
        let configured = self.base_measure;
        match kind {
            "none" => Ok(None),
            "gamma" => Ok(Some(match configured {
                Some(b @ BaseMeasure::Gamma { .. }) => b,
                _ => BaseMeasure::default_gamma(),
            })),
            "gaussian" => Ok(Some(match configured {
                Some(b @ BaseMeasure::Gaussian { .. }) => b,
                _ => BaseMeasure::default_gaussian(),
            })),
            other => Err(CliError::input(format!(
                "unknown base {other:?}; expected gamma, gaussian or none"
            ))),
        }
    }
}
