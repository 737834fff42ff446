//! TOML run configuration and capability-input files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pipeline::PipelineMode;
use crate::capability::{KappaMethod, RaterModel};
use crate::error::{Error, Result};
use crate::estimation::FitConfig;
use crate::model::{LinkFunction, ModelFamily};

/// Settings shared by every subcommand. Command-line flags override these.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub family: Option<ModelFamily>,
    pub link: Option<LinkFunction>,
    pub threshold: Option<f64>,
    pub group_by: Option<String>,
    pub delimiter: Option<char>,
    pub seed: Option<u64>,
    pub kappa_method: Option<KappaMethod>,
    pub mode: Option<PipelineMode>,
    pub replications: Option<usize>,
    pub eta_min: Option<f64>,
    pub eta_max: Option<f64>,
    pub eta_step: Option<f64>,
    /// Zero-based rater indices for the severity sweep.
    pub sweep_raters: Option<Vec<usize>>,
    /// Capability-input file for the `capability` command.
    pub params: Option<PathBuf>,
    pub fit: FitConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.fit.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// A rater with an identifier, as listed in a capability-input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRater {
    pub id: String,
    #[serde(flatten)]
    pub model: RaterModel,
}

/// Rater parameters and the ability scale for direct capability scoring.
///
/// ```toml
/// sigma = 2.51
/// [[raters]]
/// id = "AM"
/// family = "gmf"
/// rho = 1.0
/// eta = -2.24
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapabilityInput {
    pub sigma: f64,
    pub raters: Vec<NamedRater>,
}

impl CapabilityInput {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        if !(parsed.sigma.is_finite() && parsed.sigma > 0.0) {
            return Err(Error::InvalidInput(format!("{}: sigma must be positive", path.display())));
        }
        if parsed.raters.is_empty() {
            return Err(Error::InvalidInput(format!("{}: no raters", path.display())));
        }
        Ok(parsed)
    }
}
