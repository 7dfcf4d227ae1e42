//! Analysis run configuration loaded from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use correlates::analysis::{AnalysisSpec, GridSpec, MarkerMode, SensitivityConfig};
use correlates::bootstrap::BootstrapPlan;
use correlates::riskreg::ModelFamily;
use correlates::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyConfig {
    Logistic,
    Cox,
}

impl From<FamilyConfig> for ModelFamily {
    fn from(f: FamilyConfig) -> Self {
        match f {
            FamilyConfig::Logistic => ModelFamily::WeightedLogistic,
            FamilyConfig::Cox => ModelFamily::CaseCohortCox,
        }
    }
}

fn default_marker_mode() -> MarkerMode {
    MarkerMode::Quantitative
}

fn default_contrasts() -> (f64, f64) {
    correlates::analysis::DEFAULT_CONTRAST_QUANTILES
}

/// The `analyze --config` JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub trial_csv: PathBuf,
    pub schema: PathBuf,
    pub family: FamilyConfig,
    #[serde(default)]
    pub t_horizon: Option<f64>,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default = "default_marker_mode")]
    pub marker_mode: MarkerMode,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
    #[serde(default)]
    pub bootstrap: BootstrapPlan,
    #[serde(default = "default_contrasts")]
    pub contrast_quantiles: (f64, f64),
    #[serde(default)]
    pub design_stratum: Option<String>,
    #[serde(default)]
    pub llod: Option<f64>,
    pub out_dir: PathBuf,
}

impl AnalysisConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: AnalysisConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("invalid analysis config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, path) in [("trial_csv", &self.trial_csv), ("schema", &self.schema)] {
            if !path.exists() {
                return Err(Error::Data(format!(
                    "{name} does not exist: {}",
                    path.display()
                )));
            }
        }
        self.to_spec().validate()?;
        self.bootstrap.validate()
    }

    pub fn to_spec(&self) -> AnalysisSpec {
        AnalysisSpec {
            family: self.family.into(),
            t_horizon: self.t_horizon,
            covariates: self.covariates.clone(),
            marker_mode: self.marker_mode,
            grid: self.grid.clone(),
            sensitivity: self.sensitivity.clone(),
            contrast_quantiles: self.contrast_quantiles,
            design_stratum: self.design_stratum.clone(),
            llod: self.llod,
        }
    }
}
