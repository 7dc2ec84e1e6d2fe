//! TOML run configuration. Every key has a default; the resolved tree is
//! echoed into reports.

use std::path::{Path, PathBuf};

use ipc_uplift::{BenchMethod, CampaignConfig, GbmConfig, Method, Split, UpliftError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub methods: Vec<String>,
    pub folds: usize,
    /// Overrides `folds` with a single train/test split when set.
    pub holdout: Option<f64>,
    pub output: OutputPaths,
    pub campaign: CampaignConfig,
    pub gbm: GbmConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub data: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub curves: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            folds: 5,
            holdout: None,
            output: OutputPaths::default(),
            campaign: CampaignConfig::default(),
            gbm: GbmConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, UpliftError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|source| UpliftError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, UpliftError> {
        toml::from_str(text).map_err(|e| UpliftError::InvalidConfig(e.to_string()))
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn split(&self) -> Split {
        match self.holdout {
            Some(f) => Split::Holdout(f),
            None => Split::KFold(self.folds),
        }
    }

    /// Parsed method list without duplicates.
    pub fn bench_methods(&self) -> Result<Vec<BenchMethod>, UpliftError> {
        let mut out = Vec::new();
        for name in &self.methods {
            let m: BenchMethod = name.trim().parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        Ok(out)
    }
}
