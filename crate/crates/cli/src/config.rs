//! JSON run configuration. Every field is optional and falls back to its
//! default; command-line flags are applied on top after loading.

use std::path::{Path, PathBuf};

use alphaforge_core::backtest::BacktestParams;
use alphaforge_core::panel::{ColumnMap, DateRange};
use alphaforge_core::search::MineConfig;
use alphaforge_core::synth::PlantedConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Where the panel comes from. Exactly one source must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub csv: Option<PathBuf>,
    /// Binary cache written by `ingest`.
    pub cache: Option<PathBuf>,
    pub columns: ColumnMap,
    /// Forward-return horizon in trading days for price data.
    pub horizon: Option<usize>,
    /// Generate a planted-signal panel instead of reading files.
    pub synthetic: Option<PlantedConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: DateRange,
    pub valid: DateRange,
    pub test: DateRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    /// Required for file data; synthetic panels carry their own split.
    pub split: Option<SplitConfig>,
    pub mine: MineConfig,
    pub seed_alphas: Option<PathBuf>,
    pub backtest: BacktestParams,
    pub output_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data: DataConfig::default(),
            split: None,
            mine: MineConfig::default(),
            seed_alphas: None,
            backtest: BacktestParams::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

pub const DEFAULT_HORIZON: usize = 20;

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
    }

    /// Checks everything that can be checked before touching data.
    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        let sources = d.csv.is_some() as u8 + d.cache.is_some() as u8 + d.synthetic.is_some() as u8;
        if sources != 1 {
            return Err(CliError::config(
                "exactly one data source (csv, cache or synthetic) must be configured",
            ));
        }
        for p in [&d.csv, &d.cache, &self.seed_alphas].into_iter().flatten() {
            if !p.is_file() {
                return Err(CliError::config(format!("file not found: {}", p.display())));
            }
        }
        if d.synthetic.is_none() && self.split.is_none() {
            return Err(CliError::config("split ranges are required for file data"));
        }
        if d.horizon == Some(0) {
            return Err(CliError::config("horizon must be positive"));
        }
        self.mine.validate().map_err(|e| CliError::config(e.to_string()))?;
        self.backtest.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(())
    }
}
