use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sfda_core::data::{BenchmarkLayout, LoadOptions, Split};
use sfda_core::metrics::EvalOptions;
use sfda_core::model::Backbone;
use sfda_core::nn::NetConfig;
use sfda_core::pipeline::{AdaptConfig, DeskBenchmark};

use crate::CliError;

/// The single run configuration file. Only `[data]` is required; every
/// other section falls back to the published defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default)]
    pub eval: EvalOptions,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: default_out(),
            data: DataConfig::Synthetic(DeskBenchmark::default()),
            model: ModelConfig::default(),
            adapt: AdaptConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataConfig {
    Synthetic(DeskBenchmark),
    Benchmark(BenchmarkData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkDir {
    pub root: PathBuf,
    pub layout: BenchmarkLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkData {
    pub resolution: (usize, usize),
    #[serde(default = "default_crop")]
    pub crop: u32,
    /// Labelled source training set; only `train-source` reads it.
    pub source: Option<BenchmarkDir>,
    pub target_train: BenchmarkDir,
    pub target_test: BenchmarkDir,
}

fn default_crop() -> u32 {
    LoadOptions::default().crop
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { backbone: Backbone::UnetSmall, dropout: 0.1 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.adapt.validate()?;
        self.net_config().validate()?;
        if let DataConfig::Synthetic(d) = &self.data {
            d.source_shift.validate()?;
            d.target_shift.validate()?;
            if d.n_source == 0 || d.n_target_train == 0 || d.n_target_test == 0 {
                return Err(CliError::Config("data: dataset sizes must be positive".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(CliError::Config("eval.threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn resolution(&self) -> (usize, usize) {
        match &self.data {
            DataConfig::Synthetic(d) => d.resolution,
            DataConfig::Benchmark(b) => b.resolution,
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            resolution: Some(self.resolution()),
            ..self.model.backbone.net_config(self.model.dropout)
        }
    }

    pub fn load_options(&self, split: Split, require_masks: bool) -> LoadOptions {
        let crop = match &self.data {
            DataConfig::Benchmark(b) => b.crop,
            DataConfig::Synthetic(_) => default_crop(),
        };
        LoadOptions { split, require_masks, crop, ..LoadOptions::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_published_defaults() {
        let cfg: RunConfig = toml::from_str("[data]\nkind = \"synthetic\"\n").unwrap();
        assert_eq!(cfg.adapt, AdaptConfig::default());
        assert_eq!(cfg.adapt.k, 10);
        assert_eq!(cfg.data, DataConfig::Synthetic(DeskBenchmark::default()));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[data]\nkind = \"synthetic\"\n[adapt]\nsigmaa = 0.2\n").unwrap_err();
        assert!(err.to_string().contains("sigmaa"), "{err}");
        assert!(toml::from_str::<RunConfig>("[data]\nkind = \"synthetic\"\nn_sourc = 3\n").is_err());
    }

    #[test]
    fn missing_data_section_names_the_field() {
        let err = toml::from_str::<RunConfig>("out_dir = \"x\"\n").unwrap_err();
        assert!(err.message().contains("data"), "{err}");
    }
}
