//! Source training, two-stage adaptation, ablation runners and run
//! manifests.

mod ablation;
mod adapt;
mod desk;
mod manifest;
mod source;

pub use ablation::{run_ablation_components, run_ablation_sigma, AblationRow, AblationTable, SIGMA_GRID};
pub use adapt::{adapt, adapt_with_partition, AdaptRun, Objective, StageLog, SubsetChoice, Variant};
pub use desk::{DeskBenchmark, DeskData};
pub use manifest::{history_csv, RunManifest};
pub use source::{source_loss, train_source, SourceEpoch, SourceRun};

use serde::{Deserialize, Serialize};

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mixing::{InterDirection, MixConfig};
use crate::nn::AdamConfig;
use crate::pseudolabel::{BackgroundWeight, PseudoLabelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
}

/// Every hyperparameter of source training and adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub gamma: f64,
    pub eta: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub source_epochs: usize,
    pub stage_epochs: (usize, usize),
    pub lr_source: f64,
    pub lr_adapt: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub mix_ratio_range: (f64, f64),
    pub optimizer: Optimizer,
    /// Stage 2 minimizes inter + intra instead of inter alone.
    pub stage2_keep_intra: bool,
    pub background_weight: BackgroundWeight,
    pub inter_direction: InterDirection,
    pub augment: AugmentConfig,
    /// Fraction of the source set held out for checkpoint selection.
    pub source_holdout: f64,
    pub execution: Execution,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            gamma: 0.75,
            eta: 0.05,
            k: 10,
            sigma: 0.10,
            alpha: 0.99,
            source_epochs: 200,
            stage_epochs: (10, 10),
            lr_source: 1e-3,
            lr_adapt: 5e-4,
            batch_size: 8,
            seed: 0,
            mix_ratio_range: (0.25, 0.5),
            optimizer: Optimizer::Adam,
            stage2_keep_intra: false,
            background_weight: BackgroundWeight::default(),
            inter_direction: InterDirection::default(),
            augment: AugmentConfig::default(),
            source_holdout: 0.1,
            execution: Execution::default(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        self.pseudo_label().validate()?;
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::config(format!("sigma must lie in (0, 1), got {}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.lr_source > 0.0 && self.lr_adapt > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        let (lo, hi) = self.mix_ratio_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::config(format!("mix_ratio_range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1")));
        }
        if !(0.0..1.0).contains(&self.source_holdout) {
            return Err(Error::config("source_holdout must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn pseudo_label(&self) -> PseudoLabelConfig {
        PseudoLabelConfig {
            gamma: self.gamma,
            eta: self.eta,
            k: self.k,
            background_weight: self.background_weight,
        }
    }

    pub fn mixing(&self) -> MixConfig {
        MixConfig {
            ratio_range: self.mix_ratio_range,
            augment: self.augment.clone(),
            inter_direction: self.inter_direction,
        }
    }

    pub(crate) fn adam(&self, lr: f64) -> AdamConfig {
        match self.optimizer {
            Optimizer::Adam => AdamConfig { lr, ..AdamConfig::default() },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = AdaptConfig::default();
        let v = serde_json::to_value(&cfg).unwrap();
        assert_eq!(v["K"], 10);
        assert_eq!(v["stage_epochs"], serde_json::json!([10, 10]));
        let back: AdaptConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<AdaptConfig>(r#"{"gama": 0.7}"#).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let cfg = AdaptConfig { sigma: 1.0, ..Default::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("sigma"));
        let cfg = AdaptConfig { k: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
