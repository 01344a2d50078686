use serde::{Deserialize, Serialize};

use super::AdaptConfig;
use crate::data::{generate_synthetic, DatasetManifest, Domain, ShiftConfig, Split};
use crate::error::Result;
use crate::model::Backbone;
use crate::nn::NetConfig;
use crate::pseudolabel::BackgroundWeight;

/// The CPU-sized source → target benchmark: an unshifted labelled source
/// domain and a darker, gamma-shifted, slightly blurred and noisy target
/// domain with its own texture style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeskBenchmark {
    pub resolution: (usize, usize),
    pub n_source: usize,
    pub n_target_train: usize,
    pub n_target_test: usize,
    pub source_shift: ShiftConfig,
    pub target_shift: ShiftConfig,
    pub source_seed: u64,
    pub target_seed: u64,
}

impl Default for DeskBenchmark {
    fn default() -> Self {
        DeskBenchmark {
            resolution: (64, 64),
            n_source: 200,
            n_target_train: 200,
            n_target_test: 50,
            source_shift: ShiftConfig::identity(),
            target_shift: ShiftConfig {
                intensity_scale: 0.9,
                gamma: 1.2,
                blur_sigma: 0.5,
                noise_std: 0.02,
                texture_seed: 11,
            },
            source_seed: 1,
            target_seed: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeskData {
    pub source: DatasetManifest,
    /// Unlabelled during adaptation; ground truth is kept only for analysis.
    pub target_train: DatasetManifest,
    pub target_test: DatasetManifest,
}

impl DeskBenchmark {
    pub fn build(&self) -> Result<DeskData> {
        let source = generate_synthetic(self.n_source, self.resolution, &self.source_shift, self.source_seed)?.with_name("desk-source");
        let target = generate_synthetic(self.n_target_train + self.n_target_test, self.resolution, &self.target_shift, self.target_seed)?
            .with_domain(Domain::Target);
        let (train, test) = target.records.split_at(self.n_target_train);
        Ok(DeskData {
            source,
            target_train: DatasetManifest::new("desk-target-train", Split::Train, train.to_vec())?,
            target_test: DatasetManifest::new("desk-target-test", Split::Test, test.to_vec())?,
        })
    }

    /// `unet-small` with dropout 0.1, fixed to the benchmark resolution.
    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            resolution: Some(self.resolution),
            ..Backbone::UnetSmall.net_config(0.1)
        }
    }

    /// Defaults plus the two desk-scale settings: batches of 32, and the
    /// complement weight for background prototypes.
    pub fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig {
            source_epochs: 30,
            batch_size: 32,
            background_weight: BackgroundWeight::Complement,
            ..AdaptConfig::default()
        }
    }
}
