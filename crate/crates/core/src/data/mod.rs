//! Datasets: records, manifests, the synthetic shifted-domain generator,
//! benchmark ingestion and strong photometric augmentation.

mod augment;
mod benchmark;
mod io;
mod synth;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planes::{Image, LabelMap};

pub use augment::{strong_augment, AugmentConfig};
pub use benchmark::{load_benchmark, BenchmarkLayout, LoadOptions, LoadedDataset};
pub use io::{dataset_hash, load_dataset, save_dataset, DatasetMeta};
pub use synth::{generate_synthetic, ShiftConfig};

/// Output channel order for the fundus task.
pub const DISC: usize = 0;
pub const CUP: usize = 1;
pub const CLASS_NAMES: [&str; 2] = ["disc", "cup"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub image: Image,
    /// Per-class binary ground truth (disc, cup), when available.
    pub gt: Option<LabelMap>,
    pub domain: Domain,
}

impl SampleRecord {
    pub fn validate(&self) -> Result<()> {
        if self.image.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::contract(format!("{}: image values outside [0,1]", self.id)));
        }
        if let Some(gt) = &self.gt {
            if !gt.same_spatial(&self.image) {
                return Err(Error::shape(
                    format!("{}x{}", self.image.height, self.image.width),
                    format!("{}x{} ground truth", gt.height, gt.width),
                ));
            }
            if !gt.is_binary() {
                return Err(Error::contract(format!("{}: ground truth not binary", self.id)));
            }
            if gt.channels == 2 {
                let nested = gt.plane(CUP).iter().zip(gt.plane(DISC)).all(|(&c, &d)| c <= d);
                if !nested {
                    return Err(Error::contract(format!("{}: cup not contained in disc", self.id)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub records: Vec<SampleRecord>,
    pub resolution: (usize, usize),
}

impl DatasetManifest {
    /// Validates id uniqueness and that every record shares `resolution`.
    pub fn new(name: impl Into<String>, split: Split, records: Vec<SampleRecord>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::contract("dataset manifest must hold at least one record"))?;
        let resolution = (first.image.height, first.image.width);
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::contract(format!("duplicate sample id {}", r.id)));
            }
            if (r.image.height, r.image.width) != resolution {
                return Err(Error::shape(
                    format!("{}x{}", resolution.0, resolution.1),
                    format!("{}x{} for {}", r.image.height, r.image.width, r.id),
                ));
            }
        }
        Ok(DatasetManifest {
            name: name.into(),
            split,
            records,
            resolution,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn has_ground_truth(&self) -> bool {
        self.records.iter().all(|r| r.gt.is_some())
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        for r in &mut self.records {
            r.domain = domain;
        }
        self
    }

    /// Records whose ids appear in `ids`, in manifest order.
    pub fn subset(&self, ids: &[String]) -> Vec<&SampleRecord> {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        self.records.iter().filter(|r| wanted.contains(r.id.as_str())).collect()
    }

    /// Splits off the last `n_holdout` records.
    pub fn split_holdout(&self, n_holdout: usize) -> (Vec<&SampleRecord>, Vec<&SampleRecord>) {
        let n_holdout = n_holdout.min(self.len().saturating_sub(1));
        let cut = self.len() - n_holdout;
        (
            self.records[..cut].iter().collect(),
            self.records[cut..].iter().collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planes::Planes;

    fn rec(id: &str, h: usize) -> SampleRecord {
        SampleRecord {
            id: id.into(),
            image: Planes::zeros(3, h, h),
            gt: None,
            domain: Domain::Target,
        }
    }

    #[test]
    fn manifest_rejects_duplicates_and_mixed_resolution() {
        assert!(DatasetManifest::new("d", Split::Train, vec![rec("a", 4), rec("a", 4)]).is_err());
        assert!(DatasetManifest::new("d", Split::Train, vec![rec("a", 4), rec("b", 8)]).is_err());
        assert!(DatasetManifest::new("d", Split::Train, vec![]).is_err());
        let m = DatasetManifest::new("d", Split::Train, vec![rec("a", 4), rec("b", 4)]).unwrap();
        assert_eq!(m.resolution, (4, 4));
        assert_eq!(m.subset(&["b".into()]).len(), 1);
    }

    #[test]
    fn record_validation_checks_nesting() {
        let mut r = rec("a", 2);
        let mut gt = Planes::zeros(2, 2, 2);
        gt.plane_mut(CUP)[0] = 1;
        r.gt = Some(gt.clone());
        assert!(r.validate().is_err());
        gt.plane_mut(DISC)[0] = 1;
        r.gt = Some(gt);
        assert!(r.validate().is_ok());
    }
}
