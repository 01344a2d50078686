//! Checkpoint archive:
//!
//! ```text
//! b"SFDACKPT" | u32 LE format version | u64 LE header length | header JSON | f32 LE parameters
//! ```
//!
//! The header carries the version, network config, the canonical parameter
//! index (name, shape, offset), epoch, metric summary and a free-form config
//! snapshot.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SegModel;
use crate::error::{Error, Result};
use crate::nn::segnet::ParamInfo;
use crate::nn::{NetConfig, SegNet};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SFDACKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    net: NetConfig,
    params: Vec<ParamInfo>,
    epoch: usize,
    metrics: BTreeMap<String, f64>,
    config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub net: NetConfig,
    pub param_index: Vec<ParamInfo>,
    pub params: Vec<f32>,
    pub config: serde_json::Value,
    pub epoch: usize,
    pub metrics: BTreeMap<String, f64>,
}

impl Checkpoint {
    pub fn from_model(model: &SegModel, config: serde_json::Value, epoch: usize, metrics: BTreeMap<String, f64>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            net: model.config().clone(),
            param_index: model.param_infos().to_vec(),
            params: model.params().to_vec(),
            config,
            epoch,
            metrics,
        }
    }

    pub fn to_model(&self) -> Result<SegModel> {
        let mut model = SegNet::new(self.net.clone(), 0)?;
        if model.param_infos() != self.param_index.as_slice() {
            return Err(Error::Checkpoint("parameter index does not match the network config".into()));
        }
        model.set_params(&self.params)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: self.version,
            net: self.net.clone(),
            params: self.param_index.clone(),
            epoch: self.epoch,
            metrics: self.metrics.clone(),
            config: self.config.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.version != version {
            return Err(bad("header version disagrees with archive version"));
        }
        let raw = &bytes[20 + hlen..];
        let expected: usize = header.params.iter().map(ParamInfo::len).sum();
        if raw.len() != 4 * expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} parameters, found {} bytes",
                raw.len()
            )));
        }
        let params = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Checkpoint {
            version,
            net: header.net,
            param_index: header.params,
            params,
            config: header.config,
            epoch: header.epoch,
            metrics: header.metrics,
        })
    }

    /// SHA-256 of the serialized archive.
    pub fn content_hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        Ok(Sha256::digest(self.to_bytes()?).iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "train or adapt a model first".into(),
            });
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Backbone;

    #[test]
    fn round_trips_bit_exactly() {
        let mut model: SegModel = SegNet::new(Backbone::UnetTiny.net_config(0.1), 5).unwrap();
        model.params_mut()[0] = f32::MIN_POSITIVE / 3.0; // subnormal survives
        let mut metrics = BTreeMap::new();
        metrics.insert("dice".to_string(), 0.1 + 0.2);
        let ck = Checkpoint::from_model(&model, serde_json::json!({"lr": 5e-4}), 3, metrics);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let restored = back.to_model().unwrap();
        let bits = |m: &SegModel| m.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&restored), bits(&model));
    }

    #[test]
    fn rejects_garbage_and_bad_versions() {
        assert!(Checkpoint::from_bytes(b"not a checkpoint at all").is_err());
        let model: SegModel = SegNet::new(Backbone::UnetTiny.net_config(0.0), 1).unwrap();
        let mut bytes = Checkpoint::from_model(&model, serde_json::Value::Null, 0, BTreeMap::new())
            .to_bytes()
            .unwrap();
        bytes[8] = 9;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
