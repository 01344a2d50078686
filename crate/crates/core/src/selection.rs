//! Hard-sample selection: split the target set into a reliable and an
//! unreliable subset. A sample is unreliable when it is both among the
//! top-σ highest-entropy predictions *and* among the σ least similar to the
//! feature centroid of the whole target set.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{self, SegModel};
use crate::planes::ProbMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub entropy: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub sigma: f64,
    /// Manifest order.
    pub reliable_ids: Vec<String>,
    /// Manifest order.
    pub unreliable_ids: Vec<String>,
    pub scores: Vec<SampleScore>,
    /// Entropy criterion, in rank order.
    pub high_entropy_ids: Vec<String>,
    /// Similarity criterion, in rank order.
    pub low_similarity_ids: Vec<String>,
    /// Samples whose pooled feature had zero norm (similarity forced to −1).
    #[serde(default)]
    pub zero_norm_ids: Vec<String>,
}

impl Partition {
    /// Both criteria disagreed completely, leaving nothing unreliable.
    pub fn unreliable_empty(&self) -> bool {
        self.unreliable_ids.is_empty()
    }

    /// Applies both selections to precomputed scores, which must be in
    /// manifest order.
    pub fn from_scores(scores: Vec<SampleScore>, sigma: f64) -> Result<Self> {
        let high = select_high_entropy(&scores, sigma)?;
        let low = select_by(&scores, sigma, |s| s.similarity, false)?;
        let both: HashSet<&str> = {
            let h: HashSet<&str> = high.iter().map(String::as_str).collect();
            low.iter().map(String::as_str).filter(|id| h.contains(id)).collect()
        };
        let (unreliable, reliable): (Vec<_>, Vec<_>) =
            scores.iter().map(|s| s.id.clone()).partition(|id| both.contains(id.as_str()));
        Ok(Partition {
            sigma,
            reliable_ids: reliable,
            unreliable_ids: unreliable,
            scores,
            high_entropy_ids: high,
            low_similarity_ids: low,
            zero_norm_ids: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "run `sfda partition` first".into(),
            });
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Mean binary entropy (nats) over every pixel and output channel, with
/// `0·ln 0 = 0`.
pub fn sample_entropy(p: &ProbMap) -> f64 {
    if p.data.is_empty() {
        return 0.0;
    }
    let xlogx = |x: f64| if x <= 0.0 { 0.0 } else { x * x.ln() };
    let total: f64 = p
        .data
        .iter()
        .map(|&v| {
            let v = (v as f64).clamp(0.0, 1.0);
            -(xlogx(v) + xlogx(1.0 - v))
        })
        .sum();
    total / p.data.len() as f64
}

/// `max(1, round(σ·n))`, capped at `n`.
pub fn selection_count(n: usize, sigma: f64) -> usize {
    ((sigma * n as f64).round() as usize).clamp(1, n.max(1))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("sigma must lie in (0, 1), got {sigma}")))
    }
}

fn select_by(scores: &[SampleScore], sigma: f64, key: impl Fn(&SampleScore) -> f64, descending: bool) -> Result<Vec<String>> {
    check_sigma(sigma)?;
    if scores.is_empty() {
        return Err(Error::contract("cannot select from an empty score list"));
    }
    let mut order: Vec<&SampleScore> = scores.iter().collect();
    order.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        let primary = if descending { kb.total_cmp(&ka) } else { ka.total_cmp(&kb) };
        primary.then_with(|| a.id.cmp(&b.id))
    });
    let k = selection_count(scores.len(), sigma);
    Ok(order[..k].iter().map(|s| s.id.clone()).collect())
}

/// The `round(σ·n)` highest-entropy ids; ties go to the smaller id.
pub fn select_high_entropy(scores: &[SampleScore], sigma: f64) -> Result<Vec<String>> {
    select_by(scores, sigma, |s| s.entropy, true)
}

/// Arithmetic mean of equal-length feature vectors.
pub fn centroid(features: &[Vec<f32>]) -> Result<Vec<f64>> {
    let first = features
        .first()
        .ok_or_else(|| Error::contract("centroid of an empty feature set"))?;
    let dim = first.len();
    let mut acc = vec![0.0f64; dim];
    for f in features {
        if f.len() != dim {
            return Err(Error::shape(dim, f.len()));
        }
        for (a, &v) in acc.iter_mut().zip(f) {
            *a += v as f64;
        }
    }
    let n = features.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Cosine similarity, or `None` when either vector has zero norm.
pub fn cosine_similarity(a: &[f32], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySelection {
    pub ids: Vec<String>,
    pub similarities: Vec<f64>,
    pub zero_norm_ids: Vec<String>,
}

/// The `round(σ·n)` ids least similar to `centroid`. Zero-norm features
/// count as similarity −1 and are reported.
pub fn select_low_similarity(
    ids: &[String],
    features: &[Vec<f32>],
    centroid: &[f64],
    sigma: f64,
) -> Result<SimilaritySelection> {
    if ids.len() != features.len() {
        return Err(Error::shape(ids.len(), features.len()));
    }
    let mut zero_norm_ids = Vec::new();
    let similarities: Vec<f64> = ids
        .iter()
        .zip(features)
        .map(|(id, f)| {
            cosine_similarity(f, centroid).unwrap_or_else(|| {
                log::warn!("sample {id} has a zero-norm feature vector");
                zero_norm_ids.push(id.clone());
                -1.0
            })
        })
        .collect();
    let scores: Vec<SampleScore> = ids
        .iter()
        .zip(&similarities)
        .map(|(id, &s)| SampleScore {
            id: id.clone(),
            entropy: 0.0,
            similarity: s,
        })
        .collect();
    Ok(SimilaritySelection {
        ids: select_by(&scores, sigma, |s| s.similarity, false)?,
        similarities,
        zero_norm_ids,
    })
}

/// Scores the whole target set with the source model's deterministic forward
/// and pooled encoder features, then partitions it.
pub fn partition_target(manifest: &DatasetManifest, source: &SegModel, sigma: f64, exec: Execution) -> Result<Partition> {
    check_sigma(sigma)?;
    let per_sample: Vec<(f64, Vec<f32>)> = exec
        .map(&manifest.records, |_, r| -> Result<(f64, Vec<f32>)> {
            let p = model::predict(source, &r.image)?;
            let e = model::encode(source, &r.image)?;
            Ok((sample_entropy(&p), e.pooled))
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let ids = manifest.ids();
    let features: Vec<Vec<f32>> = per_sample.iter().map(|(_, f)| f.clone()).collect();
    let z_p = centroid(&features)?;
    let sim = select_low_similarity(&ids, &features, &z_p, sigma)?;
    let scores = ids
        .iter()
        .zip(&per_sample)
        .zip(&sim.similarities)
        .map(|((id, (entropy, _)), &similarity)| SampleScore {
            id: id.clone(),
            entropy: *entropy,
            similarity,
        })
        .collect();
    let mut partition = Partition::from_scores(scores, sigma)?;
    partition.zero_norm_ids = sim.zero_norm_ids;
    if partition.unreliable_empty() {
        log::info!("entropy and similarity criteria are disjoint; unreliable subset is empty");
    }
    Ok(partition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planes::Planes;

    fn scores(entropies: &[f64]) -> Vec<SampleScore> {
        entropies
            .iter()
            .enumerate()
            .map(|(i, &e)| SampleScore {
                id: format!("id{i}"),
                entropy: e,
                similarity: 0.0,
            })
            .collect()
    }

    #[test]
    fn entropy_reference_values() {
        let certain = Planes::filled(2, 3, 3, 1.0f32);
        assert_eq!(sample_entropy(&certain), 0.0);
        let half = Planes::filled(1, 1, 1, 0.5f32);
        assert!((sample_entropy(&half) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn selection_examples() {
        let s = scores(&[0.1, 0.5, 0.3, 0.9, 0.2]);
        assert_eq!(select_high_entropy(&s, 0.2).unwrap(), vec!["id3"]);
        assert_eq!(select_high_entropy(&s, 0.4).unwrap(), vec!["id3", "id1"]);
        let flat = scores(&[0.4; 5]);
        assert_eq!(select_high_entropy(&flat, 0.2).unwrap(), vec!["id0"]);
        assert!(select_high_entropy(&[], 0.2).is_err());
        assert!(select_high_entropy(&s, 1.0).is_err());
    }

    #[test]
    fn centroid_examples() {
        assert_eq!(centroid(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(centroid(&[vec![3.0, -1.0]]).unwrap(), vec![3.0, -1.0]);
        assert!(centroid(&[]).is_err());
        assert!(centroid(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn zero_norm_features_rank_as_most_dissimilar() {
        let ids: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let feats = vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![0.2, 0.9]];
        let sel = select_low_similarity(&ids, &feats, &[1.0, 0.0], 1.0 / 3.0).unwrap();
        assert_eq!(sel.ids, vec!["b"]);
        assert_eq!(sel.similarities[1], -1.0);
        assert_eq!(sel.zero_norm_ids, vec!["b"]);
    }

    #[test]
    fn partition_is_the_intersection() {
        let mut s = scores(&[0.9, 0.8, 0.1, 0.2, 0.3]);
        for (x, sim) in s.iter_mut().zip([0.1, 0.9, 0.2, 0.8, 0.7]) {
            x.similarity = sim;
        }
        let p = Partition::from_scores(s, 0.4).unwrap();
        assert_eq!(p.high_entropy_ids, vec!["id0", "id1"]);
        assert_eq!(p.low_similarity_ids, vec!["id0", "id2"]);
        assert_eq!(p.unreliable_ids, vec!["id0"]);
        assert_eq!(p.reliable_ids, vec!["id1", "id2", "id3", "id4"]);
    }
}
