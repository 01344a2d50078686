use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{assd, dice, largest_component};
use crate::data::{DatasetManifest, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{predict, SegModel};
use crate::planes::{LabelMap, Mask, Planes, ProbMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub threshold: f32,
    /// Keep only the largest connected component per channel.
    pub lcc_filter: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { threshold: 0.5, lcc_filter: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub id: String,
    pub dice: Vec<f64>,
    pub assd: Vec<f64>,
    /// Per class: ASSD is the empty-mask sentinel.
    pub assd_sentinel: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub name: String,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub assd_mean: f64,
    pub assd_std: f64,
    pub sentinel_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub checkpoint: Option<String>,
    pub options: EvalOptions,
    pub classes: Vec<ClassSummary>,
    /// Class-averaged Dice; the single-column figure used for ablations.
    pub mean_dice: f64,
    pub mean_assd: f64,
    pub samples: Vec<SampleEval>,
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.clone().sum::<f64>() / n as f64;
    let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

fn binarize(p: &ProbMap, c: usize, threshold: f32, lcc: bool) -> Mask {
    let data = p.plane(c).iter().map(|&v| (v >= threshold) as u8).collect();
    let m = Planes::from_vec(1, p.height, p.width, data).expect("plane dims");
    if lcc {
        largest_component(&m)
    } else {
        m
    }
}

/// Scores already-computed probability maps against ground truth.
pub fn evaluate_predictions(
    dataset: &str,
    ids: &[String],
    preds: &[ProbMap],
    gts: &[&LabelMap],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if ids.len() != preds.len() || ids.len() != gts.len() {
        return Err(Error::contract("evaluation inputs differ in length"));
    }
    let mut samples = Vec::with_capacity(ids.len());
    for ((id, p), gt) in ids.iter().zip(preds).zip(gts) {
        p.ensure_dims(gt)?;
        let mut s = SampleEval { id: id.clone(), dice: vec![], assd: vec![], assd_sentinel: vec![] };
        for c in 0..p.channels {
            let pm = binarize(p, c, opts.threshold, opts.lcc_filter);
            let gm = gt.channel(c);
            s.dice.push(dice(&pm, &gm)?);
            let a = assd(&pm, &gm)?;
            s.assd.push(a.value);
            s.assd_sentinel.push(a.sentinel);
        }
        samples.push(s);
    }
    let n_classes = preds.first().map_or(CLASS_NAMES.len(), |p| p.channels);
    let classes: Vec<ClassSummary> = (0..n_classes)
        .map(|c| {
            let (dice_mean, dice_std) = mean_std(samples.iter().map(|s| s.dice[c]));
            let (assd_mean, assd_std) = mean_std(samples.iter().map(|s| s.assd[c]));
            ClassSummary {
                name: CLASS_NAMES.get(c).map_or_else(|| format!("class{c}"), |n| n.to_string()),
                dice_mean,
                dice_std,
                assd_mean,
                assd_std,
                sentinel_count: samples.iter().filter(|s| s.assd_sentinel[c]).count(),
            }
        })
        .collect();
    let k = classes.len() as f64;
    Ok(EvalReport {
        dataset: dataset.to_string(),
        checkpoint: None,
        options: *opts,
        mean_dice: classes.iter().map(|c| c.dice_mean).sum::<f64>() / k,
        mean_assd: classes.iter().map(|c| c.assd_mean).sum::<f64>() / k,
        classes,
        samples,
    })
}

/// Deterministic forward over the manifest, then per-class scoring.
pub fn evaluate(model: &SegModel, manifest: &DatasetManifest, opts: &EvalOptions, exec: Execution) -> Result<EvalReport> {
    let mut gts = Vec::with_capacity(manifest.len());
    for r in &manifest.records {
        gts.push(r.gt.as_ref().ok_or_else(|| Error::contract(format!("record {} has no ground truth", r.id)))?);
    }
    let preds: Vec<ProbMap> = exec
        .map(&manifest.records, |_, r| predict(model, &r.image))
        .into_iter()
        .collect::<Result<_>>()?;
    evaluate_predictions(&manifest.name, &manifest.ids(), &preds, &gts, opts)
}

impl EvalReport {
    pub fn with_checkpoint(mut self, path: impl Into<String>) -> Self {
        self.checkpoint = Some(path.into());
        self
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id");
        for c in &self.classes {
            let _ = write!(s, ",{0}_dice,{0}_assd,{0}_assd_sentinel", c.name);
        }
        s.push('\n');
        for smp in &self.samples {
            s.push_str(&smp.id);
            for c in 0..self.classes.len() {
                let _ = write!(s, ",{:.6},{:.6},{}", smp.dice[c], smp.assd[c], smp.assd_sentinel[c]);
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, json: &Path, csv: Option<&Path>) -> Result<()> {
        std::fs::write(json, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(json, e))?;
        if let Some(csv) = csv {
            std::fs::write(csv, self.to_csv()).map_err(|e| Error::io(csv, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|_| Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "run `sfda eval` first".into(),
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn class(&self, name: &str) -> Option<&ClassSummary> {
        self.classes.iter().find(|c| c.name == name)
    }
}

/// Console table: one row per labelled report, Dice ↑ / ASSD ↓ per class.
pub fn render_table(rows: &[(&str, &EvalReport)]) -> String {
    let names: Vec<&str> = rows.first().map_or(vec![], |(_, r)| r.classes.iter().map(|c| c.name.as_str()).collect());
    let mut s = format!("{:<24}", "Method");
    for n in &names {
        let _ = write!(s, " | {:>15} {:>13}", format!("{n} Dice ↑"), "ASSD ↓");
    }
    s.push_str(" | mean Dice\n");
    s.push_str(&"-".repeat(s.chars().count() - 1));
    s.push('\n');
    for (label, r) in rows {
        let _ = write!(s, "{label:<24}");
        for c in &r.classes {
            let _ = write!(s, " | {:>6.2} ± {:<6.2} {:>6.2} ± {:<4.2}", c.dice_mean, c.dice_std, c.assd_mean, c.assd_std);
        }
        let _ = writeln!(s, " | {:>6.2}", r.mean_dice);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_pair_fixture() {
        // sample a: disc perfect, cup misses one of two pixels
        // sample b: disc shifted one column, cup predicted empty
        let gt_a = Planes::from_vec(2, 2, 3, vec![1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0]).unwrap();
        let p_a = Planes::from_vec(2, 2, 3, vec![0.9, 0.8, 0.1, 0.0, 0.0, 0.0, 0.6, 0.4, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let gt_b = Planes::from_vec(2, 1, 4, vec![1, 0, 0, 0, 1, 0, 0, 0]).unwrap();
        let p_b = Planes::from_vec(2, 1, 4, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let opts = EvalOptions { threshold: 0.5, lcc_filter: false };
        let ra = evaluate_predictions("a", &["a".into()], &[p_a], &[&gt_a], &opts).unwrap();
        assert_eq!(ra.samples[0].dice, vec![100.0, 100.0 * 2.0 / 3.0]);
        assert_eq!(ra.samples[0].assd, vec![0.0, 0.25]);
        let rb = evaluate_predictions("b", &["b".into()], &[p_b], &[&gt_b], &opts).unwrap();
        assert_eq!(rb.samples[0].dice, vec![0.0, 0.0]);
        assert_eq!(rb.samples[0].assd[0], 1.0);
        assert!(rb.samples[0].assd_sentinel[1]);
        assert_eq!(rb.samples[0].assd[1], 17f64.sqrt());
        assert_eq!(rb.classes[1].sentinel_count, 1);
        assert_eq!(rb.mean_dice, 0.0);
    }
}
