use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{adapt, AdaptConfig, Variant};
use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalOptions};
use crate::model::SegModel;

/// Unreliable-set ratios of the published sweep.
pub const SIGMA_GRID: [f64; 5] = [0.01, 0.05, 0.10, 0.15, 0.25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub sigma: f64,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    /// Class-mean Dice per seed.
    pub dice: Vec<f64>,
    pub disc_dice: f64,
    pub cup_dice: f64,
    pub mean_dice: f64,
    pub mean_assd: f64,
    pub unreliable_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub kind: String,
    pub source_only_dice: f64,
    pub rows: Vec<AblationRow>,
}

#[allow(clippy::too_many_arguments)]
fn run_row(
    label: String,
    variant: Variant,
    source: &SegModel,
    target_train: &DatasetManifest,
    target_test: &DatasetManifest,
    cfg: &AdaptConfig,
    seeds: &[u64],
    eval: &EvalOptions,
) -> Result<AblationRow> {
    let (mut dice, mut disc, mut cup, mut assd, mut counts) = (vec![], 0.0, 0.0, 0.0, vec![]);
    for &seed in seeds {
        let run_cfg = AdaptConfig { seed, ..cfg.clone() };
        let run = adapt(source, target_train, &run_cfg, variant)?;
        let report = evaluate(&run.student, target_test, eval, cfg.execution)?;
        log::info!("{label} seed {seed}: dice {:.2}", report.mean_dice);
        dice.push(report.mean_dice);
        disc += report.classes[0].dice_mean;
        cup += report.classes.get(1).map_or(0.0, |c| c.dice_mean);
        assd += report.mean_assd;
        counts.push(run.partition.as_ref().map_or(0, |p| p.unreliable_ids.len()));
    }
    let n = seeds.len() as f64;
    Ok(AblationRow {
        label,
        sigma: cfg.sigma,
        variant,
        seeds: seeds.to_vec(),
        mean_dice: dice.iter().sum::<f64>() / n,
        dice,
        disc_dice: disc / n,
        cup_dice: cup / n,
        mean_assd: assd / n,
        unreliable_counts: counts,
    })
}

fn check(seeds: &[u64], target_test: &DatasetManifest) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::config("ablation needs at least one seed"));
    }
    if !target_test.has_ground_truth() {
        return Err(Error::contract("ablation evaluation set has no ground truth"));
    }
    Ok(())
}

/// Full adaptation per σ with shared seeds; Dice on the labelled test split.
pub fn run_ablation_sigma(
    source: &SegModel,
    target_train: &DatasetManifest,
    target_test: &DatasetManifest,
    cfg: &AdaptConfig,
    sigmas: &[f64],
    seeds: &[u64],
    eval: &EvalOptions,
) -> Result<AblationTable> {
    check(seeds, target_test)?;
    let source_only = evaluate(source, target_test, eval, cfg.execution)?.mean_dice;
    let rows = sigmas
        .iter()
        .map(|&sigma| {
            let c = AdaptConfig { sigma, ..cfg.clone() };
            run_row(format!("{:.0}%", sigma * 100.0), Variant::Full, source, target_train, target_test, &c, seeds, eval)
        })
        .collect::<Result<_>>()?;
    Ok(AblationTable { kind: "sigma".into(), source_only_dice: source_only, rows })
}

/// The five component configurations with shared seeds.
pub fn run_ablation_components(
    source: &SegModel,
    target_train: &DatasetManifest,
    target_test: &DatasetManifest,
    cfg: &AdaptConfig,
    seeds: &[u64],
    eval: &EvalOptions,
) -> Result<AblationTable> {
    check(seeds, target_test)?;
    let source_only = evaluate(source, target_test, eval, cfg.execution)?.mean_dice;
    let rows = Variant::ALL
        .iter()
        .map(|&v| run_row(v.label().to_string(), v, source, target_train, target_test, cfg, seeds, eval))
        .collect::<Result<_>>()?;
    Ok(AblationTable { kind: "components".into(), source_only_dice: source_only, rows })
}

impl AblationTable {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<24} | {:>9} | {:>9} | {:>9} | {:>8} | per-seed Dice\n",
            if self.kind == "sigma" { "Unreliable set (σ)" } else { "Configuration" },
            "Dice",
            "disc",
            "cup",
            "ASSD"
        );
        s.push_str(&"-".repeat(90));
        s.push('\n');
        let _ = writeln!(s, "{:<24} | {:>9.2} |", "Source only", self.source_only_dice);
        for r in &self.rows {
            let per: Vec<String> = r.dice.iter().map(|d| format!("{d:.2}")).collect();
            let _ = writeln!(
                s,
                "{:<24} | {:>9.2} | {:>9.2} | {:>9.2} | {:>8.2} | {}",
                r.label,
                r.mean_dice,
                r.disc_dice,
                r.cup_dice,
                r.mean_assd,
                per.join(" ")
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,variant,sigma,mean_dice,disc_dice,cup_dice,mean_assd,per_seed_dice\n");
        for r in &self.rows {
            let per: Vec<String> = r.dice.iter().map(|d| format!("{d:.4}")).collect();
            let variant = serde_json::to_value(r.variant).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{:.4},{:.4},{:.4},{}",
                r.label, variant, r.sigma, r.mean_dice, r.disc_dice, r.cup_dice, r.mean_assd, per.join(";")
            );
        }
        s
    }
}
