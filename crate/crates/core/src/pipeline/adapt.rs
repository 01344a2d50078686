use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::AdaptConfig;
use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::mixing::{inter_step, intra_step, plain_step, StepOutput};
use crate::model::{ema_update, SegModel};
use crate::nn::Adam;
use crate::planes::Image;
use crate::rng::{self, stream};
use crate::selection::{partition_target, Partition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetChoice {
    All,
    Reliable,
}

/// The training objective of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Denoised self-training without mixing.
    Plain(SubsetChoice),
    /// Intra-domain patch mixing.
    Intra(SubsetChoice),
    /// Reliable × unreliable patch mixing.
    Inter,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let set = |s: &SubsetChoice| match s {
            SubsetChoice::All => "all",
            SubsetChoice::Reliable => "reliable",
        };
        match self {
            Objective::Plain(s) => write!(f, "plain({})", set(s)),
            Objective::Intra(s) => write!(f, "intra({})", set(s)),
            Objective::Inter => f.write_str("inter"),
        }
    }
}

/// Component-ablation configurations; [`Variant::Full`] is the method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Teacher–student self-training with the denoise filter on all target data.
    Baseline,
    /// Baseline plus intra-domain mixing over all target data.
    Dpm,
    /// Self-training on the reliable subset only.
    Reliable,
    /// Intra-domain mixing on the reliable subset only.
    ReliableDpm,
    /// Intra-domain mixing on the reliable subset, then inter-domain mixing.
    #[default]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Baseline, Variant::Dpm, Variant::Reliable, Variant::ReliableDpm, Variant::Full];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::Dpm => "+ DPM",
            Variant::Reliable => "+ Reliable set",
            Variant::ReliableDpm => "+ Reliable set + DPM",
            Variant::Full => "Full modules",
        }
    }

    pub fn stages(self) -> [Objective; 2] {
        use Objective::*;
        use SubsetChoice::*;
        match self {
            Variant::Baseline => [Plain(All), Plain(All)],
            Variant::Dpm => [Intra(All), Intra(All)],
            Variant::Reliable => [Plain(Reliable), Plain(Reliable)],
            Variant::ReliableDpm => [Intra(Reliable), Intra(Reliable)],
            Variant::Full => [Intra(Reliable), Inter],
        }
    }

    fn needs_partition(self) -> bool {
        self.stages().iter().any(|o| !matches!(o, Objective::Plain(SubsetChoice::All) | Objective::Intra(SubsetChoice::All)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: usize,
    pub epoch: usize,
    pub objective: Objective,
    pub steps: usize,
    pub mean_loss: f64,
    /// Loss-bearing pixels per training example, as a fraction of all labels.
    pub masked_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct AdaptRun {
    pub student: SegModel,
    pub teacher: SegModel,
    pub partition: Option<Partition>,
    pub history: Vec<StageLog>,
    /// Stage 2 had no unreliable samples and trained intra-domain on all data.
    pub stage2_fallback: bool,
    pub variant: Variant,
}

fn ids_to_images<'a>(target: &'a DatasetManifest, ids: &[String]) -> Vec<&'a Image> {
    target.subset(ids).into_iter().map(|r| &r.image).collect()
}

/// Two-stage teacher–student adaptation of `source` on the unlabelled
/// `target`. Teacher and student start from the source weights; the teacher
/// follows the student by EMA after every optimizer step. Returns the final
/// student.
pub fn adapt(source: &SegModel, target: &DatasetManifest, cfg: &AdaptConfig, variant: Variant) -> Result<AdaptRun> {
    adapt_with_partition(source, target, cfg, variant, None)
}

/// [`adapt`] with a precomputed partition of `target` (for example one
/// loaded from disk). It must have been computed at `cfg.sigma`.
pub fn adapt_with_partition(
    source: &SegModel,
    target: &DatasetManifest,
    cfg: &AdaptConfig,
    variant: Variant,
    partition: Option<Partition>,
) -> Result<AdaptRun> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::contract("target manifest is empty"));
    }
    let exec = cfg.execution;
    let all: Vec<&Image> = target.records.iter().map(|r| &r.image).collect();
    let partition = match (variant.needs_partition(), partition) {
        (false, _) => None,
        (true, Some(p)) => {
            if (p.sigma - cfg.sigma).abs() > 1e-12 {
                return Err(Error::config(format!("partition was computed at sigma {} but the run uses {}", p.sigma, cfg.sigma)));
            }
            let known: std::collections::HashSet<&str> = target.records.iter().map(|r| r.id.as_str()).collect();
            if p.scores.len() != target.len() || p.scores.iter().any(|s| !known.contains(s.id.as_str())) {
                return Err(Error::contract("partition does not match the target manifest"));
            }
            Some(p)
        }
        (true, None) => Some(partition_target(target, source, cfg.sigma, exec)?),
    };
    let (reliable, unreliable) = match &partition {
        Some(p) => (ids_to_images(target, &p.reliable_ids), ids_to_images(target, &p.unreliable_ids)),
        None => (all.clone(), Vec::new()),
    };

    let mut student = source.clone();
    let mut teacher = source.clone();
    let mut opt = Adam::new(cfg.adam(cfg.lr_adapt), student.n_params());
    let pl = cfg.pseudo_label();
    let mix = cfg.mixing();
    let mut history = Vec::new();
    let mut stage2_fallback = false;
    let labels_per_image = (target.resolution.0 * target.resolution.1 * source.config().out_channels) as f64;

    for (stage, (&objective, &epochs)) in variant.stages().iter().zip([cfg.stage_epochs.0, cfg.stage_epochs.1].iter()).enumerate() {
        let objective = if objective == Objective::Inter && unreliable.is_empty() {
            if epochs > 0 {
                log::warn!("unreliable subset is empty; stage 2 falls back to intra-domain mixing over all target data");
            }
            stage2_fallback = true;
            Objective::Intra(SubsetChoice::All)
        } else {
            objective
        };
        let pool: &[&Image] = match objective {
            Objective::Plain(SubsetChoice::All) | Objective::Intra(SubsetChoice::All) => &all,
            _ => &reliable,
        };
        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(&mut rng::rng(cfg.seed, &[stream::SHUFFLE, 100 + stage as u64, epoch as u64]));
            let mut u_order: Vec<usize> = (0..unreliable.len()).collect();
            u_order.shuffle(&mut rng::rng(cfg.seed, &[stream::SHUFFLE, 200 + stage as u64, epoch as u64]));
            let (mut loss_sum, mut masked, mut examples, mut steps) = (0.0, 0usize, 0usize, 0usize);
            for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let seed = rng::derive(cfg.seed, &[stream::PAIRING, stage as u64, epoch as u64, step as u64]);
                let batch: Vec<&Image> = chunk.iter().map(|&i| pool[i]).collect();
                let out: StepOutput = match objective {
                    Objective::Plain(_) => plain_step(&batch, &student, &teacher, &pl, &mix, seed, exec)?,
                    Objective::Intra(_) => intra_step(&batch, &student, &teacher, &pl, &mix, seed, exec)?,
                    Objective::Inter => {
                        let u_batch: Vec<&Image> = (0..batch.len())
                            .map(|j| unreliable[u_order[(step * cfg.batch_size + j) % u_order.len()]])
                            .collect();
                        let mut out = inter_step(&batch, &u_batch, &student, &teacher, &pl, &mix, seed, exec)?;
                        if cfg.stage2_keep_intra {
                            let intra = intra_step(&batch, &student, &teacher, &pl, &mix, rng::derive(seed, &[1]), exec)?;
                            out.loss += intra.loss;
                            out.masked_pixels += intra.masked_pixels;
                            out.grad.iter_mut().zip(intra.grad).for_each(|(a, b)| *a += b);
                        }
                        out
                    }
                };
                opt.step(student.params_mut(), &out.grad);
                ema_update(teacher.params_mut(), student.params(), cfg.alpha)?;
                loss_sum += out.loss;
                masked += out.masked_pixels;
                examples += batch.len();
                steps += 1;
            }
            let log = StageLog {
                stage: stage + 1,
                epoch,
                objective,
                steps,
                mean_loss: loss_sum / steps.max(1) as f64,
                masked_fraction: masked as f64 / (examples.max(1) as f64 * labels_per_image),
            };
            log::info!("stage {} epoch {epoch}: {:?} loss {:.4} masked {:.3}", log.stage, objective, log.mean_loss, log.masked_fraction);
            history.push(log);
        }
    }
    Ok(AdaptRun { student, teacher, partition, history, stage2_fallback, variant })
}
