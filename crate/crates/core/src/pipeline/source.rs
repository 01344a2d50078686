use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::AdaptConfig;
use crate::data::{DatasetManifest, SampleRecord};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_predictions, EvalOptions};
use crate::model::{predict, to_real, Checkpoint, SegModel};
use crate::nn::{Adam, NetConfig};
use crate::planes::ProbMap;
use crate::rng::{self, stream};

const DICE_SMOOTH: f64 = 1.0;
const EPS: f64 = 1e-7;

/// Mean over channels of pixel-mean BCE plus soft Dice loss; returns the
/// loss and `dL/dp`.
pub fn source_loss(p: &[f32], gt: &[u8], channels: usize) -> (f64, Vec<f32>) {
    let area = p.len() / channels;
    let mut grad = vec![0f32; p.len()];
    let mut total = 0.0;
    for c in 0..channels {
        let (pc, gc) = (&p[c * area..(c + 1) * area], &gt[c * area..(c + 1) * area]);
        let (mut bce, mut inter, mut sum) = (0.0, 0.0, 0.0);
        for (&pv, &g) in pc.iter().zip(gc) {
            let (pv, g) = (pv as f64, g as f64);
            let q = pv.clamp(EPS, 1.0 - EPS);
            bce -= g * q.ln() + (1.0 - g) * (1.0 - q).ln();
            inter += pv * g;
            sum += pv + g;
        }
        let num = 2.0 * inter + DICE_SMOOTH;
        let den = sum + DICE_SMOOTH;
        total += bce / area as f64 + 1.0 - num / den;
        let gs = &mut grad[c * area..(c + 1) * area];
        for ((d, &pv), &g) in gs.iter_mut().zip(pc).zip(gc) {
            let (pv, g) = (pv as f64, g as f64);
            let mut v = -(2.0 * g * den - num) / (den * den);
            if (EPS..=1.0 - EPS).contains(&pv) {
                v += (pv - g) / (pv * (1.0 - pv)) / area as f64;
            }
            *d = (v / channels as f64) as f32;
        }
    }
    (total / channels as f64, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_dice: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SourceRun {
    /// Best holdout checkpoint (the last epoch when there is no holdout).
    pub checkpoint: Checkpoint,
    /// Deterministic training loss before the first update.
    pub initial_loss: f64,
    pub history: Vec<SourceEpoch>,
    pub best_epoch: usize,
}

fn deterministic_loss(model: &SegModel, records: &[&SampleRecord], cfg: &AdaptConfig) -> Result<f64> {
    let losses = cfg.execution.map(records, |_, r| -> Result<f64> {
        let p = predict(model, &r.image)?;
        Ok(source_loss(&p.data, &r.gt.as_ref().expect("checked").data, p.channels).0)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / records.len() as f64)
}

fn holdout_dice(model: &SegModel, records: &[&SampleRecord], cfg: &AdaptConfig) -> Result<f64> {
    let preds: Vec<ProbMap> = cfg
        .execution
        .map(records, |_, r| predict(model, &r.image))
        .into_iter()
        .collect::<Result<_>>()?;
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let gts: Vec<_> = records.iter().map(|r| r.gt.as_ref().expect("checked")).collect();
    Ok(evaluate_predictions("holdout", &ids, &preds, &gts, &EvalOptions::default())?.mean_dice)
}

/// Supervised training on the labelled source set with Adam; keeps the
/// parameters with the best class-mean holdout Dice.
pub fn train_source(source: &DatasetManifest, net: NetConfig, cfg: &AdaptConfig) -> Result<SourceRun> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::contract("source manifest is empty"));
    }
    if let Some(r) = source.records.iter().find(|r| r.gt.is_none()) {
        return Err(Error::contract(format!("source record {} has no ground truth", r.id)));
    }
    let n_holdout = (source.len() as f64 * cfg.source_holdout).round() as usize;
    let (train, holdout) = source.split_holdout(n_holdout);
    let mut model = SegModel::new(net, rng::derive(cfg.seed, &[stream::INIT]))?;
    let (h, w) = source.resolution;
    model.check_input(source.records[0].image.channels, h, w)?;
    let mut opt = Adam::new(cfg.adam(cfg.lr_source), model.n_params());

    let initial_loss = deterministic_loss(&model, &train, cfg)?;
    let mut history = Vec::with_capacity(cfg.source_epochs);
    let mut best: Option<(f64, usize, Vec<f32>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.source_epochs {
        order.shuffle(&mut rng::rng(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let parts = cfg.execution.map(batch, |j, &i| -> Result<(f64, Vec<f32>)> {
                let r = train[i];
                let mut g = rng::rng(cfg.seed, &[stream::DROPOUT, epoch as u64, step as u64, j as u64]);
                let trace = model.forward_trace(&to_real::<f32>(&r.image), h, w, Some(&mut g))?;
                let (loss, dp) = source_loss(&trace.probs, &r.gt.as_ref().expect("checked").data, model.config().out_channels);
                Ok((loss, model.backward(&trace, &dp)))
            });
            let mut grad = vec![0f32; model.n_params()];
            for part in parts {
                let (loss, g) = part?;
                epoch_loss += loss;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let inv = 1.0 / batch.len() as f32;
            grad.iter_mut().for_each(|v| *v *= inv);
            opt.step(model.params_mut(), &grad);
        }
        let train_loss = epoch_loss / train.len() as f64;
        let holdout_dice = if holdout.is_empty() { None } else { Some(holdout_dice(&model, &holdout, cfg)?) };
        log::info!("source epoch {epoch}: loss {train_loss:.4} holdout dice {holdout_dice:?}");
        let score = holdout_dice.unwrap_or(f64::NEG_INFINITY);
        if holdout_dice.is_none() || best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, epoch, model.params().to_vec()));
        }
        history.push(SourceEpoch { epoch, train_loss, holdout_dice });
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.set_params(&params)?;
            epoch
        }
        None => 0,
    };
    let mut metrics = BTreeMap::new();
    metrics.insert("initial_loss".to_string(), initial_loss);
    if let Some(e) = history.get(best_epoch) {
        metrics.insert("train_loss".to_string(), e.train_loss);
        if let Some(d) = e.holdout_dice {
            metrics.insert("holdout_dice".to_string(), d);
        }
    }
    let checkpoint = Checkpoint::from_model(&model, serde_json::to_value(cfg)?, best_epoch, metrics);
    Ok(SourceRun { checkpoint, initial_loss, history, best_epoch })
}
