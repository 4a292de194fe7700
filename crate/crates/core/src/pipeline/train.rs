use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClipGradient, ForwardOutput, Mode, ModelConfig, PreparedClip, RiskModel, TrainingMeta};
use crate::numcore::{AdamConfig, AdamState, DecayMode};
use crate::scenegraph::RiskLabel;

use super::metrics::{auc_rank, ConfusionMatrix};
use super::split::{class_weights, stratified_split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub split_ratio: f64,
    pub n_splits: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
    /// Share of each training split held out for model selection. With 0
    /// the selection falls back to the training loss.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            split_ratio: 0.7,
            n_splits: 10,
            batch_size: 16,
            epochs: 200,
            learning_rate: 5e-4,
            weight_decay: 5e-4,
            decay_mode: DecayMode::LrSchedule,
            val_fraction: 0.15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "train.split_ratio must be in (0, 1), got {}",
                self.split_ratio
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if self.n_splits == 0 {
            return Err(Error::Config("train.n_splits must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "train.val_fraction must be in [0, 1), got {}",
                self.val_fraction
            )));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            decay_mode: self.decay_mode,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Loss used for model selection: validation, or training loss in eval
    /// mode when there is no validation set.
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RiskModel<f64>,
    pub meta: TrainingMeta,
    pub log: Vec<EpochLog>,
    pub fit: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Stream of random numbers keyed by a seed and a path of counters.
pub(crate) fn derived_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    // SplitMix64 finaliser over the path keeps nearby keys uncorrelated.
    let mut h = seed;
    for &p in path {
        h = h.wrapping_add(p.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    ChaCha8Rng::seed_from_u64(h)
}

pub(crate) fn label_of(c: &PreparedClip) -> Result<RiskLabel> {
    c.label
        .ok_or_else(|| Error::Label(format!("clip {} has no label", c.clip_id)))
}

/// Mean class-weighted loss in inference mode.
pub fn mean_loss(model: &RiskModel<f64>, data: &[PreparedClip], idx: &[usize], weights: [f64; 2]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::Usage("loss over an empty set".into()));
    }
    let losses: Vec<f64> = idx
        .par_iter()
        .map(|&i| model.clip_loss(&data[i], label_of(&data[i])?, weights))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / idx.len() as f64)
}

/// Mini-batch Adam training with selection of the epoch of lowest
/// validation loss (the initial parameters count as epoch 0).
///
/// Per-clip gradients may be computed in parallel; they are summed in a
/// fixed order, so results do not depend on the thread count.
pub fn train(model_cfg: &ModelConfig, cfg: &TrainConfig, data: &[PreparedClip], train_idx: &[usize], seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labels: Vec<RiskLabel> = train_idx
        .iter()
        .map(|&i| label_of(&data[i]))
        .collect::<Result<_>>()?;
    let weights = class_weights(labels.iter().copied())?;
    let (fit, validation) = if cfg.val_fraction > 0.0 {
        let s = stratified_split(&labels, 1.0 - cfg.val_fraction, derived_rng(seed, &[1]).next_u64())?;
        (
            s.train.iter().map(|&k| train_idx[k]).collect::<Vec<_>>(),
            s.test.iter().map(|&k| train_idx[k]).collect::<Vec<_>>(),
        )
    } else {
        (train_idx.to_vec(), Vec::new())
    };
    let select_idx = if validation.is_empty() { &fit } else { &validation };

    let mut model = RiskModel::<f64>::new(model_cfg.clone(), seed)?;
    let mut adam = AdamState::new(cfg.adam(), &model.params);
    let mut best_loss = mean_loss(&model, data, select_idx, weights)?;
    let mut best = (model.params.clone(), 0usize);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order = fit.clone();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut derived_rng(seed, &[2, epoch as u64]));
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<ClipGradient<f64>>> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = derived_rng(seed, &[3, epoch as u64, i as u64]);
                    model.clip_gradient(&data[i], label_of(&data[i])?, weights, Mode::Train(&mut rng))
                })
                .collect();
            let mut sum: Option<Vec<Vec<f64>>> = None;
            for r in results {
                let g = r.map_err(|e| Error::Training(format!("epoch {epoch}, batch {b}: {e}")))?;
                if !g.loss.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss at epoch {epoch}, batch {b}"
                    )));
                }
                epoch_loss += g.loss;
                match &mut sum {
                    None => sum = Some(g.grads),
                    Some(acc) => {
                        for (a, x) in acc.iter_mut().zip(&g.grads) {
                            for (p, q) in a.iter_mut().zip(x) {
                                *p += q;
                            }
                        }
                    }
                }
            }
            let mut grads = sum.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= inv);
            adam.step(&mut model.params, &grads, epoch - 1)
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {b}: {e}")))?;
        }
        let sel = mean_loss(&model, data, select_idx, weights)?;
        if !sel.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        log.push(EpochLog {
            epoch,
            train_loss: epoch_loss / fit.len() as f64,
            val_loss: sel,
            lr: cfg.adam().lr_at(epoch - 1),
        });
        log::debug!("epoch {epoch}: train {:.5} select {:.5}", epoch_loss / fit.len() as f64, sel);
        if sel < best_loss {
            best_loss = sel;
            best = (model.params.clone(), epoch);
        }
    }
    model.params = best.0;
    Ok(TrainOutcome {
        model,
        meta: TrainingMeta {
            seed,
            epoch: best.1,
            val_loss: Some(best_loss),
            class_weights: Some(weights),
        },
        log,
        fit,
        validation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub confusion: ConfusionMatrix,
}

/// Inference over `data[idx]`, in order.
pub fn predict(model: &RiskModel<f64>, data: &[PreparedClip], idx: &[usize]) -> Result<Vec<ForwardOutput<f64>>> {
    idx.par_iter().map(|&i| model.forward_clip(&data[i])).collect()
}

/// Accuracy (argmax), rank AUC and confusion matrix over `data[idx]`.
pub fn evaluate(model: &RiskModel<f64>, data: &[PreparedClip], idx: &[usize]) -> Result<EvalReport> {
    let outs = predict(model, data, idx)?;
    let mut cm = ConfusionMatrix::default();
    let (mut risky, mut safe) = (Vec::new(), Vec::new());
    for (&i, o) in idx.iter().zip(&outs) {
        let truth = label_of(&data[i])?;
        cm.add(truth, o.predicted());
        match truth {
            RiskLabel::Risky => risky.push(o.probs[1]),
            RiskLabel::Safe => safe.push(o.probs[1]),
        }
    }
    let auc = auc_rank(&risky, &safe);
    if auc.is_none() {
        log::warn!("evaluation set has a single class; AUC is undefined");
    }
    Ok(EvalReport {
        n: idx.len(),
        accuracy: cm.accuracy(),
        auc,
        confusion: cm,
    })
}
