use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{GnnKind, ModelConfig, PoolKind, PreparedClip, RiskModel, TemporalMode};
use crate::scenegraph::{GraphRecord, RiskLabel};

use super::data::prepare_records;
use super::metrics::{mean, std_dev, ConfusionMatrix};
use super::split::{stratified_split, Split};
use super::train::{evaluate, label_of, train, EvalReport, TrainConfig, TrainOutcome};

/// Hex SHA-256 of a value's JSON form.
pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(value)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub split: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub val_loss: f64,
    pub epoch_selected: usize,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fingerprint: String,
    pub architecture: String,
    pub splits: Vec<SplitResult>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Over the splits where AUC is defined.
    pub mean_auc: Option<f64>,
    pub std_auc: Option<f64>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    fn from_splits(fingerprint: String, architecture: String, splits: Vec<SplitResult>) -> Self {
        let acc: Vec<f64> = splits.iter().map(|s| s.accuracy).collect();
        let auc: Vec<f64> = splits.iter().filter_map(|s| s.auc).collect();
        let mut confusion = ConfusionMatrix::default();
        for s in &splits {
            for (t, row) in s.confusion.0.iter().enumerate() {
                for (p, n) in row.iter().enumerate() {
                    confusion.0[t][p] += n;
                }
            }
        }
        Self {
            fingerprint,
            architecture,
            mean_accuracy: mean(&acc),
            std_accuracy: std_dev(&acc),
            mean_auc: (!auc.is_empty()).then(|| mean(&auc)),
            std_auc: (!auc.is_empty()).then(|| std_dev(&auc)),
            confusion,
            splits,
        }
    }

    /// `split,accuracy,auc,val_loss,epoch_selected`; an undefined AUC is an
    /// empty field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,accuracy,auc,val_loss,epoch_selected\n");
        for s in &self.splits {
            let auc = s.auc.map(|a| a.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{}", s.split, s.accuracy, auc, s.val_loss, s.epoch_selected)
                .expect("string write");
        }
        out
    }
}

/// A trained split: its plan, the selected model and the training log.
#[derive(Debug, Clone)]
pub struct SplitRun {
    pub split: Split,
    pub outcome: TrainOutcome,
}

#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub report: MetricsReport,
    pub runs: Vec<SplitRun>,
}

/// Stratified split, train and evaluate `n_splits` times with split `i`
/// seeded by `seed + i`.
pub fn cross_validate(model_cfg: &ModelConfig, cfg: &TrainConfig, data: &[PreparedClip]) -> Result<CrossValidation> {
    model_cfg.validate()?;
    cfg.validate()?;
    let labels: Vec<RiskLabel> = data.iter().map(label_of).collect::<Result<_>>()?;
    let fp = fingerprint(&(model_cfg, cfg))?;
    let mut results = Vec::with_capacity(cfg.n_splits);
    let mut runs = Vec::with_capacity(cfg.n_splits);
    for i in 0..cfg.n_splits {
        let seed = cfg.seed.wrapping_add(i as u64);
        let ctx = |e: Error| Error::Training(format!("split {i}: {e}"));
        let split = stratified_split(&labels, cfg.split_ratio, seed)?;
        let outcome = train(model_cfg, cfg, data, &split.train, seed).map_err(ctx)?;
        let ev = evaluate(&outcome.model, data, &split.test).map_err(ctx)?;
        log::info!(
            "split {i}: accuracy {:.4}, auc {}, epoch {}",
            ev.accuracy,
            ev.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into()),
            outcome.meta.epoch
        );
        results.push(SplitResult {
            split: i,
            seed,
            n_train: split.train.len(),
            n_test: split.test.len(),
            accuracy: ev.accuracy,
            auc: ev.auc,
            val_loss: outcome.meta.val_loss.unwrap_or(f64::NAN),
            epoch_selected: outcome.meta.epoch,
            confusion: ev.confusion,
        });
        runs.push(SplitRun { split, outcome });
    }
    Ok(CrossValidation {
        report: MetricsReport::from_splits(fp, model_cfg.describe(), results),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub in_domain: EvalReport,
    pub shifted: EvalReport,
    /// In-domain minus shifted accuracy.
    pub accuracy_drop: f64,
}

/// Evaluates a trained model, without retraining, on an in-domain set and a
/// shifted set.
pub fn transfer_evaluate(model: &RiskModel<f64>, in_domain: &[GraphRecord], shifted: &[GraphRecord]) -> Result<TransferReport> {
    let vocab = &model.config().vocab;
    let prep = |recs: &[GraphRecord], which: &str| {
        prepare_records(recs, vocab).map_err(|e| match e {
            Error::Vocabulary(m) => Error::Transfer(format!(
                "{which} set uses node kind `{m}` outside the model vocabulary"
            )),
            other => other,
        })
    };
    let a = prep(in_domain, "in-domain")?;
    let b = prep(shifted, "shifted")?;
    let in_domain = evaluate(model, &a, &(0..a.len()).collect::<Vec<_>>())?;
    let shifted = evaluate(model, &b, &(0..b.len()).collect::<Vec<_>>())?;
    Ok(TransferReport {
        accuracy_drop: in_domain.accuracy - shifted.accuracy,
        in_domain,
        shifted,
    })
}

/// Spatial setting of an ablation cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnnAxis {
    /// Per-node linear layers in place of the graph convolutions.
    None,
    Layers(usize),
}

impl Serialize for GnnAxis {
    fn serialize<Se: serde::Serializer>(&self, s: Se) -> std::result::Result<Se::Ok, Se::Error> {
        match self {
            GnnAxis::None => s.serialize_str("none"),
            GnnAxis::Layers(n) => s.serialize_str(&n.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for GnnAxis {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = serde_json::Value::deserialize(d)?;
        let parsed = match &raw {
            serde_json::Value::String(s) if s == "none" => Some(GnnAxis::None),
            serde_json::Value::String(s) => s.parse().ok().map(GnnAxis::Layers),
            serde_json::Value::Number(n) => n.as_u64().map(|n| GnnAxis::Layers(n as usize)),
            _ => None,
        };
        parsed.ok_or_else(|| serde::de::Error::custom(format!("invalid gnn axis value {raw}")))
    }
}

/// Values to sweep; an empty axis keeps the base setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationAxes {
    pub gnn: Vec<GnnAxis>,
    pub pooling: Vec<PoolKind>,
    pub temporal: Vec<TemporalMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub config: ModelConfig,
    pub report: MetricsReport,
}

fn temporal_name(t: TemporalMode) -> &'static str {
    match t {
        TemporalMode::Mean => "mean",
        TemporalMode::LstmLast => "LSTM-last",
        TemporalMode::LstmAttn => "LSTM-attn",
    }
}

fn pool_name(p: PoolKind) -> &'static str {
    match p {
        PoolKind::None => "no pooling",
        PoolKind::TopK => "TopkPool",
        PoolKind::SagPool => "SAGPool",
    }
}

/// Expands the axes into labelled configurations, spatial axis outermost.
pub fn ablation_cells(base: &ModelConfig, axes: &AblationAxes) -> Result<Vec<(String, ModelConfig)>> {
    let width = base.hidden.first().copied().unwrap_or(64);
    let gnn: Vec<Option<GnnAxis>> = if axes.gnn.is_empty() { vec![None] } else { axes.gnn.iter().copied().map(Some).collect() };
    let pools: Vec<Option<PoolKind>> = if axes.pooling.is_empty() { vec![None] } else { axes.pooling.iter().copied().map(Some).collect() };
    let temps: Vec<Option<TemporalMode>> = if axes.temporal.is_empty() { vec![None] } else { axes.temporal.iter().copied().map(Some).collect() };
    let mut cells = Vec::new();
    for g in &gnn {
        for p in &pools {
            for t in &temps {
                let mut cfg = base.clone();
                let mut parts = Vec::new();
                match g {
                    Some(GnnAxis::None) => {
                        cfg.gnn = GnnKind::Linear;
                        if cfg.hidden.is_empty() {
                            cfg.hidden = vec![width];
                        }
                        parts.push("No MR-GCN".to_string());
                    }
                    Some(GnnAxis::Layers(n)) => {
                        if !(1..=3).contains(n) {
                            return Err(Error::Config(format!(
                                "ablation gnn layers must be 1..=3 or \"none\", got {n}"
                            )));
                        }
                        cfg.gnn = GnnKind::MrGcn;
                        cfg.hidden = vec![width; *n];
                        parts.push(format!("{n} MR-GCN"));
                    }
                    None => {}
                }
                if let Some(p) = p {
                    cfg.pooling = *p;
                    parts.push(pool_name(*p).to_string());
                }
                if let Some(t) = t {
                    cfg.temporal = *t;
                    parts.push(temporal_name(*t).to_string());
                }
                cfg.validate()?;
                let label = if parts.is_empty() { cfg.describe() } else { parts.join(" + ") };
                cells.push((label, cfg));
            }
        }
    }
    Ok(cells)
}

/// One cross-validation per ablation cell, in declared order.
pub fn ablation_sweep(base: &ModelConfig, cfg: &TrainConfig, data: &[PreparedClip], axes: &AblationAxes) -> Result<Vec<AblationRow>> {
    ablation_cells(base, axes)?
        .into_iter()
        .map(|(label, config)| {
            log::info!("ablation cell {label}");
            let report = cross_validate(&config, cfg, data)?.report;
            Ok(AblationRow { label, config, report })
        })
        .collect()
}

/// `setting,mean_accuracy,std_accuracy,mean_auc,std_auc`, one row per cell.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::from("setting,mean_accuracy,std_accuracy,mean_auc,std_auc\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.label,
            r.report.mean_accuracy,
            r.report.std_accuracy,
            opt(r.report.mean_auc),
            opt(r.report.std_auc)
        )
        .expect("string write");
    }
    out
}
