use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegraph::NodeKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GnnKind {
    /// Multi-relational graph convolution.
    MrGcn,
    /// Per-node linear layer of the same width; ignores edges.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    None,
    #[serde(rename = "topk")]
    TopK,
    #[serde(rename = "sagpool")]
    SagPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    /// Average of the frame embeddings; no recurrent layer.
    Mean,
    LstmLast,
    LstmAttn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub gnn: GnnKind,
    /// Output width of each graph layer; empty means no graph layers.
    pub hidden: Vec<usize>,
    pub pooling: PoolKind,
    pub pool_ratio: f64,
    pub readout: Readout,
    pub temporal: TemporalMode,
    pub lstm_hidden: usize,
    pub dropout: f64,
    /// Node kinds in one-hot order.
    pub vocab: Vec<NodeKind>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gnn: GnnKind::MrGcn,
            hidden: vec![100, 100],
            pooling: PoolKind::SagPool,
            pool_ratio: 0.5,
            readout: Readout::Sum,
            temporal: TemporalMode::LstmAttn,
            lstm_hidden: 100,
            dropout: 0.2,
            vocab: NodeKind::ALL.to_vec(),
        }
    }
}

impl ModelConfig {
    /// One 64-unit graph layer, no pooling, sum readout, last LSTM state.
    pub fn ablation_base() -> Self {
        Self {
            hidden: vec![64],
            pooling: PoolKind::None,
            temporal: TemporalMode::LstmLast,
            lstm_hidden: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.len() > 3 {
            return Err(Error::Config(format!(
                "model.hidden supports at most 3 layers, got {}",
                self.hidden.len()
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("model.hidden widths must be positive".into()));
        }
        if !(self.pool_ratio > 0.0 && self.pool_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "model.pool_ratio must be in (0, 1], got {}",
                self.pool_ratio
            )));
        }
        if self.temporal != TemporalMode::Mean && self.lstm_hidden == 0 {
            return Err(Error::Config("model.lstm_hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "model.dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.vocab.is_empty() {
            return Err(Error::Config("model.vocab is empty".into()));
        }
        let mut v = self.vocab.clone();
        v.sort();
        v.dedup();
        if v.len() != self.vocab.len() {
            return Err(Error::Config("model.vocab has duplicates".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.vocab.len()
    }

    /// Width after concatenating the input with every graph layer's output.
    pub fn spatial_width(&self) -> usize {
        self.input_width() + self.hidden.iter().sum::<usize>()
    }

    /// Width of the clip embedding fed to the head.
    pub fn temporal_width(&self) -> usize {
        match self.temporal {
            TemporalMode::Mean => self.spatial_width(),
            _ => self.lstm_hidden,
        }
    }

    pub fn vocab_index(&self, kind: NodeKind) -> Result<usize> {
        self.vocab
            .iter()
            .position(|&k| k == kind)
            .ok_or_else(|| Error::Vocabulary(kind.name().to_string()))
    }

    /// Short human-readable description, e.g. `2x100 mr_gcn + sagpool 0.5 + sum + lstm_attn`.
    pub fn describe(&self) -> String {
        let gnn = if self.hidden.is_empty() {
            "no graph layers".to_string()
        } else {
            let w: Vec<String> = self.hidden.iter().map(|w| w.to_string()).collect();
            let kind = match self.gnn {
                GnnKind::MrGcn => "MR-GCN",
                GnnKind::Linear => "linear",
            };
            format!("{} {kind} ({})", self.hidden.len(), w.join("/"))
        };
        let pool = match self.pooling {
            PoolKind::None => String::new(),
            PoolKind::TopK => format!(" + TopkPool {}", self.pool_ratio),
            PoolKind::SagPool => format!(" + SAGPool {}", self.pool_ratio),
        };
        let readout = match self.readout {
            Readout::Sum => "sum",
            Readout::Mean => "mean",
            Readout::Max => "max",
        };
        let temporal = match self.temporal {
            TemporalMode::Mean => "mean",
            TemporalMode::LstmLast => "LSTM-last",
            TemporalMode::LstmAttn => "LSTM-attn",
        };
        format!("{gnn}{pool} + {readout} readout + {temporal}")
    }
}
