use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{PreparedClip, RiskModel};
use crate::scenegraph::{NodeKind, RiskLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAttention {
    pub node_id: String,
    pub node_kind: NodeKind,
    /// Pooling score α; absent when the model does not pool.
    pub alpha_raw: Option<f64>,
    /// `tanh(α)`, the gate applied to the kept nodes.
    pub alpha_tanh: Option<f64>,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameExport {
    pub frame_index: usize,
    pub nodes: Vec<NodeAttention>,
}

/// Spatial and temporal attention of one clip, for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub clip_id: String,
    pub frames: Vec<FrameExport>,
    /// One weight per frame; absent unless the model uses temporal attention.
    pub betas: Option<Vec<f64>>,
    /// `[P(safe), P(risky)]`.
    pub predicted: [f64; 2],
    pub predicted_label: RiskLabel,
    pub true_label: Option<RiskLabel>,
}

impl AttentionExport {
    /// Frame with the largest β (first on ties).
    pub fn peak_frame(&self) -> Option<usize> {
        let b = self.betas.as_ref()?;
        (0..b.len()).reduce(|best, t| if b[t] > b[best] { t } else { best })
    }

    /// Flat table: one row per node per frame.
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("clip_id,frame_index,beta,node_id,node_kind,alpha_raw,alpha_tanh,selected\n");
        for f in &self.frames {
            let beta = opt(self.betas.as_ref().map(|b| b[f.frame_index]));
            for n in &f.nodes {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    self.clip_id,
                    f.frame_index,
                    beta,
                    n.node_id,
                    n.node_kind,
                    opt(n.alpha_raw),
                    opt(n.alpha_tanh),
                    n.selected
                )
                .expect("string write");
            }
        }
        out
    }
}

pub fn explain_clip(model: &RiskModel<f64>, clip: &PreparedClip) -> Result<AttentionExport> {
    let out = model.forward_clip(clip)?;
    let frames = out
        .trace
        .frames
        .iter()
        .enumerate()
        .map(|(t, fa)| {
            let r = clip.frame_range(t);
            let nodes = r
                .clone()
                .enumerate()
                .map(|(local, g)| {
                    let a = fa.alpha.as_ref().map(|a| a[local]);
                    NodeAttention {
                        node_id: clip.node_ids[g].clone(),
                        node_kind: clip.node_kinds[g],
                        alpha_raw: a,
                        alpha_tanh: a.map(f64::tanh),
                        selected: fa.selected[local],
                    }
                })
                .collect();
            FrameExport { frame_index: t, nodes }
        })
        .collect();
    Ok(AttentionExport {
        clip_id: clip.clip_id.clone(),
        frames,
        betas: out.trace.betas.clone(),
        predicted: out.probs,
        predicted_label: out.predicted(),
        true_label: clip.label,
    })
}
