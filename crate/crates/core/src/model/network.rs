use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Scalar, Tape, Tensor, Var};
use crate::scenegraph::{NodeKind, RelationType, RiskLabel, SceneGraph};

use super::config::{GnnKind, ModelConfig, PoolKind, TemporalMode};
use super::layers::{
    gate_and_select, init_node_embeddings, mrgcn_forward, readout, risk_head, sag_score,
    select_top_k, spatial_concat, temporal_attention, temporal_encode, topk_score,
    weighted_cross_entropy, Adjacency, AttentionVars, HeadVars, LstmVars,
};

/// Graph sequence of one clip flattened into a block-diagonal union, ready
/// for the network. Building it once per clip avoids redoing the index
/// bookkeeping every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedClip {
    pub clip_id: String,
    pub label: Option<RiskLabel>,
    /// First global node of each frame, plus the total at the end.
    pub offsets: Vec<usize>,
    pub frame_of: Vec<usize>,
    pub node_ids: Vec<String>,
    pub node_kinds: Vec<NodeKind>,
    pub features: Tensor<f64>,
    pub adj: Adjacency,
}

impl PreparedClip {
    pub fn new(clip_id: impl Into<String>, label: Option<RiskLabel>, graphs: &[SceneGraph], vocab: &[NodeKind]) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::Input("clip has no frames".into()));
        }
        let mut offsets = vec![0];
        let (mut frame_of, mut node_ids, mut node_kinds, mut edges) = (vec![], vec![], vec![], vec![]);
        for (t, g) in graphs.iter().enumerate() {
            if g.nodes.is_empty() {
                return Err(Error::Input("graph has no nodes".into()).in_frame(t));
            }
            let base = *offsets.last().expect("non-empty");
            for n in &g.nodes {
                frame_of.push(t);
                node_ids.push(n.id.clone());
                node_kinds.push(n.kind);
            }
            for e in &g.edges {
                if e.src >= g.nodes.len() || e.dst >= g.nodes.len() {
                    return Err(Error::Input(format!("edge {}->{} out of range", e.src, e.dst)).in_frame(t));
                }
                edges.push((base + e.src, base + e.dst, e.relation.index()));
            }
            offsets.push(base + g.nodes.len());
        }
        let n = frame_of.len();
        let features = init_node_embeddings(&node_kinds, vocab).map_err(|e| {
            let t = node_kinds
                .iter()
                .position(|k| !vocab.contains(k))
                .map(|i| frame_of[i])
                .unwrap_or(0);
            e.in_frame(t)
        })?;
        Ok(Self {
            clip_id: clip_id.into(),
            label,
            offsets,
            frame_of,
            node_ids,
            node_kinds,
            features,
            adj: Adjacency::new(n, RelationType::COUNT, &edges)?,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.frame_of.len()
    }

    pub fn frame_range(&self, t: usize) -> std::ops::Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }
}

/// Node scores and pooling choices of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAttention<S> {
    /// Score per node; absent when the model does not pool.
    pub alpha: Option<Vec<S>>,
    pub selected: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace<S> {
    pub frames: Vec<FrameAttention<S>>,
    /// Temporal attention weights; only for the attention decoder.
    pub betas: Option<Vec<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<S> {
    /// `[P(safe), P(risky)]`.
    pub probs: [S; 2],
    pub trace: AttentionTrace<S>,
}

impl<S: Scalar> ForwardOutput<S> {
    pub fn predicted(&self) -> RiskLabel {
        if self.probs[1] > self.probs[0] {
            RiskLabel::Risky
        } else {
            RiskLabel::Safe
        }
    }
}

/// Result of a forward/backward pass on one clip.
#[derive(Debug, Clone)]
pub struct ClipGradient<S> {
    pub loss: S,
    pub probs: [S; 2],
    /// One buffer per parameter, in store order.
    pub grads: Vec<Vec<S>>,
}

/// Training-mode switch for a forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// The full risk network: parameters plus the architecture that reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskModel<S> {
    config: ModelConfig,
    pub params: ParamStore<S>,
}

struct Built {
    probs: Var,
    alpha: Option<Var>,
    keep: Vec<Vec<usize>>,
    beta: Option<Var>,
}

fn glorot<S: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<S> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| S::lit(rng.gen_range(-limit..limit))).collect();
    Tensor::new(vec![rows, cols], data).expect("sized")
}

fn lstm_bias<S: Scalar>(h: usize) -> Tensor<S> {
    // Forget-gate bias of one keeps early gradients flowing through time.
    let data = (0..4 * h).map(|i| if (h..2 * h).contains(&i) { S::one() } else { S::zero() }).collect();
    Tensor::new(vec![1, 4 * h], data).expect("sized")
}

impl<S: Scalar> RiskModel<S> {
    /// Freshly initialized network (Glorot-uniform weights, zero biases).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let mut d = config.input_width();
        for (l, &w) in config.hidden.iter().enumerate() {
            p.insert(format!("gnn.{l}.self"), glorot(&mut rng, d, w));
            if config.gnn == GnnKind::MrGcn {
                for r in RelationType::ALL {
                    p.insert(format!("gnn.{l}.rel.{}", r.name()), glorot(&mut rng, d, w));
                }
            }
            p.insert(format!("gnn.{l}.bias"), Tensor::zeros(vec![1, w]));
            d = w;
        }
        let ds = config.spatial_width();
        match config.pooling {
            PoolKind::None => {}
            PoolKind::TopK => {
                p.insert("pool.w", glorot(&mut rng, ds, 1));
            }
            PoolKind::SagPool => {
                p.insert("pool.self", glorot(&mut rng, ds, 1));
                for r in RelationType::ALL {
                    p.insert(format!("pool.rel.{}", r.name()), glorot(&mut rng, ds, 1));
                }
                p.insert("pool.bias", Tensor::zeros(vec![1, 1]));
            }
        }
        let h = config.lstm_hidden;
        if config.temporal != TemporalMode::Mean {
            p.insert("lstm.w_ih", glorot(&mut rng, ds, 4 * h));
            p.insert("lstm.w_hh", glorot(&mut rng, h, 4 * h));
            p.insert("lstm.bias", lstm_bias(h));
        }
        if config.temporal == TemporalMode::LstmAttn {
            p.insert("attn.w_init", glorot(&mut rng, h, h));
            p.insert("attn.w_s", glorot(&mut rng, h, h));
            p.insert("attn.w_p", glorot(&mut rng, h, h));
            p.insert("attn.v", glorot(&mut rng, h, 1));
            p.insert("dec.w_ih", glorot(&mut rng, h, 4 * h));
            p.insert("dec.w_hh", glorot(&mut rng, h, 4 * h));
            p.insert("dec.bias", lstm_bias(h));
        }
        let z = config.temporal_width();
        p.insert("head.w1", glorot(&mut rng, z, z));
        p.insert("head.b1", Tensor::zeros(vec![1, z]));
        p.insert("head.w2", glorot(&mut rng, z, 2));
        p.insert("head.b2", Tensor::zeros(vec![1, 2]));
        Ok(Self { config, params: p })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Replaces parameter values by name. Every parameter of this
    /// architecture must be supplied with a matching shape.
    pub fn load_params(&mut self, mut values: std::collections::BTreeMap<String, Tensor<S>>) -> Result<()> {
        for i in 0..self.params.len() {
            let name = self.params.name(i).to_string();
            let t = values
                .remove(&name)
                .ok_or_else(|| Error::Input(format!("checkpoint lacks parameter `{name}`")))?;
            if t.shape() != self.params.get(i).shape() {
                return Err(Error::Input(format!(
                    "parameter `{name}` has shape {:?}, architecture expects {:?}",
                    t.shape(),
                    self.params.get(i).shape()
                )));
            }
            *self.params.get_mut(i) = t;
        }
        if let Some(extra) = values.keys().next() {
            return Err(Error::Input(format!("checkpoint has unknown parameter `{extra}`")));
        }
        Ok(())
    }

    pub fn prepare(&self, clip_id: &str, label: Option<RiskLabel>, graphs: &[SceneGraph]) -> Result<PreparedClip> {
        PreparedClip::new(clip_id, label, graphs, &self.config.vocab)
    }

    fn check_vocab(&self, clip: &PreparedClip) -> Result<()> {
        if clip.features.cols() != self.config.input_width() {
            return Err(Error::Vocabulary(format!(
                "clip prepared with {} kinds, model expects {}",
                clip.features.cols(),
                self.config.input_width()
            )));
        }
        Ok(())
    }

    fn build(&self, tape: &mut Tape<S>, vars: &[Var], clip: &PreparedClip, mut mode: Mode<'_>) -> Result<Built> {
        self.check_vocab(clip)?;
        let cfg = &self.config;
        let p = |name: &str| vars[self.params.index_of(name).expect("parameter registered")];
        let training = matches!(mode, Mode::Train(_));
        let mut drop = |tape: &mut Tape<S>, x: Var| -> Result<Var> {
            match &mut mode {
                Mode::Train(rng) => tape.dropout(x, cfg.dropout, true, &mut **rng),
                Mode::Eval => Ok(x),
            }
        };

        let x0 = tape.constant(clip.features.cast());
        let mut layers = vec![x0];
        let mut x = x0;
        for l in 0..cfg.hidden.len() {
            let self_w = p(&format!("gnn.{l}.self"));
            let bias = p(&format!("gnn.{l}.bias"));
            let pre = match cfg.gnn {
                GnnKind::MrGcn => {
                    let rel: Vec<Var> = RelationType::ALL
                        .iter()
                        .map(|r| p(&format!("gnn.{l}.rel.{}", r.name())))
                        .collect();
                    mrgcn_forward(tape, x, &clip.adj, self_w, &rel, Some(bias))?
                }
                GnnKind::Linear => {
                    let y = tape.matmul(x, self_w)?;
                    tape.add(y, bias)?
                }
            };
            let act = tape.relu(pre);
            x = drop(tape, act)?;
            layers.push(x);
        }
        let x_prop = spatial_concat(tape, &layers)?;

        let frames = clip.num_frames();
        let (pooled, frame_of, alpha, keep) = match cfg.pooling {
            PoolKind::None => {
                let keep = (0..frames).map(|t| clip.frame_range(t).collect()).collect();
                (x_prop, clip.frame_of.clone(), None, keep)
            }
            kind => {
                let alpha = if kind == PoolKind::TopK {
                    topk_score(tape, x_prop, p("pool.w"))?
                } else {
                    let rel: Vec<Var> = RelationType::ALL
                        .iter()
                        .map(|r| p(&format!("pool.rel.{}", r.name())))
                        .collect();
                    sag_score(tape, x_prop, &clip.adj, p("pool.self"), &rel, p("pool.bias"))?
                };
                let scores = tape.value(alpha).data().to_vec();
                let mut keep = Vec::with_capacity(frames);
                let mut all = Vec::new();
                let mut frame_of = Vec::new();
                for t in 0..frames {
                    let r = clip.frame_range(t);
                    let local = select_top_k(&scores[r.clone()], cfg.pool_ratio);
                    let global: Vec<usize> = local.iter().map(|i| r.start + i).collect();
                    frame_of.extend(std::iter::repeat_n(t, global.len()));
                    all.extend_from_slice(&global);
                    keep.push(global);
                }
                let pooled = gate_and_select(tape, x_prop, alpha, &all)?;
                (pooled, frame_of, Some(alpha), keep)
            }
        };

        let h_seq = readout(tape, pooled, &frame_of, frames, cfg.readout)?;
        let (z, beta) = match cfg.temporal {
            TemporalMode::Mean => (tape.mean(h_seq, 0)?, None),
            mode => {
                let lstm = LstmVars {
                    w_ih: p("lstm.w_ih"),
                    w_hh: p("lstm.w_hh"),
                    bias: p("lstm.bias"),
                };
                let (ps, cs) = temporal_encode(tape, h_seq, &lstm)?;
                let (p_last, c_last) = (*ps.last().expect("non-empty"), *cs.last().expect("non-empty"));
                if mode == TemporalMode::LstmLast {
                    (p_last, None)
                } else {
                    let attn = AttentionVars {
                        w_init: p("attn.w_init"),
                        w_s: p("attn.w_s"),
                        w_p: p("attn.w_p"),
                        v: p("attn.v"),
                    };
                    let (q, beta) = temporal_attention(tape, &ps, &attn)?;
                    let dec = LstmVars {
                        w_ih: p("dec.w_ih"),
                        w_hh: p("dec.w_hh"),
                        bias: p("dec.bias"),
                    };
                    (super::layers::decode_step(tape, q, p_last, c_last, &dec)?, Some(beta))
                }
            }
        };
        let z = if training { drop(tape, z)? } else { z };
        let head = HeadVars {
            w1: p("head.w1"),
            b1: p("head.b1"),
            w2: p("head.w2"),
            b2: p("head.b2"),
        };
        let probs = risk_head(tape, z, &head)?;
        Ok(Built { probs, alpha, keep, beta })
    }

    fn trace(&self, tape: &Tape<S>, clip: &PreparedClip, b: &Built) -> AttentionTrace<S> {
        let frames = (0..clip.num_frames())
            .map(|t| {
                let r = clip.frame_range(t);
                let mut selected = vec![false; r.len()];
                for &g in &b.keep[t] {
                    selected[g - r.start] = true;
                }
                FrameAttention {
                    alpha: b.alpha.map(|a| tape.value(a).data()[r.clone()].to_vec()),
                    selected,
                }
            })
            .collect();
        AttentionTrace {
            frames,
            betas: b.beta.map(|v| tape.value(v).data().to_vec()),
        }
    }

    fn probs(tape: &Tape<S>, v: Var) -> [S; 2] {
        let d = tape.value(v).data();
        [d[0], d[1]]
    }

    /// Inference-mode forward pass. Read-only; safe to call concurrently.
    pub fn forward_clip(&self, clip: &PreparedClip) -> Result<ForwardOutput<S>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
        let b = self.build(&mut tape, &vars, clip, Mode::Eval)?;
        Ok(ForwardOutput {
            probs: Self::probs(&tape, b.probs),
            trace: self.trace(&tape, clip, &b),
        })
    }

    /// Weighted loss of one clip, evaluated without recording gradients.
    pub fn clip_loss(&self, clip: &PreparedClip, label: RiskLabel, class_weights: [f64; 2]) -> Result<S> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
        let b = self.build(&mut tape, &vars, clip, Mode::Eval)?;
        let loss = weighted_cross_entropy(&mut tape, b.probs, label.one_hot(), class_weights)?;
        tape.value(loss).item()
    }

    /// Loss and parameter gradients of one clip.
    pub fn clip_gradient(&self, clip: &PreparedClip, label: RiskLabel, class_weights: [f64; 2], mode: Mode<'_>) -> Result<ClipGradient<S>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.tensors().iter().map(|t| tape.param(t.clone())).collect();
        let b = self.build(&mut tape, &vars, clip, mode)?;
        let loss = weighted_cross_entropy(&mut tape, b.probs, label.one_hot(), class_weights)?;
        tape.backward(loss)?;
        let grads = vars
            .iter()
            .map(|&v| tape.take_grad(v).expect("parameter leaf"))
            .collect();
        Ok(ClipGradient {
            loss: tape.value(loss).item()?,
            probs: Self::probs(&tape, b.probs),
            grads,
        })
    }

    /// Same network with parameters converted to another scalar type.
    pub fn cast<T: Scalar>(&self) -> RiskModel<T> {
        let mut params = ParamStore::new();
        for (name, t) in self.params.iter() {
            params.insert(name, t.cast());
        }
        RiskModel {
            config: self.config.clone(),
            params,
        }
    }
}
