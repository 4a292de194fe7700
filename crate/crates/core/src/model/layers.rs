//! Building blocks of the network, each recorded on a [`Tape`].
//!
//! Node features are rows: `X` is `nodes × width` and layer weights are
//! `width_in × width_out`.

use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tape, Tensor, Var};
use crate::scenegraph::{NodeKind, RelationType, SceneGraph};

use super::config::Readout;

/// Edges of one relation grouped for mean aggregation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelationIndex {
    pub src: Vec<usize>,
    /// Position of each edge's destination in `dst_nodes`.
    pub dst_slot: Vec<usize>,
    /// Distinct destination nodes, ascending.
    pub dst_nodes: Vec<usize>,
    /// `1 / |N_r(dst)|` per edge.
    pub inv_deg: Vec<f64>,
}

/// Relation-typed in-neighbourhoods of a (possibly block-diagonal) graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    pub n: usize,
    pub relations: Vec<RelationIndex>,
}

impl Adjacency {
    /// `edges` are `(src, dst, relation index)` triples.
    pub fn new(n: usize, n_relations: usize, edges: &[(usize, usize, usize)]) -> Result<Self> {
        let mut per: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_relations];
        for &(s, d, r) in edges {
            if s >= n || d >= n {
                return Err(Error::Input(format!(
                    "edge {s}->{d} does not fit a graph of {n} nodes"
                )));
            }
            if r >= n_relations {
                return Err(Error::Input(format!("relation index {r} >= {n_relations}")));
            }
            per[r].push((d, s));
        }
        let relations = per
            .into_iter()
            .map(|mut e| {
                e.sort_unstable();
                let mut idx = RelationIndex::default();
                let mut i = 0;
                while i < e.len() {
                    let d = e[i].0;
                    let j = e[i..].iter().take_while(|x| x.0 == d).count() + i;
                    let slot = idx.dst_nodes.len();
                    idx.dst_nodes.push(d);
                    let w = 1.0 / (j - i) as f64;
                    for &(_, s) in &e[i..j] {
                        idx.src.push(s);
                        idx.dst_slot.push(slot);
                        idx.inv_deg.push(w);
                    }
                    i = j;
                }
                idx
            })
            .collect();
        Ok(Self { n, relations })
    }

    pub fn from_graph(g: &SceneGraph) -> Result<Self> {
        let edges: Vec<_> = g
            .edges
            .iter()
            .map(|e| (e.src, e.dst, e.relation.index()))
            .collect();
        Self::new(g.num_nodes(), RelationType::COUNT, &edges)
    }

    pub fn num_edges(&self) -> usize {
        self.relations.iter().map(|r| r.src.len()).sum()
    }
}

/// One-hot rows of each node's kind.
pub fn init_node_embeddings<S: Scalar>(kinds: &[NodeKind], vocab: &[NodeKind]) -> Result<Tensor<S>> {
    let d = vocab.len();
    let mut data = vec![S::zero(); kinds.len() * d];
    for (i, k) in kinds.iter().enumerate() {
        let j = vocab
            .iter()
            .position(|v| v == k)
            .ok_or_else(|| Error::Vocabulary(k.name().to_string()))?;
        data[i * d + j] = S::one();
    }
    Tensor::new(vec![kinds.len(), d], data)
}

/// `X·Φ₀ + Σ_r mean_{u∈N_r(v)} h_u·Φ_r (+ bias)`, before activation.
pub fn mrgcn_forward<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    adj: &Adjacency,
    self_w: Var,
    rel_w: &[Var],
    bias: Option<Var>,
) -> Result<Var> {
    let n = tape.value(x).rows();
    if n != adj.n {
        return Err(Error::Input(format!(
            "feature matrix has {n} rows but the graph has {} nodes",
            adj.n
        )));
    }
    if rel_w.len() != adj.relations.len() {
        return Err(Error::Config(format!(
            "{} relation weights for {} relations",
            rel_w.len(),
            adj.relations.len()
        )));
    }
    let d_in = tape.value(x).cols();
    let mut out = tape.matmul(x, self_w)?;
    if let Some(b) = bias {
        out = tape.add(out, b)?;
    }
    for (rel, &w) in adj.relations.iter().zip(rel_w) {
        if rel.src.is_empty() {
            continue;
        }
        let gathered = tape.index_select(x, &rel.src)?;
        let coef: Vec<S> = rel.inv_deg.iter().map(|&c| S::lit(c)).collect();
        let coef = tape.constant(Tensor::column_vector(coef));
        let msgs = tape.mul(gathered, coef)?;
        let zeros = tape.constant(Tensor::zeros(vec![rel.dst_nodes.len(), d_in]));
        let agg = tape.scatter_add(zeros, &rel.dst_slot, msgs)?;
        let y = tape.matmul(agg, w)?;
        out = tape.scatter_add(out, &rel.dst_nodes, y)?;
    }
    Ok(out)
}

/// Row-wise concatenation of the per-layer features.
pub fn spatial_concat<S: Scalar>(tape: &mut Tape<S>, layers: &[Var]) -> Result<Var> {
    if layers.len() == 1 {
        return Ok(layers[0]);
    }
    tape.concat(layers, 1)
}

/// TopkPool score `X·w / ‖w‖` as a column.
pub fn topk_score<S: Scalar>(tape: &mut Tape<S>, x: Var, w: Var) -> Result<Var> {
    let norm2 = tape.value(w).data().iter().map(|&v| v * v).sum::<S>();
    if !(norm2 > S::zero()) {
        return Err(Error::Numerical("TopkPool projection vector has zero norm".into()));
    }
    let proj = tape.matmul(x, w)?;
    let sq = tape.mul(w, w)?;
    let s = tape.sum_all(sq);
    let norm = tape.sqrt(s)?;
    tape.div(proj, norm)
}

/// SAGPool score: a one-output relational convolution, tanh-activated.
pub fn sag_score<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    adj: &Adjacency,
    self_w: Var,
    rel_w: &[Var],
    bias: Var,
) -> Result<Var> {
    let pre = mrgcn_forward(tape, x, adj, self_w, rel_w, Some(bias))?;
    Ok(tape.tanh(pre))
}

/// Indices of the `ceil(ratio·n)` largest scores, ties to the lower index,
/// returned in ascending order.
pub fn select_top_k<S: Scalar>(scores: &[S], ratio: f64) -> Vec<usize> {
    let n = scores.len();
    let k = ((ratio * n as f64).ceil() as usize).clamp(1.min(n), n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    keep
}

/// `(X ⊙ tanh(α))_P` for the given selection.
pub fn gate_and_select<S: Scalar>(tape: &mut Tape<S>, x: Var, alpha: Var, keep: &[usize]) -> Result<Var> {
    let gate = tape.tanh(alpha);
    let gated = tape.mul(x, gate)?;
    tape.index_select(gated, keep)
}

/// Edges among `keep`, relabeled to positions in `keep`.
pub fn induced_edges(edges: &[(usize, usize, usize)], keep: &[usize]) -> Vec<(usize, usize, usize)> {
    let pos = |v: usize| keep.binary_search(&v).ok();
    edges
        .iter()
        .filter_map(|&(s, d, r)| Some((pos(s)?, pos(d)?, r)))
        .collect()
}

/// Per-frame reduction of node rows. `frame_of[i]` is the frame of row `i`;
/// rows of a frame must be contiguous and every frame non-empty.
pub fn readout<S: Scalar>(tape: &mut Tape<S>, x: Var, frame_of: &[usize], frames: usize, mode: Readout) -> Result<Var> {
    let width = tape.value(x).cols();
    if tape.value(x).rows() != frame_of.len() {
        return Err(Error::Input("readout frame index does not match rows".into()));
    }
    let mut counts = vec![0usize; frames];
    for &f in frame_of {
        if f >= frames {
            return Err(Error::Bounds { op: "readout", index: f, bound: frames });
        }
        counts[f] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::Usage("readout over a frame with no nodes".into()));
    }
    match mode {
        Readout::Sum | Readout::Mean => {
            let zeros = tape.constant(Tensor::zeros(vec![frames, width]));
            let sum = tape.scatter_add(zeros, frame_of, x)?;
            if mode == Readout::Sum {
                return Ok(sum);
            }
            let inv = counts.iter().map(|&c| S::lit(1.0 / c as f64)).collect();
            let inv = tape.constant(Tensor::column_vector(inv));
            tape.mul(sum, inv)
        }
        Readout::Max => {
            let mut parts = Vec::with_capacity(frames);
            let mut start = 0;
            for &c in &counts {
                let block = tape.narrow(x, 0, start, c)?;
                parts.push(tape.max(block, 0)?);
                start += c;
            }
            tape.concat(&parts, 0)
        }
    }
}

/// LSTM weights: gate blocks ordered input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// One recurrence step from a precomputed input projection row.
fn lstm_cell<S: Scalar>(
    tape: &mut Tape<S>,
    pre_in: Var,
    state: Option<(Var, Var)>,
    w_hh: Var,
    h: usize,
) -> Result<(Var, Var)> {
    let pre = match state {
        Some((p, _)) => {
            let rec = tape.matmul(p, w_hh)?;
            tape.add(pre_in, rec)?
        }
        None => pre_in,
    };
    let gi = tape.narrow(pre, 1, 0, h)?;
    let gf = tape.narrow(pre, 1, h, h)?;
    let gg = tape.narrow(pre, 1, 2 * h, h)?;
    let go = tape.narrow(pre, 1, 3 * h, h)?;
    let i = tape.sigmoid(gi);
    let g = tape.tanh(gg);
    let o = tape.sigmoid(go);
    let ig = tape.mul(i, g)?;
    let c = match state {
        Some((_, c_prev)) => {
            let f = tape.sigmoid(gf);
            let fc = tape.mul(f, c_prev)?;
            tape.add(fc, ig)?
        }
        None => ig,
    };
    let tc = tape.tanh(c);
    let p = tape.mul(o, tc)?;
    Ok((p, c))
}

/// Runs the LSTM over the rows of `seq` from a zero state; returns the hidden
/// and cell states of every step.
pub fn temporal_encode<S: Scalar>(tape: &mut Tape<S>, seq: Var, lstm: &LstmVars) -> Result<(Vec<Var>, Vec<Var>)> {
    let t_len = tape.value(seq).rows();
    if t_len == 0 {
        return Err(Error::Usage("temporal_encode of an empty sequence".into()));
    }
    let h = tape.value(lstm.w_hh).rows();
    let proj = tape.matmul(seq, lstm.w_ih)?;
    let proj = tape.add(proj, lstm.bias)?;
    let (mut ps, mut cs) = (Vec::with_capacity(t_len), Vec::with_capacity(t_len));
    let mut state = None;
    for t in 0..t_len {
        let row = if t_len == 1 { proj } else { tape.narrow(proj, 0, t, 1)? };
        let (p, c) = lstm_cell(tape, row, state, lstm.w_hh, h)?;
        ps.push(p);
        cs.push(c);
        state = Some((p, c));
    }
    Ok((ps, cs))
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w_init: Var,
    pub w_s: Var,
    pub w_p: Var,
    pub v: Var,
}

/// Additive attention over encoder states; returns `(q, β)` with `β` a
/// `T×1` column.
pub fn temporal_attention<S: Scalar>(tape: &mut Tape<S>, ps: &[Var], attn: &AttentionVars) -> Result<(Var, Var)> {
    let last = *ps.last().ok_or_else(|| Error::Usage("attention over no states".into()))?;
    let p = if ps.len() == 1 { last } else { tape.concat(ps, 0)? };
    let s0_pre = tape.matmul(last, attn.w_init)?;
    let s0 = tape.tanh(s0_pre);
    let qs = tape.matmul(s0, attn.w_s)?;
    let kp = tape.matmul(p, attn.w_p)?;
    let sum = tape.add(kp, qs)?;
    let act = tape.tanh(sum);
    let e = tape.matmul(act, attn.v)?;
    let beta = tape.softmax(e, 0)?;
    let weighted = tape.mul(p, beta)?;
    let q = tape.sum(weighted, 0)?;
    Ok((q, beta))
}

/// One decoder step on `q` starting from `(p_T, c_T)`.
pub fn decode_step<S: Scalar>(tape: &mut Tape<S>, q: Var, p_last: Var, c_last: Var, dec: &LstmVars) -> Result<Var> {
    let h = tape.value(dec.w_hh).rows();
    let pre = tape.matmul(q, dec.w_ih)?;
    let pre = tape.add(pre, dec.bias)?;
    let (z, _) = lstm_cell(tape, pre, Some((p_last, c_last)), dec.w_hh, h)?;
    Ok(z)
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// `softmax(relu(Z·W₁ + b₁)·W₂ + b₂)` as a `1×2` row.
pub fn risk_head<S: Scalar>(tape: &mut Tape<S>, z: Var, head: &HeadVars) -> Result<Var> {
    let a = tape.matmul(z, head.w1)?;
    let a = tape.add(a, head.b1)?;
    let a = tape.relu(a);
    let logits = tape.matmul(a, head.w2)?;
    let logits = tape.add(logits, head.b2)?;
    tape.softmax(logits, 1)
}

/// `-w_c · ln(max(Ŷ_c, 1e-12))` for the true class `c` of one-hot `y`.
pub fn weighted_cross_entropy<S: Scalar>(tape: &mut Tape<S>, probs: Var, y: [f64; 2], weights: [f64; 2]) -> Result<Var> {
    let c = match y {
        [a, b] if a == 1.0 && b == 0.0 => 0,
        [a, b] if a == 0.0 && b == 1.0 => 1,
        _ => return Err(Error::Label(format!("{y:?} is not one-hot"))),
    };
    let p = tape.narrow(probs, 1, c, 1)?;
    let p = tape.clamp_min(p, S::lit(1e-12));
    let lp = tape.log(p)?;
    Ok(tape.scale(lp, S::lit(-weights[c])))
}
