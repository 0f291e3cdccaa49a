//! Contrastive objectives over batch cosine-similarity matrices.
//!
//! All losses are built from diffcore primitives, so gradients come for free
//! and are finite-difference checked. The sigmoid loss is implemented in its
//! minimizable form, `L = −(1/N) Σᵢⱼ log σ(zᵢⱼ(t·Mᵢⱼ − b))` with `t = exp(t')`;
//! the deduplicated variant drops every repeated word's later batch
//! occurrences (rows and columns) before forming the sum.

use std::collections::BTreeMap;

use crate::diffcore::{GraphBuilder, NodeId, Tensor, TensorMap};
use crate::error::{Error, Result};

/// Which contrastive objective to train with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Clip,
    Siglip,
    Dsiglip,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clip" => Ok(LossKind::Clip),
            "siglip" => Ok(LossKind::Siglip),
            "dsiglip" => Ok(LossKind::Dsiglip),
            other => Err(Error::Config(format!("unknown loss '{other}'"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Clip => write!(f, "clip"),
            LossKind::Siglip => write!(f, "siglip"),
            LossKind::Dsiglip => write!(f, "dsiglip"),
        }
    }
}

/// How repeated words in a batch are handled by the deduplicated loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupMode {
    /// Keep only the first occurrence of each word; drop later rows+columns.
    DropRepetitions,
    /// Keep all rows; zero out conflicting off-diagonal same-word pairs.
    MaskConflicts,
}

/// Pairwise labels for the sigmoid losses: `z[i][j] ∈ {−1,+1}` with an
/// optional 0/1 retention mask.
#[derive(Debug, Clone)]
pub struct BatchLabels {
    pub word_ids: Vec<usize>,
    pub z: Tensor,
    pub mask: Option<Tensor>,
}

impl BatchLabels {
    /// Standard labels: +1 on the diagonal, −1 elsewhere, no exclusions.
    pub fn standard(n: usize) -> Self {
        BatchLabels {
            word_ids: (0..n).collect(),
            z: z_matrix(n),
            mask: None,
        }
    }

    /// Standard z plus a mask that excludes off-diagonal pairs of elements
    /// sharing a word (the pair-masking alternative to dropping rows).
    pub fn masked_conflicts(word_ids: &[usize]) -> Self {
        let n = word_ids.len();
        let mut mask = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            for j in 0..n {
                let keep = i == j || word_ids[i] != word_ids[j];
                mask.data_mut()[i * n + j] = if keep { 1.0 } else { 0.0 };
            }
        }
        BatchLabels {
            word_ids: word_ids.to_vec(),
            z: z_matrix(n),
            mask: Some(mask),
        }
    }
}

fn z_matrix(n: usize) -> Tensor {
    let mut z = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        for j in 0..n {
            z.data_mut()[i * n + j] = if i == j { 1.0 } else { -1.0 };
        }
    }
    z
}

/// Indices of first occurrences, in batch order: the retained set of D-SigLIP.
pub fn retained_indices(word_ids: &[usize]) -> Vec<usize> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (i, w) in word_ids.iter().enumerate() {
        if seen.insert(*w, ()).is_none() {
            out.push(i);
        }
    }
    out
}

/// Batch cosine similarity: `M[i][j] = (Ŷᵢ·Yⱼ)/(‖Ŷᵢ‖‖Yⱼ‖)`.
pub fn cosine_matrix(yhat: &Tensor, y: &Tensor) -> Result<Tensor> {
    if yhat.shape() != y.shape() || yhat.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "cosine_matrix expects equal N×d inputs, got {:?} and {:?}",
            yhat.shape(),
            y.shape()
        )));
    }
    for i in 0..yhat.rows() {
        if yhat.row(i).iter().map(|v| v * v).sum::<f64>() == 0.0 {
            return Err(Error::Eval(format!("zero-norm prediction row {i}")));
        }
    }
    let mut g = GraphBuilder::new();
    let a = g.input("yhat", yhat.shape().to_vec());
    let m = append_cosine(&mut g, a, y)?;
    g.output("m", m);
    let g = g.build();
    let mut inputs = TensorMap::new();
    inputs.insert("yhat".into(), yhat.clone());
    let exec = g.forward(&inputs, &TensorMap::new())?;
    Ok(g.output(&exec, "m")?.clone())
}

/// Append the cosine-similarity matrix between a prediction node and fixed
/// target embeddings.
pub fn append_cosine(g: &mut GraphBuilder, pred: NodeId, targets: &Tensor) -> Result<NodeId> {
    for i in 0..targets.rows() {
        if targets.row(i).iter().map(|v| v * v).sum::<f64>() == 0.0 {
            return Err(Error::Eval(format!("zero-norm target row {i}")));
        }
    }
    let t = g.constant(targets.clone());
    let tn = g.row_l2_normalize(t)?;
    let tt = g.transpose(tn)?;
    let pn = g.row_l2_normalize(pred)?;
    g.matmul(pn, tt)
}

/// Append the CLIP loss over a similarity-matrix node; `tprime` is the
/// learnable log-temperature (shape `[1]`). With `symmetric` set, the
/// column-direction term is averaged in (off by default).
pub fn append_clip(
    g: &mut GraphBuilder,
    cos: NodeId,
    tprime: NodeId,
    symmetric: bool,
) -> Result<NodeId> {
    let n = g.node_shape(cos)[0];
    if n < 2 {
        return Err(Error::Graph("CLIP needs a batch of at least 2".into()));
    }
    let t = g.exp(tprime);
    let logits = g.mul_scalar_node(cos, t)?;
    let term = |g: &mut GraphBuilder, logits: NodeId| -> Result<NodeId> {
        let ls = g.log_softmax_rows(logits)?;
        let d = g.diag(ls)?;
        let m = g.mean_all(d);
        Ok(g.neg(m))
    };
    let rows = term(g, logits)?;
    if !symmetric {
        return Ok(rows);
    }
    let lt = g.transpose(logits)?;
    let cols = term(g, lt)?;
    let sum = g.add(rows, cols)?;
    Ok(g.scale(sum, 0.5))
}

/// Append the sigmoid contrastive loss over a similarity-matrix node.
/// `norm_count` divides the masked sum (the batch size, or the retained
/// count for the deduplicated variant).
pub fn append_siglip(
    g: &mut GraphBuilder,
    cos: NodeId,
    tprime: NodeId,
    bias: NodeId,
    labels: &BatchLabels,
    norm_count: f64,
) -> Result<NodeId> {
    let n = g.node_shape(cos)[0];
    if labels.z.shape() != [n, n] {
        return Err(Error::Shape(format!(
            "labels are {:?}, similarity matrix is {n}×{n}",
            labels.z.shape()
        )));
    }
    let t = g.exp(tprime);
    let scaled = g.mul_scalar_node(cos, t)?;
    let shifted = g.sub_scalar_node(scaled, bias)?;
    let zc = g.constant(labels.z.clone());
    let signed = g.mul(shifted, zc)?;
    let neg = g.neg(signed);
    // −log σ(x) = softplus(−x)
    let mut terms = g.softplus(neg);
    if let Some(mask) = &labels.mask {
        let mc = g.constant(mask.clone());
        terms = g.mul(terms, mc)?;
    }
    let s = g.sum_all(terms);
    Ok(g.scale(s, 1.0 / norm_count))
}

/// Append the deduplicated sigmoid loss: repeated words keep only their first
/// batch occurrence (rows and columns of later duplicates are dropped), then
/// the plain sigmoid loss is taken over the retained index set.
pub fn append_dsiglip(
    g: &mut GraphBuilder,
    cos: NodeId,
    tprime: NodeId,
    bias: NodeId,
    word_ids: &[usize],
    mode: DedupMode,
) -> Result<NodeId> {
    let n = g.node_shape(cos)[0];
    if word_ids.len() != n {
        return Err(Error::Shape(format!(
            "{} word ids for a {n}×{n} similarity matrix",
            word_ids.len()
        )));
    }
    match mode {
        DedupMode::DropRepetitions => {
            let keep = retained_indices(word_ids);
            let k = keep.len();
            let sub = if k == n {
                cos
            } else {
                let rows = g.select_rows(cos, keep.clone())?;
                let rt = g.transpose(rows)?;
                let cols = g.select_rows(rt, keep.clone())?;
                g.transpose(cols)?
            };
            append_siglip(g, sub, tprime, bias, &BatchLabels::standard(k), k as f64)
        }
        DedupMode::MaskConflicts => {
            let labels = BatchLabels::masked_conflicts(word_ids);
            append_siglip(g, cos, tprime, bias, &labels, n as f64)
        }
    }
}

/// Loss value plus gradients, from the eager wrappers below.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub d_matrix: Tensor,
    pub d_tprime: f64,
    pub d_bias: f64,
}

fn eval_scalar_loss(
    m: &Tensor,
    build: impl FnOnce(&mut GraphBuilder, NodeId, NodeId, NodeId) -> Result<NodeId>,
    tprime: f64,
    bias: f64,
) -> Result<LossEval> {
    let mut g = GraphBuilder::new();
    let mp = g.param("m", m.shape().to_vec());
    let tp = g.param("tprime", vec![1]);
    let bp = g.param("bias", vec![1]);
    let loss = build(&mut g, mp, tp, bp)?;
    g.output("loss", loss);
    let g = g.build();
    let mut params = TensorMap::new();
    params.insert("m".into(), m.clone());
    params.insert("tprime".into(), Tensor::scalar(tprime));
    params.insert("bias".into(), Tensor::scalar(bias));
    let exec = g.forward(&TensorMap::new(), &params)?;
    let value = g.output(&exec, "loss")?.item();
    let mut cot = TensorMap::new();
    cot.insert("loss".into(), Tensor::scalar(1.0));
    let grads = g.backward(&exec, &cot)?;
    Ok(LossEval {
        loss: value,
        d_matrix: grads
            .params
            .get("m")
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(m.shape().to_vec())),
        d_tprime: grads.params.get("tprime").map_or(0.0, |t| t.item()),
        d_bias: grads.params.get("bias").map_or(0.0, |t| t.item()),
    })
}

/// CLIP loss of a similarity matrix (single direction, rows = predictions).
pub fn clip_loss(m: &Tensor, tprime: f64) -> Result<LossEval> {
    eval_scalar_loss(m, |g, mp, tp, _bp| append_clip(g, mp, tp, false), tprime, 0.0)
}

/// Sigmoid contrastive loss of a similarity matrix.
pub fn siglip_loss(m: &Tensor, tprime: f64, bias: f64, labels: &BatchLabels) -> Result<LossEval> {
    let n = m.rows();
    eval_scalar_loss(
        m,
        |g, mp, tp, bp| append_siglip(g, mp, tp, bp, labels, n as f64),
        tprime,
        bias,
    )
}

/// Deduplicated sigmoid loss keyed on word identities.
pub fn dsiglip_loss(m: &Tensor, word_ids: &[usize], tprime: f64, bias: f64) -> Result<LossEval> {
    eval_scalar_loss(
        m,
        |g, mp, tp, bp| append_dsiglip(g, mp, tp, bp, word_ids, DedupMode::DropRepetitions),
        tprime,
        bias,
    )
}
