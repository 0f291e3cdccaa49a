//! Graph assembly for the decoder, plus eager per-stage wrappers.
//!
//! The CNN stages run in (channels × time) layout so the hot loops stream
//! over contiguous time; the transformer runs row-major (words × d). Batch
//! graphs share one parameter node per tensor across all sentences.

use std::collections::BTreeMap;

use rand::Rng;

use crate::diffcore::{GraphBuilder, NodeId, Tensor, TensorMap};
use crate::error::{Error, Result};
use crate::signal::Epoch;
use crate::util::seeded_rng;

use super::{DecoderParams, ModelConfig};

/// One sentence in a batch graph: which subject transform to apply and how
/// many word epochs it contributes.
#[derive(Debug, Clone, Copy)]
pub struct SentenceItem {
    pub subject_index: usize,
    pub n_words: usize,
}

/// 2-D Fourier feature map over sensor positions; row per sensor.
pub fn fourier_features(positions: &[[f64; 2]], k: usize) -> Tensor {
    let f = 2 * k * k;
    let mut data = Vec::with_capacity(positions.len() * f);
    for p in positions {
        for kx in 0..k {
            for ky in 0..k {
                let arg = std::f64::consts::TAU * (kx as f64 * p[0] + ky as f64 * p[1]);
                data.push(arg.cos());
                data.push(arg.sin());
            }
        }
    }
    Tensor::new(vec![positions.len(), f], data).expect("fourier shape")
}

/// Epoch window as a graph input tensor, sensor-major (n × t).
pub fn epoch_input(epoch: &Epoch) -> Tensor {
    let (t, n) = (epoch.t_samples, epoch.n_sensors);
    let mut data = vec![0.0; t * n];
    for ti in 0..t {
        for si in 0..n {
            data[si * t + ti] = epoch.data[ti * n + si];
        }
    }
    Tensor::new(vec![n, t], data).expect("epoch shape")
}

/// Shared parameter-node cache so batch graphs declare each tensor once.
struct ParamNodes {
    map: BTreeMap<String, NodeId>,
}

impl ParamNodes {
    fn new() -> Self {
        ParamNodes {
            map: BTreeMap::new(),
        }
    }

    fn get(&mut self, g: &mut GraphBuilder, name: &str, shape: Vec<usize>) -> NodeId {
        if let Some(&id) = self.map.get(name) {
            return id;
        }
        let id = g.param(name, shape);
        self.map.insert(name.to_string(), id);
        id
    }
}

fn append_spatial(
    g: &mut GraphBuilder,
    pn: &mut ParamNodes,
    cfg: &ModelConfig,
    phi: NodeId,
    x: NodeId,
) -> Result<NodeId> {
    let w = pn.get(g, "spatial.w", vec![cfg.hidden_channels, cfg.n_fourier()]);
    let wt = g.transpose(w)?;
    let scores = g.matmul(phi, wt)?; // (n, c)
    let st = g.transpose(scores)?; // (c, n)
    let attn = g.softmax_rows(st)?; // softmax over sensors per output channel
    g.matmul(attn, x) // (c, t)
}

fn append_subject(
    g: &mut GraphBuilder,
    pn: &mut ParamNodes,
    cfg: &ModelConfig,
    n_subjects: usize,
    subject_index: usize,
    s: NodeId,
) -> Result<NodeId> {
    let c = cfg.hidden_channels;
    let mats = pn.get(g, "subject.mats", vec![n_subjects, c, c]);
    let m = g.embed_lookup(mats, subject_index)?;
    g.matmul(m, s)
}

fn append_conv_stack(
    g: &mut GraphBuilder,
    pn: &mut ParamNodes,
    cfg: &ModelConfig,
    mut s: NodeId,
) -> Result<NodeId> {
    let c = cfg.hidden_channels;
    for (i, &dil) in cfg.conv_dilations.iter().enumerate() {
        let w = pn.get(g, &format!("conv{i}.w"), vec![c, c, cfg.conv_kernel]);
        let b = pn.get(g, &format!("conv{i}.b"), vec![c]);
        let gamma = pn.get(g, &format!("conv{i}.gamma"), vec![c]);
        let beta = pn.get(g, &format!("conv{i}.beta"), vec![c]);
        let h = g.conv1d_same(s, w, b, dil)?;
        let ln = g.layer_norm_chans(h, gamma, beta, cfg.ln_eps)?;
        let act = g.gelu(ln);
        s = g.add(s, act)?;
    }
    Ok(s)
}

fn append_projection(
    g: &mut GraphBuilder,
    pn: &mut ParamNodes,
    cfg: &ModelConfig,
    s: NodeId,
) -> Result<NodeId> {
    let w = pn.get(g, "proj.w", vec![cfg.d_out, cfg.hidden_channels]);
    let b = pn.get(g, "proj.b", vec![cfg.d_out]);
    let p = g.matmul(w, s)?; // (d, t)
    g.broadcast_add_chans(p, b)
}

fn append_pool(
    g: &mut GraphBuilder,
    pn: &mut ParamNodes,
    cfg: &ModelConfig,
    s: NodeId,
) -> Result<NodeId> {
    let d = cfg.d_out;
    let score = pn.get(g, "pool.score", vec![d]);
    let value = pn.get(g, "pool.value", vec![d, d]);
    let u = g.reshape(score, vec![1, d])?;
    let sc = g.matmul(u, s)?; // (1, t)
    let alpha = g.softmax_rows(sc)?;
    let v = g.matmul(value, s)?; // (d, t)
    let at = g.transpose(alpha)?; // (t, 1)
    let pooled = g.matmul(v, at)?; // (d, 1)
    g.transpose(pooled) // (1, d)
}

/// Attention-dropout mask: entries 0 with probability p, else 1/(1−p).
fn dropout_mask(m: usize, p: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    let data: Vec<f64> = (0..m * m)
        .map(|_| {
            if rng.random::<f64>() < p {
                0.0
            } else {
                keep
            }
        })
        .collect();
    Tensor::new(vec![m, m], data).expect("mask shape")
}

fn causal_mask(m: usize) -> Tensor {
    let mut t = Tensor::zeros(vec![m, m]);
    for i in 0..m {
        for j in (i + 1)..m {
            t.data_mut()[i * m + j] = -1e9;
        }
    }
    t
}

fn append_transformer(
    g: &mut GraphBuilder,
    pn: &mut ParamNodes,
    cfg: &ModelConfig,
    mut x: NodeId,
    dropout_rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Result<NodeId> {
    let d = cfg.d_out;
    let dh = cfg.head_dim();
    let m = g.node_shape(x)[0];
    let mut rng = dropout_rng;
    for l in 0..cfg.tf_layers {
        let ln1g = pn.get(g, &format!("tf{l}.ln1.gamma"), vec![d]);
        let ln1b = pn.get(g, &format!("tf{l}.ln1.beta"), vec![d]);
        let x1 = g.layer_norm_rows(x, ln1g, ln1b, cfg.ln_eps)?;
        let wq = pn.get(g, &format!("tf{l}.attn.wq"), vec![d, d]);
        let wk = pn.get(g, &format!("tf{l}.attn.wk"), vec![d, d]);
        let wv = pn.get(g, &format!("tf{l}.attn.wv"), vec![d, d]);
        let wo = pn.get(g, &format!("tf{l}.attn.wo"), vec![d, d]);
        let q = g.matmul(x1, wq)?;
        let k = g.matmul(x1, wk)?;
        let v = g.matmul(x1, wv)?;
        let mut heads = Vec::with_capacity(cfg.tf_heads);
        for hh in 0..cfg.tf_heads {
            let (from, to) = (hh * dh, (hh + 1) * dh);
            let qh = g.slice_cols(q, from, to)?;
            let kh = g.slice_cols(k, from, to)?;
            let vh = g.slice_cols(v, from, to)?;
            let qr = g.rotary(qh, cfg.rotary_base)?;
            let kr = g.rotary(kh, cfg.rotary_base)?;
            let kt = g.transpose(kr)?;
            let mut logits = g.matmul(qr, kt)?;
            logits = g.scale(logits, 1.0 / (dh as f64).sqrt());
            if cfg.causal {
                let mask = g.constant(causal_mask(m));
                logits = g.add(logits, mask)?;
            }
            let mut probs = g.softmax_rows(logits)?;
            if let Some(r) = rng.as_deref_mut() {
                if cfg.attention_dropout > 0.0 {
                    let mask = g.constant(dropout_mask(m, cfg.attention_dropout, r));
                    probs = g.mul(probs, mask)?;
                }
            }
            heads.push(g.matmul(probs, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        let attn_out = g.matmul(cat, wo)?;
        x = g.add(x, attn_out)?;

        let ln2g = pn.get(g, &format!("tf{l}.ln2.gamma"), vec![d]);
        let ln2b = pn.get(g, &format!("tf{l}.ln2.beta"), vec![d]);
        let x2 = g.layer_norm_rows(x, ln2g, ln2b, cfg.ln_eps)?;
        let w1 = pn.get(g, &format!("tf{l}.mlp.w1"), vec![d, d * cfg.tf_mlp_mult]);
        let b1 = pn.get(g, &format!("tf{l}.mlp.b1"), vec![d * cfg.tf_mlp_mult]);
        let w2 = pn.get(g, &format!("tf{l}.mlp.w2"), vec![d * cfg.tf_mlp_mult, d]);
        let b2 = pn.get(g, &format!("tf{l}.mlp.b2"), vec![d]);
        let h1 = g.matmul(x2, w1)?;
        let h1 = g.broadcast_add_rows(h1, b1)?;
        let h1 = g.gelu(h1);
        let h2 = g.matmul(h1, w2)?;
        let h2 = g.broadcast_add_rows(h2, b2)?;
        x = g.add(x, h2)?;
    }
    let fg = pn.get(g, "tf.final.gamma", vec![d]);
    let fb = pn.get(g, "tf.final.beta", vec![d]);
    g.layer_norm_rows(x, fg, fb, cfg.ln_eps)
}

/// Append the full decode path for a batch of sentences.
///
/// Inputs are declared as `x{item}_{word}` with shape (n_sensors × t); the
/// output node stacks one d-vector per word, sentence by sentence, in the
/// given order. `dropout_seed` enables training-mode attention dropout.
pub fn append_decode(
    g: &mut GraphBuilder,
    cfg: &ModelConfig,
    positions: &[[f64; 2]],
    items: &[SentenceItem],
    t_samples: usize,
    n_subjects: usize,
    dropout_seed: Option<u64>,
) -> Result<NodeId> {
    cfg.validate()?;
    if positions.len() != cfg.n_sensors {
        return Err(Error::Model(format!(
            "{} sensor positions for a {}-sensor model",
            positions.len(),
            cfg.n_sensors
        )));
    }
    if items.iter().any(|it| it.n_words == 0) {
        return Err(Error::Model("empty sentence group".into()));
    }
    if items.iter().any(|it| it.subject_index >= n_subjects) {
        return Err(Error::Model("subject index out of range".into()));
    }
    let phi = g.constant(fourier_features(positions, cfg.fourier_k));
    let mut pn = ParamNodes::new();
    let mut rng = dropout_seed.map(seeded_rng);
    let mut sentence_outputs = Vec::with_capacity(items.len());
    for (si, item) in items.iter().enumerate() {
        let mut word_rows = Vec::with_capacity(item.n_words);
        for wi in 0..item.n_words {
            let x = g.input(&format!("x{si}_{wi}"), vec![cfg.n_sensors, t_samples]);
            let s = append_spatial(g, &mut pn, cfg, phi, x)?;
            let s = append_subject(g, &mut pn, cfg, n_subjects, item.subject_index, s)?;
            let s = append_conv_stack(g, &mut pn, cfg, s)?;
            let p = append_projection(g, &mut pn, cfg, s)?;
            word_rows.push(append_pool(g, &mut pn, cfg, p)?);
        }
        let stacked = if word_rows.len() == 1 {
            word_rows[0]
        } else {
            g.concat_rows(&word_rows)?
        };
        let refined = if cfg.use_transformer {
            append_transformer(g, &mut pn, cfg, stacked, rng.as_mut())?
        } else {
            stacked
        };
        sentence_outputs.push(refined);
    }
    if sentence_outputs.len() == 1 {
        Ok(sentence_outputs[0])
    } else {
        g.concat_rows(&sentence_outputs)
    }
}

/// Input map for [`append_decode`]-built graphs.
pub fn decode_inputs(groups: &[(usize, Vec<&Epoch>)]) -> TensorMap {
    let mut inputs = TensorMap::new();
    for (si, (_, epochs)) in groups.iter().enumerate() {
        for (wi, e) in epochs.iter().enumerate() {
            inputs.insert(format!("x{si}_{wi}"), epoch_input(e));
        }
    }
    inputs
}

/// Predict embeddings for word epochs grouped by sentence (eval mode).
///
/// Each group is one sentence from one subject; the result stacks one
/// d-vector per word in the given order.
pub fn decode_word_batch(
    cfg: &ModelConfig,
    params: &DecoderParams,
    positions: &[[f64; 2]],
    groups: &[(String, Vec<&Epoch>)],
) -> Result<Tensor> {
    if groups.is_empty() {
        return Err(Error::Model("empty batch".into()));
    }
    let t_samples = groups[0].1.first().map_or(0, |e| e.t_samples);
    let mut items = Vec::with_capacity(groups.len());
    let mut indexed = Vec::with_capacity(groups.len());
    for (subject_id, epochs) in groups {
        let idx = params.subject_index(subject_id)?;
        items.push(SentenceItem {
            subject_index: idx,
            n_words: epochs.len(),
        });
        indexed.push((idx, epochs.iter().copied().collect::<Vec<_>>()));
    }
    let mut g = GraphBuilder::new();
    let pred = append_decode(
        &mut g,
        cfg,
        positions,
        &items,
        t_samples,
        params.n_subjects(),
        None,
    )?;
    g.output("pred", pred);
    let graph = g.build();
    let inputs = decode_inputs(&indexed);
    let exec = graph.forward(&inputs, &params.tensors)?;
    Ok(graph.output(&exec, "pred")?.clone())
}

// ---- eager per-stage wrappers (test and inspection surface) --------------

fn run_single<F>(
    params: &DecoderParams,
    inputs: TensorMap,
    build: F,
) -> Result<Tensor>
where
    F: FnOnce(&mut GraphBuilder, &mut ParamNodes) -> Result<NodeId>,
{
    let mut g = GraphBuilder::new();
    let mut pn = ParamNodes::new();
    let out = build(&mut g, &mut pn)?;
    g.output("out", out);
    let graph = g.build();
    let exec = graph.forward(&inputs, &params.tensors)?;
    Ok(graph.output(&exec, "out")?.clone())
}

/// Position-aware sensor mixing: (t × n) epoch → (t × c) features.
pub fn spatial_attention(
    cfg: &ModelConfig,
    params: &DecoderParams,
    x: &Tensor,
    positions: &[[f64; 2]],
) -> Result<Tensor> {
    if x.cols() != positions.len() {
        return Err(Error::Model(format!(
            "epoch has {} sensors, {} positions supplied",
            x.cols(),
            positions.len()
        )));
    }
    if positions.len() != cfg.n_sensors {
        return Err(Error::Model(format!(
            "{} sensor positions for a {}-sensor model",
            positions.len(),
            cfg.n_sensors
        )));
    }
    let mut inputs = TensorMap::new();
    inputs.insert("x".into(), crate::diffcore::transpose(x));
    let phi_t = fourier_features(positions, cfg.fourier_k);
    let out = run_single(params, inputs, |g, pn| {
        let phi = g.constant(phi_t);
        let xin = g.input("x", vec![cfg.n_sensors, x.rows()]);
        append_spatial(g, pn, cfg, phi, xin)
    })?;
    Ok(crate::diffcore::transpose(&out))
}

/// Per-subject learned channel transform applied timewise, (t × c) → (t × c).
pub fn subject_layer(
    cfg: &ModelConfig,
    params: &DecoderParams,
    f: &Tensor,
    subject_id: &str,
) -> Result<Tensor> {
    let idx = params.subject_index(subject_id)?;
    let mut inputs = TensorMap::new();
    inputs.insert("f".into(), crate::diffcore::transpose(f));
    let out = run_single(params, inputs, |g, pn| {
        let fin = g.input("f", vec![cfg.hidden_channels, f.rows()]);
        append_subject(g, pn, cfg, params.n_subjects(), idx, fin)
    })?;
    Ok(crate::diffcore::transpose(&out))
}

/// Dilated residual conv blocks, (t × c) → (t × c); time length preserved.
pub fn conv_stack(cfg: &ModelConfig, params: &DecoderParams, f: &Tensor) -> Result<Tensor> {
    let span = (cfg.conv_kernel - 1) * cfg.conv_dilations.iter().max().copied().unwrap_or(1) + 1;
    if f.rows() < span {
        return Err(Error::Model(format!(
            "window of {} samples shorter than kernel span {span}",
            f.rows()
        )));
    }
    let mut inputs = TensorMap::new();
    inputs.insert("f".into(), crate::diffcore::transpose(f));
    let out = run_single(params, inputs, |g, pn| {
        let fin = g.input("f", vec![cfg.hidden_channels, f.rows()]);
        append_conv_stack(g, pn, cfg, fin)
    })?;
    Ok(crate::diffcore::transpose(&out))
}

/// Attention pooling over time: (t × d) → d-vector with weights summing to 1.
pub fn attention_pool(cfg: &ModelConfig, params: &DecoderParams, s: &Tensor) -> Result<Vec<f64>> {
    let mut inputs = TensorMap::new();
    inputs.insert("s".into(), crate::diffcore::transpose(s));
    let out = run_single(params, inputs, |g, pn| {
        let sin = g.input("s", vec![cfg.d_out, s.rows()]);
        append_pool(g, pn, cfg, sin)
    })?;
    Ok(out.data().to_vec())
}

/// Sentence transformer over stacked word vectors, (m × d) → (m × d).
/// `dropout_seed` enables attention dropout (training mode).
pub fn transformer_pass(
    cfg: &ModelConfig,
    params: &DecoderParams,
    w: &Tensor,
    dropout_seed: Option<u64>,
) -> Result<Tensor> {
    if w.cols() != cfg.d_out {
        return Err(Error::Model(format!(
            "input width {} does not match model width {}",
            w.cols(),
            cfg.d_out
        )));
    }
    let mut inputs = TensorMap::new();
    inputs.insert("w".into(), w.clone());
    let mut rng = dropout_seed.map(seeded_rng);
    run_single(params, inputs, |g, pn| {
        let win = g.input("w", vec![w.rows(), cfg.d_out]);
        append_transformer(g, pn, cfg, win, rng.as_mut())
    })
}
