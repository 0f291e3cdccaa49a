//! Training loop: AdamW with cosine learning-rate decay and early stopping on
//! the validation balanced top-10 accuracy.
//!
//! Batches are (subject, sentence) groups packed to the configured word
//! budget, shuffled without replacement each epoch. Within a step the
//! per-sentence forward/backward passes run in parallel; the contrastive loss
//! couples them only through the (tiny) N×d prediction block, so gradients
//! are reduced in fixed batch order to keep runs bit-reproducible.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use crate::corpus::{
    assign_split, sentence_hash, Pos, RetrievalSet, Split, build_vocabulary, SyntheticDataset,
};
use crate::diffcore::{GraphBuilder, Tensor, TensorMap};
use crate::error::{Error, Result};
use crate::eval::{balanced_topk_accuracy, PredictionRecord};
use crate::model::{append_decode, DecoderParams, ModelConfig, SentenceItem};
use crate::objective::{append_clip, append_cosine, append_dsiglip, append_siglip, BatchLabels, DedupMode, LossKind};
use crate::signal::{epoch_extract, preprocess_recording, BASELINE_S, WINDOW_S};
use crate::util::{derive_seed, seeded_rng};

/// Optimization hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Cosine decay horizon, in epochs.
    pub decay_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub dedup_mode: DedupMode,
    pub clip_symmetric: bool,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Retrieval depth of the validation metric.
    pub topk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 64,
            max_epochs: 100,
            decay_epochs: 50,
            patience: 10,
            seed: 0,
            loss: LossKind::Dsiglip,
            dedup_mode: DedupMode::DropRepetitions,
            clip_symmetric: false,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            topk: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Train("learning rate must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Train(
                "contrastive losses need a batch size of at least 2".into(),
            ));
        }
        if self.patience == 0 {
            return Err(Error::Train("patience must be at least 1". into()));
        }
        Ok(())
    }
}

/// First/second moment accumulators, one pair per parameter.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    pub m: TensorMap,
    pub v: TensorMap,
    pub step: u64,
}

/// One AdamW step: decoupled weight decay, bias-corrected moments.
/// Parameters without gradients this step are left untouched.
pub fn adamw_update(
    tensors: &mut TensorMap,
    grads: &TensorMap,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(Error::Train(format!(
                "non-finite gradient for parameter '{name}' at step {}",
                state.step
            )));
        }
        let p = tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingTensor(format!("param '{name}'")))?;
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        for i in 0..g.numel() {
            let gi = g.data()[i];
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            let pi = p.data()[i];
            p.data_mut()[i] = pi - lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * pi);
        }
    }
    Ok(())
}

/// Cosine decay: `0.5·base·(1 + cos(π·min(s,S)/S))`, zero from step S onward.
pub fn lr_schedule(step: u64, base: f64, decay_steps: u64) -> f64 {
    let s = step.min(decay_steps) as f64;
    let frac = if decay_steps == 0 { 1.0 } else { s / decay_steps as f64 };
    0.5 * base * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// A word epoch stored compactly (f32) with its annotations.
#[derive(Debug, Clone)]
pub struct StoredEpoch {
    pub data: Vec<f32>,
    pub t_samples: usize,
    pub n_sensors: usize,
    pub word: String,
    pub pos: Pos,
}

impl StoredEpoch {
    fn from_epoch(e: &crate::signal::Epoch, pos: Pos) -> Self {
        StoredEpoch {
            data: e.data.iter().map(|&v| v as f32).collect(),
            t_samples: e.t_samples,
            n_sensors: e.n_sensors,
            word: e.word.clone(),
            pos,
        }
    }

    /// Sensor-major (n × t) input tensor, promoted to f64.
    pub fn input_tensor(&self) -> Tensor {
        let (t, n) = (self.t_samples, self.n_sensors);
        let mut data = vec![0.0f64; t * n];
        for ti in 0..t {
            for si in 0..n {
                data[si * t + ti] = self.data[ti * n + si] as f64;
            }
        }
        Tensor::new(vec![n, t], data).expect("epoch shape")
    }
}

/// One (subject, sentence) presentation: the batching unit.
#[derive(Debug, Clone)]
pub struct SentenceGroup {
    pub subject_index: usize,
    pub sentence_id: u32,
    pub split: Split,
    pub epochs: Vec<StoredEpoch>,
    /// Dense word-identity ids (dataset-wide), parallel to `epochs`.
    pub word_ids: Vec<usize>,
    /// Target embedding rows, parallel to `epochs`.
    pub targets: Vec<Vec<f64>>,
}

impl SentenceGroup {
    pub fn n_words(&self) -> usize {
        self.epochs.len()
    }
}

/// Preprocessed, epoch-extracted dataset ready for training and evaluation.
#[derive(Debug, Clone)]
pub struct DecodingDataset {
    pub groups: Vec<SentenceGroup>,
    pub retrieval: RetrievalSet,
    pub positions: Vec<[f64; 2]>,
    pub subject_ids: Vec<String>,
    pub t_samples: usize,
    pub d: usize,
    /// Training-split occurrence count per word (all subjects).
    pub train_counts: BTreeMap<String, usize>,
    pub word_pos: BTreeMap<String, Pos>,
    /// sentence id → (normalized-text hash, split); the leakage guard's input.
    pub sentence_splits: BTreeMap<u32, (u64, Split)>,
}

impl DecodingDataset {
    /// No sentence hash may appear in more than one split.
    pub fn check_leakage(&self) -> Result<()> {
        let mut by_hash: BTreeMap<u64, Split> = BTreeMap::new();
        for (id, (hash, split)) in &self.sentence_splits {
            match by_hash.insert(*hash, *split) {
                Some(prev) if prev != *split => {
                    return Err(Error::Leakage(format!(
                        "sentence {id} (hash {hash:#x}) appears in both {prev} and {split}"
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn group_indices(&self, split: Split) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_words(&self, split: Split) -> usize {
        self.groups
            .iter()
            .filter(|g| g.split == split)
            .map(|g| g.n_words())
            .sum()
    }
}

/// Cap applied to the retrieval vocabulary for all reported metrics.
pub const VOCAB_CAP: usize = 250;

/// Preprocess a generated dataset and assemble training groups.
pub fn dataset_from_memory(ds: &SyntheticDataset, vocab_cap: usize) -> Result<DecodingDataset> {
    let mut sentence_splits = BTreeMap::new();
    for s in &ds.sentences {
        s.validate()?;
        sentence_splits.insert(s.id, (sentence_hash(&s.text), assign_split(&s.text)));
    }
    // spans of training sentences, for scaler fitting
    let train_ranges: Vec<(f64, f64)> = ds
        .sentences
        .iter()
        .filter(|s| sentence_splits[&s.id].1 == Split::Train)
        .map(|s| {
            let first = s.events.first().map_or(0.0, |e| e.onset_s);
            let last = s.events.last().map_or(first, |e| e.onset_s);
            (first, last + WINDOW_S)
        })
        .collect();

    let per_subject: Vec<Vec<SentenceGroup>> = ds
        .recordings
        .par_iter()
        .enumerate()
        .map(|(subj_idx, rec)| -> Result<Vec<SentenceGroup>> {
            let (pre, _stats) = preprocess_recording(rec, &train_ranges)?;
            let mut groups = Vec::with_capacity(ds.sentences.len());
            for s in &ds.sentences {
                let mut epochs = Vec::with_capacity(s.events.len());
                for e in &s.events {
                    let mut ep = epoch_extract(&pre, e.onset_s, WINDOW_S, BASELINE_S)?;
                    ep.word = e.word.clone();
                    ep.sentence_id = s.id;
                    epochs.push(StoredEpoch::from_epoch(&ep, e.pos));
                }
                groups.push(SentenceGroup {
                    subject_index: subj_idx,
                    sentence_id: s.id,
                    split: sentence_splits[&s.id].1,
                    epochs,
                    word_ids: Vec::new(),
                    targets: Vec::new(),
                });
            }
            Ok(groups)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut groups: Vec<SentenceGroup> = per_subject.into_iter().flatten().collect();

    // dense word ids and embedding targets
    let mut word_id: BTreeMap<String, usize> = BTreeMap::new();
    for g in &groups {
        for e in &g.epochs {
            let next = word_id.len();
            word_id.entry(e.word.clone()).or_insert(next);
        }
    }
    for g in &mut groups {
        g.word_ids = g.epochs.iter().map(|e| word_id[&e.word]).collect();
        g.targets = g
            .epochs
            .iter()
            .map(|e| {
                ds.embeddings
                    .get(&e.word)
                    .cloned()
                    .ok_or_else(|| Error::Corpus(format!("no embedding for '{}'", e.word)))
            })
            .collect::<Result<Vec<_>>>()?;
    }

    // retrieval vocabulary over all occurrences, capped
    let occurrences: Vec<&str> = ds
        .sentences
        .iter()
        .flat_map(|s| s.events.iter().map(|e| e.word.as_str()))
        .collect();
    let distinct = word_id.len();
    let k = vocab_cap.min(distinct);
    let vocab = build_vocabulary(occurrences.into_iter(), k)?;
    let retrieval = RetrievalSet::from_vocabulary(vocab, &ds.embeddings)?;

    let mut train_counts: BTreeMap<String, usize> = BTreeMap::new();
    for g in &groups {
        if g.split == Split::Train {
            for e in &g.epochs {
                *train_counts.entry(e.word.clone()).or_insert(0) += 1;
            }
        }
    }

    let t_samples = groups
        .first()
        .and_then(|g| g.epochs.first())
        .map(|e| e.t_samples)
        .ok_or_else(|| Error::Train("dataset has no epochs".into()))?;

    Ok(DecodingDataset {
        groups,
        retrieval,
        positions: ds.recordings[0].sensor_positions.clone(),
        subject_ids: ds.recordings.iter().map(|r| r.subject_id.clone()).collect(),
        t_samples,
        d: ds.embeddings.d,
        train_counts,
        word_pos: ds.word_pos.clone(),
        sentence_splits,
    })
}

/// Per-epoch training record.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TrainHistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_balanced_topk: f64,
    pub lr: f64,
    pub wall_s: f64,
}

/// Fit outcome: best-validation parameters plus the full history.
#[derive(Debug)]
pub struct FitResult {
    pub params: DecoderParams,
    pub history: Vec<TrainHistoryRow>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
}

fn pack_batches(
    dataset: &DecodingDataset,
    indices: &[usize],
    batch_words: usize,
) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut words = 0usize;
    for &gi in indices {
        let n = dataset.groups[gi].n_words();
        if words > 0 && words + n > batch_words {
            batches.push(std::mem::take(&mut current));
            words = 0;
        }
        current.push(gi);
        words += n;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    // a trailing 1-word batch cannot feed a contrastive loss; merge it back
    if batches.len() >= 2 {
        let last_words: usize = batches
            .last()
            .unwrap()
            .iter()
            .map(|&gi| dataset.groups[gi].n_words())
            .sum();
        if last_words < 2 {
            let tail = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(tail);
        }
    }
    batches
}

struct StepOutput {
    loss: f64,
    grads: TensorMap,
}

fn train_step(
    dataset: &DecodingDataset,
    model_cfg: &ModelConfig,
    params: &DecoderParams,
    batch: &[usize],
    cfg: &TrainConfig,
    dropout_seed: u64,
) -> Result<StepOutput> {
    // stage A: per-sentence forward passes (parallel, seeded dropout)
    let forwards: Vec<(crate::diffcore::Graph, crate::diffcore::Execution, usize)> = batch
        .par_iter()
        .enumerate()
        .map(|(bi, &gi)| {
            let group = &dataset.groups[gi];
            let mut g = GraphBuilder::new();
            let pred = append_decode(
                &mut g,
                model_cfg,
                &dataset.positions,
                &[SentenceItem {
                    subject_index: group.subject_index,
                    n_words: group.n_words(),
                }],
                dataset.t_samples,
                dataset.subject_ids.len(),
                Some(derive_seed(dropout_seed, bi as u64)),
            )?;
            g.output("pred", pred);
            let graph = g.build();
            let mut inputs = TensorMap::new();
            for (wi, e) in group.epochs.iter().enumerate() {
                inputs.insert(format!("x0_{wi}"), e.input_tensor());
            }
            let exec = graph.forward(&inputs, &params.tensors)?;
            Ok((graph, exec, group.n_words()))
        })
        .collect::<Result<Vec<_>>>()?;

    // stage B: batch-level contrastive loss over the stacked predictions
    let n_total: usize = forwards.iter().map(|&(_, _, n)| n).sum();
    let d = dataset.d;
    let mut pred_data = Vec::with_capacity(n_total * d);
    for ((graph, exec, _), _) in forwards.iter().zip(batch) {
        pred_data.extend_from_slice(graph.output(exec, "pred")?.data());
    }
    let pred = Tensor::new(vec![n_total, d], pred_data)?;
    let mut targets = Vec::with_capacity(n_total * d);
    let mut word_ids = Vec::with_capacity(n_total);
    for &gi in batch {
        let group = &dataset.groups[gi];
        for t in &group.targets {
            targets.extend_from_slice(t);
        }
        word_ids.extend_from_slice(&group.word_ids);
    }
    let targets = Tensor::new(vec![n_total, d], targets)?;

    let mut g = GraphBuilder::new();
    let pred_in = g.input("pred", vec![n_total, d]);
    let cos = append_cosine(&mut g, pred_in, &targets)?;
    let tp = g.param("loss.tprime", vec![1]);
    let bp = g.param("loss.bias", vec![1]);
    let loss_node = match cfg.loss {
        LossKind::Clip => append_clip(&mut g, cos, tp, cfg.clip_symmetric)?,
        LossKind::Siglip => append_siglip(
            &mut g,
            cos,
            tp,
            bp,
            &BatchLabels::standard(n_total),
            n_total as f64,
        )?,
        LossKind::Dsiglip => append_dsiglip(&mut g, cos, tp, bp, &word_ids, cfg.dedup_mode)?,
    };
    g.output("loss", loss_node);
    let loss_graph = g.build();
    let mut loss_inputs = TensorMap::new();
    loss_inputs.insert("pred".into(), pred);
    let loss_exec = loss_graph.forward(&loss_inputs, &params.tensors)?;
    let loss_value = loss_graph.output(&loss_exec, "loss")?.item();
    let mut cot = TensorMap::new();
    cot.insert("loss".into(), Tensor::scalar(1.0));
    let loss_grads = loss_graph.backward(&loss_exec, &cot)?;
    let d_pred = loss_grads
        .inputs
        .get("pred")
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(vec![n_total, d]));

    // stage C: per-sentence backward from the prediction cotangents (parallel)
    let mut offsets = Vec::with_capacity(forwards.len());
    let mut row = 0usize;
    for &(_, _, n) in &forwards {
        offsets.push(row);
        row += n;
    }
    let sentence_grads: Vec<TensorMap> = forwards
        .par_iter()
        .zip(offsets.par_iter())
        .map(|((graph, exec, n), &row0)| {
            let rows = d_pred.data()[row0 * d..(row0 + n) * d].to_vec();
            let mut cot = TensorMap::new();
            cot.insert("pred".into(), Tensor::new(vec![*n, d], rows)?);
            Ok(graph.backward(exec, &cot)?.params)
        })
        .collect::<Result<Vec<_>>>()?;

    // stage D: fixed-order reduction
    let mut total: TensorMap = TensorMap::new();
    for gmap in sentence_grads {
        for (name, g) in gmap {
            match total.get_mut(&name) {
                Some(t) => t.add_assign(&g),
                None => {
                    total.insert(name, g);
                }
            }
        }
    }
    for (name, g) in loss_grads.params {
        match total.get_mut(&name) {
            Some(t) => t.add_assign(&g),
            None => {
                total.insert(name, g);
            }
        }
    }
    Ok(StepOutput {
        loss: loss_value,
        grads: total,
    })
}

/// Forward the model over all groups of a split, producing scored records.
pub fn predict_records(
    dataset: &DecodingDataset,
    model_cfg: &ModelConfig,
    params: &DecoderParams,
    split: Split,
) -> Result<Vec<PredictionRecord>> {
    let indices = dataset.group_indices(split);
    let per_group: Vec<Vec<PredictionRecord>> = indices
        .par_iter()
        .map(|&gi| {
            let group = &dataset.groups[gi];
            let mut g = GraphBuilder::new();
            let pred = append_decode(
                &mut g,
                model_cfg,
                &dataset.positions,
                &[SentenceItem {
                    subject_index: group.subject_index,
                    n_words: group.n_words(),
                }],
                dataset.t_samples,
                dataset.subject_ids.len(),
                None,
            )?;
            g.output("pred", pred);
            let graph = g.build();
            let mut inputs = TensorMap::new();
            for (wi, e) in group.epochs.iter().enumerate() {
                inputs.insert(format!("x0_{wi}"), e.input_tensor());
            }
            let exec = graph.forward(&inputs, &params.tensors)?;
            let pred = graph.output(&exec, "pred")?;
            Ok(group
                .epochs
                .iter()
                .enumerate()
                .map(|(wi, e)| PredictionRecord {
                    word: e.word.clone(),
                    sentence_id: group.sentence_id,
                    subject_id: dataset.subject_ids[group.subject_index].clone(),
                    yhat: pred.row(wi).to_vec(),
                    split,
                    train_count: dataset.train_counts.get(&e.word).copied().unwrap_or(0),
                    pos: e.pos,
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_group.into_iter().flatten().collect())
}

/// Train with early stopping; returns the best-validation parameters.
pub fn fit(
    dataset: &DecodingDataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    model_cfg.validate()?;
    dataset.check_leakage()?;
    let train_idx = dataset.group_indices(Split::Train);
    let val_idx = dataset.group_indices(Split::Val);
    if train_idx.is_empty() {
        return Err(Error::Train("training split is empty".into()));
    }
    if val_idx.is_empty() {
        return Err(Error::Train("validation split is empty".into()));
    }

    let mut params = DecoderParams::init(model_cfg, dataset.subject_ids.clone(), cfg.seed)?;
    let mut state = OptimizerState::default();
    let total_train_words = dataset.n_words(Split::Train);
    let steps_per_epoch = total_train_words.div_ceil(cfg.batch_size).max(1) as u64;
    let decay_steps = steps_per_epoch * cfg.decay_epochs as u64;

    let mut history = Vec::new();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();
    let mut epochs_since_best = 0usize;
    let mut stopped_early = false;
    let mut global_step = 0u64;

    for epoch in 0..cfg.max_epochs {
        let t0 = Instant::now();
        let mut order = train_idx.clone();
        {
            use rand::seq::SliceRandom;
            let mut rng = seeded_rng(derive_seed(cfg.seed, 1000 + epoch as u64));
            order.shuffle(&mut rng);
        }
        let batches = pack_batches(dataset, &order, cfg.batch_size);
        let mut epoch_loss = 0.0;
        let mut first_lr = None;
        for (bi, batch) in batches.iter().enumerate() {
            let lr = lr_schedule(global_step, cfg.lr, decay_steps);
            first_lr.get_or_insert(lr);
            let step = train_step(
                dataset,
                model_cfg,
                &params,
                batch,
                cfg,
                derive_seed(cfg.seed, (epoch as u64) << 20 | bi as u64),
            )?;
            adamw_update(&mut params.tensors, &step.grads, &mut state, cfg, lr)?;
            epoch_loss += step.loss;
            global_step += 1;
        }
        let train_loss = epoch_loss / batches.len().max(1) as f64;

        let val_records = predict_records(dataset, model_cfg, &params, Split::Val)?;
        let k = cfg.topk.min(dataset.retrieval.len());
        let val_score = balanced_topk_accuracy(&val_records, &dataset.retrieval, k)?;
        history.push(TrainHistoryRow {
            epoch,
            train_loss,
            val_balanced_topk: val_score,
            lr: first_lr.unwrap_or(0.0),
            wall_s: t0.elapsed().as_secs_f64(),
        });

        if val_score >= best_val {
            best_val = val_score;
            best_epoch = epoch;
            best_params = params.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(FitResult {
        params: best_params,
        history,
        best_epoch,
        best_val,
        stopped_early,
    })
}

/// Loss-comparison harness: trains one model per objective on the same
/// dataset and records the resulting ordering (directional report only).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AblationEntry {
    pub loss: String,
    pub best_val: f64,
    pub test_balanced_topk: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AblationReport {
    pub entries: Vec<AblationEntry>,
    /// Loss names sorted by descending test score.
    pub ordering: Vec<String>,
}

pub fn run_loss_ablation(
    dataset: &DecodingDataset,
    model_cfg: &ModelConfig,
    base_cfg: &TrainConfig,
) -> Result<AblationReport> {
    let mut entries = Vec::new();
    for loss in [LossKind::Clip, LossKind::Siglip, LossKind::Dsiglip] {
        let mut cfg = base_cfg.clone();
        cfg.loss = loss;
        let fitres = fit(dataset, model_cfg, &cfg)?;
        let test_records = predict_records(dataset, model_cfg, &fitres.params, Split::Test)?;
        let test_score = balanced_topk_accuracy(&test_records, &dataset.retrieval, cfg.topk)?;
        entries.push(AblationEntry {
            loss: loss.to_string(),
            best_val: fitres.best_val,
            test_balanced_topk: test_score,
            epochs_run: fitres.history.len(),
        });
    }
    let mut ordering: Vec<(String, f64)> = entries
        .iter()
        .map(|e| (e.loss.clone(), e.test_balanced_topk))
        .collect();
    ordering.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    Ok(AblationReport {
        entries,
        ordering: ordering.into_iter().map(|(l, _)| l).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adamw_hand_step() {
        // p=1, g=1, lr=0.1, betas (0.9, 0.999), eps 1e-8, wd 0.01, step 1 -> 0.899
        let cfg = TrainConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut tensors = TensorMap::new();
        tensors.insert("p".into(), Tensor::scalar(1.0));
        let mut grads = TensorMap::new();
        grads.insert("p".into(), Tensor::scalar(1.0));
        let mut state = OptimizerState::default();
        adamw_update(&mut tensors, &grads, &mut state, &cfg, 0.1).unwrap();
        let p = tensors["p"].item();
        assert!((p - 0.899).abs() < 1e-9, "{p}");
    }

    #[test]
    fn adamw_zero_gradient_fixed_point() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut tensors = TensorMap::new();
        tensors.insert("p".into(), Tensor::scalar(2.5));
        let mut grads = TensorMap::new();
        grads.insert("p".into(), Tensor::scalar(0.0));
        let mut state = OptimizerState::default();
        for _ in 0..10 {
            adamw_update(&mut tensors, &grads, &mut state, &cfg, 0.1).unwrap();
        }
        assert_eq!(tensors["p"].item(), 2.5);
    }

    #[test]
    fn adamw_deterministic() {
        let cfg = TrainConfig::default();
        let run = || {
            let mut tensors = TensorMap::new();
            tensors.insert("p".into(), Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
            let mut state = OptimizerState::default();
            for step in 0..10 {
                let mut grads = TensorMap::new();
                grads.insert(
                    "p".into(),
                    Tensor::new(vec![3], vec![0.1 * step as f64, -0.2, 0.05]).unwrap(),
                );
                adamw_update(&mut tensors, &grads, &mut state, &cfg, 1e-3).unwrap();
            }
            (tensors["p"].data().to_vec(), state.step)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adamw_nan_gradient_names_param() {
        let cfg = TrainConfig::default();
        let mut tensors = TensorMap::new();
        tensors.insert("conv0.w".into(), Tensor::scalar(1.0));
        let mut grads = TensorMap::new();
        grads.insert("conv0.w".into(), Tensor::scalar(f64::NAN));
        let mut state = OptimizerState::default();
        let err = adamw_update(&mut tensors, &grads, &mut state, &cfg, 0.1).unwrap_err();
        assert!(err.to_string().contains("conv0.w"), "{err}");
    }

    #[test]
    fn lr_schedule_anchors() {
        let base = 1e-4;
        assert_eq!(lr_schedule(0, base, 100), base);
        assert!((lr_schedule(50, base, 100) - base / 2.0).abs() < 1e-18);
        assert_eq!(lr_schedule(100, base, 100), 0.0);
        assert_eq!(lr_schedule(250, base, 100), 0.0);
    }

    #[test]
    fn pack_batches_keeps_sentences_intact() {
        // synthetic groups with 3 words each, 7-word budget -> 2 groups per batch
        let mut ds = tiny_dataset();
        ds.groups.truncate(6);
        let idx: Vec<usize> = (0..6).collect();
        let batches = pack_batches(&ds, &idx, 7);
        for b in &batches {
            let words: usize = b.iter().map(|&gi| ds.groups[gi].n_words()).sum();
            assert!(words <= 7 || b.len() == 1);
        }
        let all: Vec<usize> = batches.concat();
        assert_eq!(all.len(), 6);
    }

    fn tiny_dataset() -> DecodingDataset {
        let cfg = crate::corpus::SyntheticConfig {
            n_subjects: 2,
            n_sentences: 24,
            vocab_size: 10,
            d: 8,
            n_sensors: 4,
            latent_dim: 4,
            snr: f64::INFINITY,
            seed: 77,
            sentence_len: (3, 3),
            ..Default::default()
        };
        let ds = crate::corpus::synth_generate(&cfg).unwrap();
        dataset_from_memory(&ds, 250).unwrap()
    }

    #[test]
    fn leakage_guard_fires_on_corruption() {
        let mut ds = tiny_dataset();
        ds.check_leakage().unwrap();
        // two ids with the same hash in different splits
        let (&first_id, &(hash, split)) = ds.sentence_splits.iter().next().unwrap();
        let other = if split == Split::Train { Split::Test } else { Split::Train };
        ds.sentence_splits.insert(first_id + 10_000, (hash, other));
        let err = ds.check_leakage().unwrap_err();
        assert!(matches!(err, Error::Leakage(_)), "{err}");
    }

    #[test]
    fn fit_rejects_empty_split() {
        let mut ds = tiny_dataset();
        for g in &mut ds.groups {
            if g.split == Split::Val {
                g.split = Split::Train;
            }
        }
        let model_cfg = toy_model(&ds);
        let err = fit(&ds, &model_cfg, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("validation"), "{err}");
    }

    fn toy_model(ds: &DecodingDataset) -> ModelConfig {
        let mut cfg = ModelConfig::desk_default(4, ds.d);
        cfg.hidden_channels = 8;
        cfg.conv_dilations = vec![1, 2];
        cfg.tf_layers = 1;
        cfg.tf_heads = 2;
        cfg
    }

    #[test]
    fn two_fits_same_seed_identical_history() {
        let ds = tiny_dataset();
        let model_cfg = toy_model(&ds);
        let cfg = TrainConfig {
            max_epochs: 2,
            batch_size: 12,
            seed: 3,
            ..Default::default()
        };
        let a = fit(&ds, &model_cfg, &cfg).unwrap();
        let b = fit(&ds, &model_cfg, &cfg).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.train_loss, rb.train_loss);
            assert_eq!(ra.val_balanced_topk, rb.val_balanced_topk);
            assert_eq!(ra.lr, rb.lr);
        }
    }

    #[test]
    fn lr_zero_and_wd_zero_freezes_params() {
        let ds = tiny_dataset();
        let model_cfg = toy_model(&ds);
        let params = DecoderParams::init(&model_cfg, ds.subject_ids.clone(), 1).unwrap();
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let batch = ds.group_indices(Split::Train)[..2].to_vec();
        let step = train_step(&ds, &model_cfg, &params, &batch, &cfg, 9).unwrap();
        let mut tensors = params.tensors.clone();
        let mut state = OptimizerState::default();
        adamw_update(&mut tensors, &step.grads, &mut state, &cfg, 0.0).unwrap();
        for (name, t) in &tensors {
            assert_eq!(t.data(), params.tensors[name].data(), "{name} changed");
        }
    }
}
