//! Word-retrieval evaluation battery: top-k and balanced accuracies,
//! repetition averaging, mistake profiling, zero-shot buckets, and
//! retrieval-set-size sweeps.
//!
//! Everything here is pure scoring over immutable prediction records; any
//! sampling is driven by an explicit seed, so every reported rate is
//! reproducible bit for bit from (records, seed).

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Pos, RetrievalSet, Split};
use crate::error::{Error, Result};
use crate::util::seeded_rng;
use rand::seq::SliceRandom;
use rand::Rng;

/// One scored model output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub word: String,
    pub sentence_id: u32,
    pub subject_id: String,
    pub yhat: Vec<f64>,
    pub split: Split,
    pub train_count: usize,
    pub pos: Pos,
}

/// Ranked candidate indices into the retrieval set, best first.
/// Ties break by vocabulary order (stable sort, frequency-descending).
pub fn retrieve_topk(yhat: &[f64], retrieval: &RetrievalSet, k: usize) -> Result<Vec<usize>> {
    if retrieval.is_empty() {
        return Err(Error::Eval("empty retrieval set".into()));
    }
    if k > retrieval.len() {
        return Err(Error::Eval(format!(
            "k={k} exceeds retrieval set size {}",
            retrieval.len()
        )));
    }
    let norm: f64 = yhat.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Eval("zero-norm predicted embedding".into()));
    }
    let mut scored: Vec<(usize, f64)> = (0..retrieval.len())
        .map(|i| {
            let row = retrieval.embedding(i);
            let rn: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            let dot: f64 = row.iter().zip(yhat).map(|(a, b)| a * b).sum();
            (i, dot / (rn * norm))
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    Ok(scored.into_iter().take(k).map(|(i, _)| i).collect())
}

fn topk_hit(yhat: &[f64], word_idx: usize, retrieval: &RetrievalSet, k: usize) -> Result<bool> {
    Ok(retrieve_topk(yhat, retrieval, k)?.contains(&word_idx))
}

/// Per-word top-k hit rates averaged across words. Records whose word is
/// outside the retrieval vocabulary are discarded entirely.
pub fn balanced_topk_accuracy(
    records: &[PredictionRecord],
    retrieval: &RetrievalSet,
    k: usize,
) -> Result<f64> {
    let mut hits: Vec<(usize, bool)> = records
        .par_iter()
        .filter_map(|r| {
            retrieval
                .position(&r.word)
                .map(|idx| topk_hit(&r.yhat, idx, retrieval, k).map(|h| (idx, h)))
        })
        .collect::<Result<Vec<_>>>()?;
    hits.sort_by_key(|&(idx, _)| idx);
    if hits.is_empty() {
        return Err(Error::Eval(
            "no scorable records (all words outside the vocabulary)".into(),
        ));
    }
    let mut per_word: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (idx, hit) in hits {
        let e = per_word.entry(idx).or_insert((0, 0));
        e.0 += hit as usize;
        e.1 += 1;
    }
    let sum: f64 = per_word
        .values()
        .map(|&(h, n)| h as f64 / n as f64)
        .sum();
    Ok(sum / per_word.len() as f64)
}

/// Plain (unbalanced) top-k accuracy over scorable records.
pub fn topk_accuracy(
    records: &[PredictionRecord],
    retrieval: &RetrievalSet,
    k: usize,
) -> Result<f64> {
    let hits: Vec<bool> = records
        .par_iter()
        .filter_map(|r| {
            retrieval
                .position(&r.word)
                .map(|idx| topk_hit(&r.yhat, idx, retrieval, k))
        })
        .collect::<Result<Vec<_>>>()?;
    if hits.is_empty() {
        return Err(Error::Eval("no scorable records".into()));
    }
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Repetition-averaging mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageMode {
    /// Same subject, different sentences.
    WithinSubjectAcrossContexts,
    /// Same sentence, different subjects.
    WithinContextAcrossSubjects,
    /// Any repetitions of the word.
    Pooled,
}

impl std::str::FromStr for AverageMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contexts" | "within_subject_across_contexts" => {
                Ok(AverageMode::WithinSubjectAcrossContexts)
            }
            "subjects" | "within_context_across_subjects" => {
                Ok(AverageMode::WithinContextAcrossSubjects)
            }
            "pooled" => Ok(AverageMode::Pooled),
            other => Err(Error::Config(format!("unknown averaging mode '{other}'"))),
        }
    }
}

/// Result of [`averaged_eval`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AveragedScore {
    pub mode: AverageMode,
    pub n: usize,
    pub score: f64,
    pub words_scored: usize,
    pub words_skipped: usize,
}

/// Average n predicted embeddings per word before retrieving, repeated over
/// seeded trials. `n = 1` reduces exactly to single-trial balanced scoring.
pub fn averaged_eval(
    records: &[PredictionRecord],
    mode: AverageMode,
    n: usize,
    k: usize,
    retrieval: &RetrievalSet,
    trials: usize,
    seed: u64,
) -> Result<AveragedScore> {
    if n == 0 {
        return Err(Error::Eval("averaging needs n ≥ 1".into()));
    }
    if n == 1 {
        let score = balanced_topk_accuracy(records, retrieval, k)?;
        let words: BTreeSet<&str> = records
            .iter()
            .filter(|r| retrieval.position(&r.word).is_some())
            .map(|r| r.word.as_str())
            .collect();
        return Ok(AveragedScore {
            mode,
            n: 1,
            score,
            words_scored: words.len(),
            words_skipped: 0,
        });
    }

    // group record indices per word according to the averaging mode
    type Groups = Vec<Vec<usize>>;
    let mut per_word: BTreeMap<usize, Groups> = BTreeMap::new();
    {
        let mut keyed: BTreeMap<usize, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
        for (ri, r) in records.iter().enumerate() {
            let Some(widx) = retrieval.position(&r.word) else {
                continue;
            };
            let group_key = match mode {
                AverageMode::WithinSubjectAcrossContexts => r.subject_id.clone(),
                AverageMode::WithinContextAcrossSubjects => format!("c{}", r.sentence_id),
                AverageMode::Pooled => "all".to_string(),
            };
            keyed.entry(widx).or_default().entry(group_key).or_default().push(ri);
        }
        for (widx, groups) in keyed {
            per_word.insert(widx, groups.into_values().collect());
        }
    }

    let d = retrieval.d();
    let mut scored = 0usize;
    let mut skipped = 0usize;
    let mut scores: Vec<f64> = Vec::new();
    let word_indices: Vec<usize> = per_word.keys().copied().collect();
    let results: Vec<Option<f64>> = word_indices
        .par_iter()
        .map(|&widx| {
            let groups = &per_word[&widx];
            // a group qualifies when it offers n distinct repetitions under the mode
            let qualifying: Vec<&Vec<usize>> = groups
                .iter()
                .filter(|g| match mode {
                    AverageMode::WithinSubjectAcrossContexts => {
                        let ctx: BTreeSet<u32> =
                            g.iter().map(|&ri| records[ri].sentence_id).collect();
                        ctx.len() >= n
                    }
                    AverageMode::WithinContextAcrossSubjects => {
                        let subj: BTreeSet<&str> =
                            g.iter().map(|&ri| records[ri].subject_id.as_str()).collect();
                        subj.len() >= n
                    }
                    AverageMode::Pooled => g.len() >= n,
                })
                .collect();
            if qualifying.is_empty() {
                return None;
            }
            let mut rng = seeded_rng(crate::util::derive_seed(seed, widx as u64));
            let mut hits = 0usize;
            for _ in 0..trials {
                let g = qualifying[rng.random_range(0..qualifying.len())];
                let chosen = sample_repetitions(records, g, mode, n, &mut rng);
                debug_assert_eq!(chosen.len(), n);
                let mut avg = vec![0.0; d];
                for &ri in &chosen {
                    for (a, v) in avg.iter_mut().zip(&records[ri].yhat) {
                        *a += v;
                    }
                }
                for a in &mut avg {
                    *a /= n as f64;
                }
                if let Ok(hit) = topk_hit(&avg, widx, retrieval, k) {
                    hits += hit as usize;
                }
            }
            Some(hits as f64 / trials as f64)
        })
        .collect();
    for r in results {
        match r {
            Some(s) => {
                scores.push(s);
                scored += 1;
            }
            None => skipped += 1,
        }
    }
    if scores.is_empty() {
        return Err(Error::Eval(format!(
            "no word has {n} qualifying repetitions under {mode:?}"
        )));
    }
    Ok(AveragedScore {
        mode,
        n,
        score: scores.iter().sum::<f64>() / scores.len() as f64,
        words_scored: scored,
        words_skipped: skipped,
    })
}

/// Draw n record indices from a qualifying group, honoring the mode's
/// distinctness requirement (distinct sentences / distinct subjects).
fn sample_repetitions(
    records: &[PredictionRecord],
    group: &[usize],
    mode: AverageMode,
    n: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<usize> {
    match mode {
        AverageMode::Pooled => {
            let mut idx = group.to_vec();
            idx.shuffle(rng);
            idx.truncate(n);
            idx
        }
        AverageMode::WithinSubjectAcrossContexts => {
            let mut by_ctx: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for &ri in group {
                by_ctx.entry(records[ri].sentence_id).or_default().push(ri);
            }
            let mut ctxs: Vec<u32> = by_ctx.keys().copied().collect();
            ctxs.shuffle(rng);
            ctxs.truncate(n);
            ctxs.iter()
                .map(|c| {
                    let opts = &by_ctx[c];
                    opts[rng.random_range(0..opts.len())]
                })
                .collect()
        }
        AverageMode::WithinContextAcrossSubjects => {
            let mut by_subj: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for &ri in group {
                by_subj
                    .entry(records[ri].subject_id.as_str())
                    .or_default()
                    .push(ri);
            }
            let mut subjects: Vec<&str> = by_subj.keys().copied().collect();
            subjects.shuffle(rng);
            subjects.truncate(n);
            subjects
                .iter()
                .map(|s| {
                    let opts = &by_subj[s];
                    opts[rng.random_range(0..opts.len())]
                })
                .collect()
        }
    }
}

/// Match rates of incorrect top-1 predictions against the true words, with
/// permutation chance bands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MistakeProfile {
    pub n_mistakes: usize,
    /// Observed match rates keyed by property.
    pub rates: BTreeMap<String, f64>,
    /// 95% permutation band (2.5%, 97.5%) per property.
    pub bands: BTreeMap<String, (f64, f64)>,
    pub note: Option<String>,
}

fn first_char(w: &str) -> Option<char> {
    w.chars().next()
}

fn last_char(w: &str) -> Option<char> {
    w.chars().next_back()
}

fn match_rates(
    true_words: &[&str],
    pred_words: &[&str],
    pos_of: &BTreeMap<String, Pos>,
) -> BTreeMap<String, f64> {
    let n = true_words.len() as f64;
    let mut first = 0usize;
    let mut last = 0usize;
    let mut len = 0usize;
    let mut pos = 0usize;
    for (t, p) in true_words.iter().zip(pred_words) {
        first += (first_char(t) == first_char(p)) as usize;
        last += (last_char(t) == last_char(p)) as usize;
        len += (t.chars().count() == p.chars().count()) as usize;
        pos += (pos_of.get(*t) == pos_of.get(*p) && pos_of.contains_key(*t)) as usize;
    }
    let mut m = BTreeMap::new();
    m.insert("first_letter".into(), first as f64 / n);
    m.insert("last_letter".into(), last as f64 / n);
    m.insert("length".into(), len as f64 / n);
    m.insert("pos".into(), pos as f64 / n);
    m
}

/// Profile the incorrect top-1 predictions. `pos_of` supplies tags for
/// predicted words (true-word tags ride on the records).
pub fn mistake_profile(
    records: &[PredictionRecord],
    retrieval: &RetrievalSet,
    pos_of: &BTreeMap<String, Pos>,
    n_permutations: usize,
    seed: u64,
) -> Result<MistakeProfile> {
    let pairs: Vec<(String, String)> = records
        .par_iter()
        .filter_map(|r| {
            let widx = retrieval.position(&r.word)?;
            match retrieve_topk(&r.yhat, retrieval, 1) {
                Ok(top) if top[0] != widx => {
                    Some(Ok((r.word.clone(), retrieval.word(top[0]).to_string())))
                }
                Ok(_) => None,
                Err(e) => Some(Err(e)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if pairs.is_empty() {
        return Ok(MistakeProfile {
            n_mistakes: 0,
            rates: BTreeMap::new(),
            bands: BTreeMap::new(),
            note: Some("no incorrect top-1 predictions to profile".into()),
        });
    }
    let true_words: Vec<&str> = pairs.iter().map(|(t, _)| t.as_str()).collect();
    let pred_words: Vec<&str> = pairs.iter().map(|(_, p)| p.as_str()).collect();
    let rates = match_rates(&true_words, &pred_words, pos_of);

    let mut rng = seeded_rng(seed);
    let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut shuffled = pred_words.clone();
    for _ in 0..n_permutations {
        shuffled.shuffle(&mut rng);
        for (k, v) in match_rates(&true_words, &shuffled, pos_of) {
            samples.entry(k).or_default().push(v);
        }
    }
    let mut bands = BTreeMap::new();
    for (k, mut v) in samples {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = v[((v.len() as f64) * 0.025) as usize];
        let hi = v[(((v.len() as f64) * 0.975) as usize).min(v.len() - 1)];
        bands.insert(k, (lo, hi));
    }
    Ok(MistakeProfile {
        n_mistakes: pairs.len(),
        rates,
        bands,
        note: None,
    })
}

/// Balanced score of one frequency bucket.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketScore {
    pub bucket: String,
    pub score: f64,
    pub words: usize,
}

/// Balanced top-k per train-frequency bucket: out-of-vocabulary(train) words
/// (zero training occurrences) plus quartiles of the remaining words.
pub fn zero_shot_eval(
    records: &[PredictionRecord],
    retrieval: &RetrievalSet,
    k: usize,
) -> Result<Vec<BucketScore>> {
    let scorable: Vec<&PredictionRecord> = records
        .iter()
        .filter(|r| retrieval.position(&r.word).is_some())
        .collect();
    if scorable.is_empty() {
        return Err(Error::Eval("no scorable records".into()));
    }
    // per-word train counts
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &scorable {
        counts.insert(r.word.as_str(), r.train_count);
    }
    let mut seen_counts: Vec<usize> = counts
        .values()
        .copied()
        .filter(|&c| c > 0)
        .collect();
    seen_counts.sort_unstable();
    let quartile_of = |c: usize| -> usize {
        if seen_counts.is_empty() {
            return 1;
        }
        let pos = seen_counts.partition_point(|&x| x <= c);
        let q = (pos * 4).div_ceil(seen_counts.len().max(1));
        q.clamp(1, 4)
    };
    let mut buckets: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
    for r in &scorable {
        let name = if r.train_count == 0 {
            "oov_train".to_string()
        } else {
            format!("q{}", quartile_of(r.train_count))
        };
        buckets.entry(name).or_default().push((*r).clone());
    }
    let mut out = Vec::new();
    for name in ["oov_train", "q1", "q2", "q3", "q4"] {
        if let Some(rs) = buckets.get(name) {
            let words: BTreeSet<&str> = rs.iter().map(|r| r.word.as_str()).collect();
            let score = balanced_topk_accuracy(rs, retrieval, k)?;
            out.push(BucketScore {
                bucket: name.to_string(),
                score,
                words: words.len(),
            });
        }
    }
    Ok(out)
}

/// Balanced top-k of the 50 most frequent words as the retrieval set grows.
/// Sizes beyond the available vocabulary are capped (with a note in the
/// returned pairs' size values).
pub fn retrieval_size_sweep(
    records: &[PredictionRecord],
    retrieval: &RetrievalSet,
    sizes: &[usize],
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    let base = retrieval.truncated(50);
    let scored: Vec<PredictionRecord> = records
        .iter()
        .filter(|r| base.position(&r.word).is_some())
        .cloned()
        .collect();
    if scored.is_empty() {
        return Err(Error::Eval("no records among the 50 most frequent words".into()));
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for &size in sizes {
        let capped = size.min(retrieval.len()).max(50);
        if !seen.insert(capped) {
            continue;
        }
        let sub = retrieval.truncated(capped);
        out.push((capped, balanced_topk_accuracy(&scored, &sub, k)?));
    }
    Ok(out)
}

/// The versioned metrics document emitted by evaluation runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub vocab_size: usize,
    pub k: usize,
    pub n_records: usize,
    pub top_k_accuracy: f64,
    pub balanced_top_k_accuracy: f64,
    pub per_word_accuracy: BTreeMap<String, f64>,
    pub averaging_curves: Vec<AveragedScore>,
    pub mistake_profile: MistakeProfile,
    pub zero_shot: Vec<BucketScore>,
    pub retrieval_size_sweep: Vec<(usize, f64)>,
    pub chance_level: f64,
}

pub const METRICS_SCHEMA_VERSION: u32 = 1;

impl MetricsReport {
    /// Structural validation against the shipped schema.
    pub fn validate_json(value: &serde_json::Value) -> Result<()> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Eval("report must be a JSON object".into()))?;
        let expect = |key: &str, pred: fn(&serde_json::Value) -> bool, ty: &str| -> Result<()> {
            match obj.get(key) {
                Some(v) if pred(v) => Ok(()),
                Some(_) => Err(Error::Eval(format!("report field '{key}' is not {ty}"))),
                None => Err(Error::Eval(format!("report missing field '{key}'"))),
            }
        };
        expect("schema_version", |v| v.is_u64(), "an integer")?;
        expect("vocab_size", |v| v.is_u64(), "an integer")?;
        expect("k", |v| v.is_u64(), "an integer")?;
        expect("n_records", |v| v.is_u64(), "an integer")?;
        expect("top_k_accuracy", |v| v.is_number(), "a number")?;
        expect("balanced_top_k_accuracy", |v| v.is_number(), "a number")?;
        expect("per_word_accuracy", |v| v.is_object(), "an object")?;
        expect("averaging_curves", |v| v.is_array(), "an array")?;
        expect("mistake_profile", |v| v.is_object(), "an object")?;
        expect("zero_shot", |v| v.is_array(), "an array")?;
        expect("retrieval_size_sweep", |v| v.is_array(), "an array")?;
        expect("chance_level", |v| v.is_number(), "a number")?;
        for (key, val) in obj {
            match key.as_str() {
                "schema_version" | "vocab_size" | "k" | "n_records" | "top_k_accuracy"
                | "balanced_top_k_accuracy" | "per_word_accuracy" | "averaging_curves"
                | "mistake_profile" | "zero_shot" | "retrieval_size_sweep" | "chance_level"
                | "ablation" => {}
                other => {
                    let _ = val;
                    return Err(Error::Eval(format!("unknown report field '{other}'")));
                }
            }
        }
        Ok(())
    }

    /// Per-word single-trial accuracies (used for the report body).
    pub fn per_word(
        records: &[PredictionRecord],
        retrieval: &RetrievalSet,
        k: usize,
    ) -> Result<BTreeMap<String, f64>> {
        let mut per: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        let hits: Vec<(String, bool)> = records
            .par_iter()
            .filter_map(|r| {
                retrieval.position(&r.word).map(|idx| {
                    topk_hit(&r.yhat, idx, retrieval, k).map(|h| (r.word.clone(), h))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for (w, h) in hits {
            let e = per.entry(w).or_insert((0, 0));
            e.0 += h as usize;
            e.1 += 1;
        }
        Ok(per
            .into_iter()
            .map(|(w, (h, n))| (w, h as f64 / n as f64))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, EmbeddingProvider, RetrievalSet, SyntheticEmbeddings};

    fn make_retrieval(words: &[&str]) -> RetrievalSet {
        let provider = SyntheticEmbeddings::new(8, 77);
        let occurrences: Vec<&str> = words
            .iter()
            .enumerate()
            .flat_map(|(i, w)| std::iter::repeat_n(*w, words.len() - i))
            .collect();
        let vocab = build_vocabulary(occurrences.into_iter(), words.len()).unwrap();
        RetrievalSet::from_vocabulary(vocab, &provider).unwrap()
    }

    fn rec(word: &str, sentence: u32, subject: &str, yhat: Vec<f64>) -> PredictionRecord {
        PredictionRecord {
            word: word.into(),
            sentence_id: sentence,
            subject_id: subject.into(),
            yhat,
            split: Split::Test,
            train_count: 1,
            pos: Pos::Noun,
        }
    }

    #[test]
    fn own_embedding_ranks_first() {
        let rs = make_retrieval(&["alpha", "beta", "gamma"]);
        let provider = SyntheticEmbeddings::new(8, 77);
        let y = provider.lookup("beta").unwrap();
        let top = retrieve_topk(&y, &rs, 3).unwrap();
        assert_eq!(rs.word(top[0]), "beta");
    }

    #[test]
    fn orthogonal_prediction_falls_back_to_vocab_order() {
        // all-zero similarities: stable sort keeps frequency order
        let provider = SyntheticEmbeddings::new(4, 1);
        let vocab = build_vocabulary(["a", "a", "b"].into_iter(), 2).unwrap();
        let mut rs = RetrievalSet::from_vocabulary(vocab, &provider).unwrap();
        for v in rs.matrix.data_mut().iter_mut() {
            *v = 0.0;
        }
        // zero rows would be an error for cosine; give rows a shared direction
        let d = rs.d();
        for i in 0..rs.len() {
            rs.matrix.data_mut()[i * d] = 1.0;
        }
        let y = vec![0.0, 1.0, 0.0, 0.0];
        let top = retrieve_topk(&y, &rs, 2).unwrap();
        assert_eq!(top, vec![0, 1]);
    }

    #[test]
    fn retrieval_scale_invariant() {
        let rs = make_retrieval(&["alpha", "beta", "gamma"]);
        let provider = SyntheticEmbeddings::new(8, 77);
        let y = provider.lookup("gamma").unwrap();
        let scaled: Vec<f64> = y.iter().map(|v| v * 7.5).collect();
        assert_eq!(
            retrieve_topk(&y, &rs, 3).unwrap(),
            retrieve_topk(&scaled, &rs, 3).unwrap()
        );
    }

    #[test]
    fn zero_norm_prediction_rejected() {
        let rs = make_retrieval(&["alpha", "beta"]);
        assert!(retrieve_topk(&[0.0; 8], &rs, 1).is_err());
    }

    #[test]
    fn balanced_vs_plain_hand_count() {
        let rs = make_retrieval(&["alpha", "beta"]);
        let provider = SyntheticEmbeddings::new(8, 77);
        let good_a = provider.lookup("alpha").unwrap();
        let good_b = provider.lookup("beta").unwrap();
        let bad_b: Vec<f64> = good_a.clone(); // predicts alpha for beta
        let records = vec![
            rec("alpha", 0, "s0", good_a.clone()),
            rec("alpha", 1, "s0", good_a.clone()),
            rec("alpha", 2, "s0", good_a),
            rec("beta", 3, "s0", bad_b),
        ];
        let plain = topk_accuracy(&records, &rs, 1).unwrap();
        let balanced = balanced_topk_accuracy(&records, &rs, 1).unwrap();
        assert!((plain - 0.75).abs() < 1e-12);
        assert!((balanced - 0.5).abs() < 1e-12);
        let _ = good_b;
    }

    #[test]
    fn all_correct_is_one() {
        let rs = make_retrieval(&["alpha", "beta"]);
        let provider = SyntheticEmbeddings::new(8, 77);
        let records = vec![
            rec("alpha", 0, "s0", provider.lookup("alpha").unwrap()),
            rec("beta", 1, "s0", provider.lookup("beta").unwrap()),
        ];
        assert_eq!(balanced_topk_accuracy(&records, &rs, 1).unwrap(), 1.0);
    }

    #[test]
    fn out_of_vocab_words_excluded() {
        let rs = make_retrieval(&["alpha", "beta"]);
        let provider = SyntheticEmbeddings::new(8, 77);
        let records = vec![
            rec("alpha", 0, "s0", provider.lookup("alpha").unwrap()),
            rec("unknown", 1, "s0", provider.lookup("alpha").unwrap()),
        ];
        assert_eq!(balanced_topk_accuracy(&records, &rs, 1).unwrap(), 1.0);
        let only_oov = vec![rec("unknown", 1, "s0", provider.lookup("alpha").unwrap())];
        assert!(balanced_topk_accuracy(&only_oov, &rs, 1).is_err());
    }

    #[test]
    fn averaged_n1_equals_single_trial() {
        let rs = make_retrieval(&["alpha", "beta", "gamma"]);
        let provider = SyntheticEmbeddings::new(8, 77);
        let records: Vec<PredictionRecord> = (0..9)
            .map(|i| {
                let w = ["alpha", "beta", "gamma"][i % 3];
                let mut y = provider.lookup(w).unwrap();
                y[0] += 0.1 * i as f64;
                rec(w, i as u32, "s0", y)
            })
            .collect();
        let single = balanced_topk_accuracy(&records, &rs, 1).unwrap();
        let avg = averaged_eval(&records, AverageMode::Pooled, 1, 1, &rs, 20, 5).unwrap();
        assert_eq!(avg.score, single);
    }

    #[test]
    fn averaging_identical_records_is_noop() {
        let rs = make_retrieval(&["alpha", "beta"]);
        let provider = SyntheticEmbeddings::new(8, 77);
        let y = provider.lookup("alpha").unwrap();
        let records: Vec<PredictionRecord> =
            (0..6).map(|i| rec("alpha", i, "s0", y.clone())).collect();
        let one = averaged_eval(&records, AverageMode::Pooled, 1, 1, &rs, 10, 3).unwrap();
        let four = averaged_eval(&records, AverageMode::Pooled, 4, 1, &rs, 10, 3).unwrap();
        assert_eq!(one.score, four.score);
    }

    #[test]
    fn insufficient_repetitions_skip_word() {
        let rs = make_retrieval(&["alpha", "beta"]);
        let provider = SyntheticEmbeddings::new(8, 77);
        let records = vec![
            rec("alpha", 0, "s0", provider.lookup("alpha").unwrap()),
            rec("alpha", 1, "s0", provider.lookup("alpha").unwrap()),
            rec("beta", 2, "s0", provider.lookup("beta").unwrap()),
        ];
        let out = averaged_eval(&records, AverageMode::Pooled, 2, 1, &rs, 5, 1).unwrap();
        assert_eq!(out.words_scored, 1);
        assert_eq!(out.words_skipped, 1);
    }

    #[test]
    fn mode_constraints_respected() {
        let rs = make_retrieval(&["alpha"]);
        let provider = SyntheticEmbeddings::new(8, 77);
        let y = provider.lookup("alpha").unwrap();
        // two records in the same sentence from one subject: no two distinct
        // contexts, no two distinct subjects
        let records = vec![
            rec("alpha", 0, "s0", y.clone()),
            rec("alpha", 0, "s0", y.clone()),
        ];
        assert!(averaged_eval(
            &records,
            AverageMode::WithinSubjectAcrossContexts,
            2,
            1,
            &rs,
            5,
            1
        )
        .is_err());
        assert!(averaged_eval(
            &records,
            AverageMode::WithinContextAcrossSubjects,
            2,
            1,
            &rs,
            5,
            1
        )
        .is_err());
        // but two subjects in the same sentence qualify the across-subjects mode
        let records = vec![
            rec("alpha", 0, "s0", y.clone()),
            rec("alpha", 0, "s1", y),
        ];
        let out = averaged_eval(
            &records,
            AverageMode::WithinContextAcrossSubjects,
            2,
            1,
            &rs,
            5,
            1,
        )
        .unwrap();
        assert_eq!(out.words_scored, 1);
    }

    #[test]
    fn mistake_profile_hand_comparison() {
        // true "night" predicted "light": first letter no, last yes, length yes
        let mut pos_of = BTreeMap::new();
        pos_of.insert("night".to_string(), Pos::Noun);
        pos_of.insert("light".to_string(), Pos::Noun);
        let rates = match_rates(&["night"], &["light"], &pos_of);
        assert_eq!(rates["first_letter"], 0.0);
        assert_eq!(rates["last_letter"], 1.0);
        assert_eq!(rates["length"], 1.0);
        assert_eq!(rates["pos"], 1.0);
    }

    #[test]
    fn mistake_profile_no_mistakes() {
        let rs = make_retrieval(&["alpha", "beta"]);
        let provider = SyntheticEmbeddings::new(8, 77);
        let records = vec![rec("alpha", 0, "s0", provider.lookup("alpha").unwrap())];
        let prof = mistake_profile(&records, &rs, &BTreeMap::new(), 100, 0).unwrap();
        assert_eq!(prof.n_mistakes, 0);
        assert!(prof.note.is_some());
    }

    #[test]
    fn random_predictions_within_bands() {
        use crate::util::{gauss_vec, seeded_rng};
        let words: Vec<String> = (0..20).map(|i| format!("word{i:02}")).collect();
        let refs: Vec<&str> = words.iter().map(|s| s.as_str()).collect();
        let rs = make_retrieval(&refs);
        let mut rng = seeded_rng(123);
        let mut pos_of = BTreeMap::new();
        for w in &words {
            pos_of.insert(w.clone(), Pos::Noun);
        }
        let records: Vec<PredictionRecord> = (0..300)
            .map(|i| {
                let w = &words[i % 20];
                rec(w, i as u32, "s0", gauss_vec(&mut rng, 8))
            })
            .collect();
        let prof = mistake_profile(&records, &rs, &pos_of, 1000, 9).unwrap();
        assert!(prof.n_mistakes > 100);
        // random predictions must never look like surface decoding: the rate
        // stays below the upper band edge (the detection threshold); the lower
        // edge is checked loosely since a single draw sits outside the 95%
        // band one time in twenty per property
        for (k, rate) in &prof.rates {
            let (lo, hi) = prof.bands[k];
            assert!(*rate <= hi + 1e-9, "{k}: rate {rate} above band ({lo}, {hi})");
            assert!(*rate >= lo - 0.05, "{k}: rate {rate} far below band ({lo}, {hi})");
        }
    }

    #[test]
    fn zero_shot_buckets() {
        let rs = make_retrieval(&["alpha", "beta", "gamma"]);
        let provider = SyntheticEmbeddings::new(8, 77);
        let mut records = vec![
            rec("alpha", 0, "s0", provider.lookup("alpha").unwrap()),
            rec("beta", 1, "s0", provider.lookup("beta").unwrap()),
        ];
        records[0].train_count = 0; // unseen during training
        records[1].train_count = 5;
        let buckets = zero_shot_eval(&records, &rs, 1).unwrap();
        assert!(buckets.iter().any(|b| b.bucket == "oov_train"));
        // all seen words in one quartile bucket
        assert!(buckets.iter().any(|b| b.bucket.starts_with('q')));

        // no zero-count words -> no oov bucket
        records[0].train_count = 2;
        let buckets = zero_shot_eval(&records, &rs, 1).unwrap();
        assert!(!buckets.iter().any(|b| b.bucket == "oov_train"));
    }

    #[test]
    fn sweep_non_increasing_and_anchored() {
        use crate::util::{gauss_vec, seeded_rng};
        let words: Vec<String> = (0..120).map(|i| format!("w{i:03}")).collect();
        let refs: Vec<&str> = words.iter().map(|s| s.as_str()).collect();
        let rs = make_retrieval(&refs);
        let provider = SyntheticEmbeddings::new(8, 77);
        let mut rng = seeded_rng(4);
        let records: Vec<PredictionRecord> = (0..200)
            .map(|i| {
                let w = &words[i % 50];
                let mut y = provider.lookup(w).unwrap();
                for v in y.iter_mut() {
                    *v += 0.8 * crate::util::gauss(&mut rng);
                }
                rec(w, i as u32, "s0", y)
            })
            .collect();
        let _ = gauss_vec(&mut rng, 1);
        let sweep = retrieval_size_sweep(&records, &rs, &[50, 80, 120, 500], 10).unwrap();
        assert_eq!(sweep[0].0, 50);
        assert_eq!(sweep.last().unwrap().0, 120); // capped
        for pair in sweep.windows(2) {
            assert!(
                pair[1].1 <= pair[0].1 + 1e-12,
                "score must not increase with retrieval size"
            );
        }
        // size 50 equals the standard score at |V|=50
        let direct = balanced_topk_accuracy(
            &records
                .iter()
                .filter(|r| rs.truncated(50).position(&r.word).is_some())
                .cloned()
                .collect::<Vec<_>>(),
            &rs.truncated(50),
            10,
        )
        .unwrap();
        assert!((sweep[0].1 - direct).abs() < 1e-12);
    }

    #[test]
    fn report_schema_validation() {
        let report = MetricsReport {
            schema_version: METRICS_SCHEMA_VERSION,
            vocab_size: 50,
            k: 10,
            n_records: 100,
            top_k_accuracy: 0.5,
            balanced_top_k_accuracy: 0.45,
            per_word_accuracy: BTreeMap::new(),
            averaging_curves: vec![],
            mistake_profile: MistakeProfile {
                n_mistakes: 0,
                rates: BTreeMap::new(),
                bands: BTreeMap::new(),
                note: None,
            },
            zero_shot: vec![],
            retrieval_size_sweep: vec![],
            chance_level: 0.2,
        };
        let v = serde_json::to_value(&report).unwrap();
        MetricsReport::validate_json(&v).unwrap();
        let mut broken = v.clone();
        broken.as_object_mut().unwrap().remove("k");
        assert!(MetricsReport::validate_json(&broken).is_err());
    }
}
