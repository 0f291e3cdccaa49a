//! Retrieval vocabulary: the k most frequent words of a dataset, with their
//! embedding matrix.

use std::collections::BTreeMap;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

use super::embed::EmbeddingProvider;

/// Words ranked by descending occurrence count (ties lexicographic).
#[derive(Debug, Clone)]
pub struct Vocabulary {
    /// (word, count), most frequent first.
    pub entries: Vec<(String, usize)>,
    /// Fraction of all word occurrences covered by the vocabulary.
    pub coverage: f64,
    /// Set when fewer distinct words existed than requested.
    pub note: Option<String>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &String> {
        self.entries.iter().map(|(w, _)| w)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.iter().any(|(w, _)| w == word)
    }
}

/// Top-k vocabulary of a word-occurrence stream.
pub fn build_vocabulary<'a, I>(words: I, k: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    if k == 0 {
        return Err(Error::Corpus("vocabulary size must be at least 1".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut total = 0usize;
    for w in words {
        *counts.entry(w).or_insert(0) += 1;
        total += 1;
    }
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .map(|(w, c)| (w.to_string(), c))
        .collect();
    // descending count; BTreeMap gave lexicographic order, stable sort keeps it for ties
    entries.sort_by(|a, b| b.1.cmp(&a.1));
    let note = if entries.len() < k {
        Some(format!(
            "only {} distinct words available for a size-{k} vocabulary",
            entries.len()
        ))
    } else {
        None
    };
    entries.truncate(k);
    let covered: usize = entries.iter().map(|(_, c)| c).sum();
    let coverage = if total == 0 {
        0.0
    } else {
        covered as f64 / total as f64
    };
    Ok(Vocabulary {
        entries,
        coverage,
        note,
    })
}

/// A vocabulary plus its |V|×d embedding matrix — the candidate set ranked
/// against predicted embeddings.
#[derive(Debug, Clone)]
pub struct RetrievalSet {
    pub vocab: Vocabulary,
    pub matrix: Tensor,
    index: BTreeMap<String, usize>,
}

impl RetrievalSet {
    pub fn from_vocabulary(
        vocab: Vocabulary,
        provider: &dyn EmbeddingProvider,
    ) -> Result<RetrievalSet> {
        if vocab.is_empty() {
            return Err(Error::Corpus("empty vocabulary".into()));
        }
        let d = provider.dim();
        let mut data = Vec::with_capacity(vocab.len() * d);
        for (w, _) in &vocab.entries {
            data.extend(provider.lookup(w)?);
        }
        let matrix = Tensor::new(vec![vocab.len(), d], data)?;
        let index = vocab
            .entries
            .iter()
            .enumerate()
            .map(|(i, (w, _))| (w.clone(), i))
            .collect();
        Ok(RetrievalSet {
            vocab,
            matrix,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn d(&self) -> usize {
        self.matrix.cols()
    }

    pub fn word(&self, i: usize) -> &str {
        &self.vocab.entries[i].0
    }

    pub fn position(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    /// Restrict to the first `size` entries (vocabularies are nested).
    pub fn truncated(&self, size: usize) -> RetrievalSet {
        let size = size.min(self.len());
        let vocab = Vocabulary {
            entries: self.vocab.entries[..size].to_vec(),
            coverage: self.vocab.coverage,
            note: None,
        };
        let d = self.d();
        let matrix = Tensor::new(
            vec![size, d],
            self.matrix.data()[..size * d].to_vec(),
        )
        .expect("truncated matrix");
        let index = vocab
            .entries
            .iter()
            .enumerate()
            .map(|(i, (w, _))| (w.clone(), i))
            .collect();
        RetrievalSet {
            vocab,
            matrix,
            index,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SyntheticEmbeddings;

    #[test]
    fn hand_counts() {
        let events = ["a", "a", "a", "b", "b", "c"];
        let v = build_vocabulary(events.iter().copied(), 2).unwrap();
        assert_eq!(v.entries, vec![("a".into(), 3), ("b".into(), 2)]);
        assert!((v.coverage - 5.0 / 6.0).abs() < 1e-12);
        assert!(v.note.is_none());
    }

    #[test]
    fn k_exceeding_distinct_words() {
        let events = ["x", "y"];
        let v = build_vocabulary(events.iter().copied(), 10).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.coverage, 1.0);
        assert!(v.note.is_some());
    }

    #[test]
    fn order_independent() {
        let a = ["b", "a", "a", "c", "b", "a"];
        let mut b = a;
        b.reverse();
        let va = build_vocabulary(a.iter().copied(), 3).unwrap();
        let vb = build_vocabulary(b.iter().copied(), 3).unwrap();
        assert_eq!(va.entries, vb.entries);
    }

    #[test]
    fn ties_break_lexicographically() {
        let events = ["zeta", "beta", "zeta", "beta", "alpha"];
        let v = build_vocabulary(events.iter().copied(), 3).unwrap();
        assert_eq!(v.entries[0].0, "beta");
        assert_eq!(v.entries[1].0, "zeta");
        assert_eq!(v.entries[2].0, "alpha");
    }

    #[test]
    fn retrieval_set_rows_match_words() {
        let provider = SyntheticEmbeddings::new(8, 1);
        let v = build_vocabulary(["dog", "cat", "dog"].into_iter(), 2).unwrap();
        let rs = RetrievalSet::from_vocabulary(v, &provider).unwrap();
        assert_eq!(rs.word(0), "dog");
        assert_eq!(rs.embedding(0), provider.lookup("dog").unwrap().as_slice());
        assert_eq!(rs.position("cat"), Some(1));
    }
}
