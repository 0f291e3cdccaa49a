//! Target word embeddings: file-backed tables and the synthetic provider.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::util::{derive_seed, gauss_vec, seeded_rng};

use super::split::fnv1a64;

/// Word → d-vector store with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub d: usize,
    map: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(d: usize) -> Self {
        EmbeddingTable {
            d,
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, word: &str, v: Vec<f64>) -> Result<()> {
        if v.len() != self.d {
            return Err(Error::Corpus(format!(
                "vector for '{word}' has {} dims, table is {}-dimensional",
                v.len(),
                self.d
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Corpus(format!("non-finite embedding for '{word}'")));
        }
        self.map.insert(word.to_string(), v);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&Vec<f64>> {
        self.map.get(word)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Text format: header `d=<int>`, then `word<TAB>v1 v2 … vd` rows.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "d={}", self.d)?;
        for (w, v) in &self.map {
            let vals: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            writeln!(f, "{w}\t{}", vals.join(" "))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Corpus("empty embedding file".into()))??;
        let d: usize = header
            .strip_prefix("d=")
            .ok_or_else(|| Error::Corpus(format!("bad embedding header '{header}'")))?
            .trim()
            .parse()
            .map_err(|_| Error::Corpus(format!("bad embedding header '{header}'")))?;
        let mut table = EmbeddingTable::new(d);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (word, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::Corpus(format!("bad embedding row '{line}'")))?;
            let v: Vec<f64> = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Corpus(format!("bad embedding values for '{word}'")))?;
            table.insert(word, v)?;
        }
        Ok(table)
    }
}

/// Source of target word embeddings.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    /// Vector for a token; `Err` when the token is unknown to this provider.
    fn lookup(&self, token: &str) -> Result<Vec<f64>>;
}

impl EmbeddingProvider for EmbeddingTable {
    fn dim(&self) -> usize {
        self.d
    }

    fn lookup(&self, token: &str) -> Result<Vec<f64>> {
        self.get(token)
            .cloned()
            .ok_or_else(|| Error::Corpus(format!("word '{token}' not in embedding table")))
    }
}

/// Deterministic unit-norm Gaussian embeddings with latent topic structure.
///
/// Each word hashes to one of `n_topics` topics; its vector is a unit-norm
/// mix of the topic centroid (weight `topic_weight`) and word-specific noise,
/// so cosine similarity reflects topic sharing. Lookups never fail: any token
/// gets a deterministic vector from its own hash.
#[derive(Debug, Clone)]
pub struct SyntheticEmbeddings {
    pub d: usize,
    pub seed: u64,
    pub n_topics: usize,
    pub topic_weight: f64,
}

impl SyntheticEmbeddings {
    pub fn new(d: usize, seed: u64) -> Self {
        SyntheticEmbeddings {
            d,
            seed,
            n_topics: 8,
            topic_weight: 0.5,
        }
    }

    fn unit(mut v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for x in &mut v {
            *x /= n;
        }
        v
    }

    pub fn topic_of(&self, word: &str) -> usize {
        (fnv1a64(word.as_bytes()) % self.n_topics as u64) as usize
    }

    fn topic_centroid(&self, topic: usize) -> Vec<f64> {
        let mut rng = seeded_rng(derive_seed(self.seed, 0x70b1c_u64 + topic as u64));
        Self::unit(gauss_vec(&mut rng, self.d))
    }
}

impl EmbeddingProvider for SyntheticEmbeddings {
    fn dim(&self) -> usize {
        self.d
    }

    fn lookup(&self, token: &str) -> Result<Vec<f64>> {
        let topic = self.topic_of(token);
        let centroid = self.topic_centroid(topic);
        let mut rng = seeded_rng(derive_seed(self.seed, fnv1a64(token.as_bytes())));
        let noise = Self::unit(gauss_vec(&mut rng, self.d));
        let a = self.topic_weight;
        let b = (1.0 - a * a).sqrt();
        Ok(Self::unit(
            centroid
                .iter()
                .zip(&noise)
                .map(|(&c, &n)| a * c + b * n)
                .collect(),
        ))
    }
}

/// Word → token splitting rule used by [`embed_lookup`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tokenizer {
    /// The word itself is the single token.
    WholeWord,
    /// Deterministic fixed-width character chunks.
    CharNgram(usize),
}

impl Tokenizer {
    pub fn tokenize(&self, word: &str) -> Vec<String> {
        match self {
            Tokenizer::WholeWord => vec![word.to_string()],
            Tokenizer::CharNgram(n) => {
                let chars: Vec<char> = word.chars().collect();
                if chars.is_empty() {
                    return vec![String::new()];
                }
                chars
                    .chunks((*n).max(1))
                    .map(|c| c.iter().collect())
                    .collect()
            }
        }
    }
}

/// Embedding of a word under a tokenizer: the mean of its known tokens'
/// vectors (a single known token returns that token's vector directly).
pub fn embed_lookup(
    word: &str,
    provider: &dyn EmbeddingProvider,
    tokenizer: Tokenizer,
) -> Result<Vec<f64>> {
    let tokens = tokenizer.tokenize(word);
    let mut known: Vec<Vec<f64>> = Vec::new();
    for t in &tokens {
        if let Ok(v) = provider.lookup(t) {
            known.push(v);
        }
    }
    if known.is_empty() {
        return Err(Error::Corpus(format!(
            "word '{word}' has no tokens known to the embedding provider"
        )));
    }
    let d = provider.dim();
    let mut mean = vec![0.0; d];
    for v in &known {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= known.len() as f64;
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_identity() {
        let mut t = EmbeddingTable::new(2);
        t.insert("walk", vec![1.0, 0.0]).unwrap();
        let v = embed_lookup("walk", &t, Tokenizer::WholeWord).unwrap();
        assert_eq!(v, vec![1.0, 0.0]);
    }

    #[test]
    fn two_token_mean() {
        let mut t = EmbeddingTable::new(2);
        t.insert("ab", vec![1.0, 0.0]).unwrap();
        t.insert("cd", vec![0.0, 1.0]).unwrap();
        let v = embed_lookup("abcd", &t, Tokenizer::CharNgram(2)).unwrap();
        assert_eq!(v, vec![0.5, 0.5]);
    }

    #[test]
    fn lookup_deterministic() {
        let p = SyntheticEmbeddings::new(16, 9);
        let a = p.lookup("nightfall").unwrap();
        let b = p.lookup("nightfall").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_word_fails_on_file_table() {
        let t = EmbeddingTable::new(2);
        assert!(embed_lookup("zzz", &t, Tokenizer::WholeWord).is_err());
    }

    #[test]
    fn synthetic_topics_share_geometry() {
        let p = SyntheticEmbeddings {
            d: 64,
            seed: 3,
            n_topics: 4,
            topic_weight: 0.7,
        };
        // average same-topic cosine should clearly exceed cross-topic cosine
        let words: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
        let mut same = (0.0, 0usize);
        let mut diff = (0.0, 0usize);
        for i in 0..words.len() {
            for j in (i + 1)..words.len() {
                let vi = p.lookup(&words[i]).unwrap();
                let vj = p.lookup(&words[j]).unwrap();
                let cos: f64 = vi.iter().zip(&vj).map(|(a, b)| a * b).sum();
                if p.topic_of(&words[i]) == p.topic_of(&words[j]) {
                    same = (same.0 + cos, same.1 + 1);
                } else {
                    diff = (diff.0 + cos, diff.1 + 1);
                }
            }
        }
        let same_mean = same.0 / same.1 as f64;
        let diff_mean = diff.0 / diff.1 as f64;
        assert!(
            same_mean > diff_mean + 0.2,
            "same {same_mean} vs diff {diff_mean}"
        );
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        let mut t = EmbeddingTable::new(3);
        t.insert("alpha", vec![0.25, -1.5, 3.0]).unwrap();
        t.insert("beta", vec![1e-7, 2.0, -0.125]).unwrap();
        t.save(&path).unwrap();
        let back = EmbeddingTable::load(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn unit_norm_vectors() {
        let p = SyntheticEmbeddings::new(32, 11);
        for w in ["one", "two", "three"] {
            let v = p.lookup(w).unwrap();
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }
}
