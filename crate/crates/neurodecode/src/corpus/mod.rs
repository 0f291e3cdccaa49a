//! Dataset model: sentences, word events, splitting, vocabulary, embeddings,
//! and the synthetic generator.

mod embed;
mod split;
mod synth;
mod vocab;

pub use embed::{embed_lookup, EmbeddingProvider, EmbeddingTable, SyntheticEmbeddings, Tokenizer};
pub use split::{assign_split, fnv1a64, normalize_sentence, sentence_hash, Split};
pub use synth::{synth_generate, SyntheticConfig, SyntheticDataset};
pub use vocab::{build_vocabulary, RetrievalSet, Vocabulary};

use crate::error::{Error, Result};

/// Part-of-speech, collapsed to five classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pos {
    Noun,
    Verb,
    Adjective,
    Adverb,
    Function,
}

impl std::fmt::Display for Pos {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Pos::Noun => "noun",
            Pos::Verb => "verb",
            Pos::Adjective => "adjective",
            Pos::Adverb => "adverb",
            Pos::Function => "function",
        };
        write!(f, "{s}")
    }
}

/// One word presentation in a recording.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WordEvent {
    pub word: String,
    pub onset_s: f64,
    pub sentence_id: u32,
    #[serde(rename = "pos_tag")]
    pub pos: Pos,
}

/// A sentence with its ordered word events.
#[derive(Debug, Clone)]
pub struct Sentence {
    pub id: u32,
    pub text: String,
    pub events: Vec<WordEvent>,
}

impl Sentence {
    pub fn validate(&self) -> Result<()> {
        for pair in self.events.windows(2) {
            if pair[1].onset_s <= pair[0].onset_s {
                return Err(Error::Corpus(format!(
                    "sentence {}: word onsets not strictly increasing",
                    self.id
                )));
            }
        }
        Ok(())
    }
}
