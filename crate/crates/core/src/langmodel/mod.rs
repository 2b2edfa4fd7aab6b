//! Word-sequence scorers used for lattice rescoring.

pub mod ngram;
pub mod rnnlm;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ngram::{
    ngram_logprob, prune_criteria, prune_ngram, train_ngram, Discount, NGramConfig, NGramEntry, NGramModel,
};
pub use rnnlm::{rnnlm_logprob, train_rnnlm, RnnLm, RnnLmConfig, RnnLmEpoch, RnnLmOutcome};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Bidirectional word ↔ id map. Ids are positions in `words`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Vocabulary { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    /// Words in the given order; duplicates are an error.
    pub fn new(words: Vec<String>) -> Result<Self> {
        let v = Vocabulary::from(words);
        if v.index.len() != v.words.len() {
            return Err(Error::data("vocabulary contains duplicate words"));
        }
        Ok(v)
    }

    /// `<unk>`, `<s>`, `</s>`, then the distinct corpus words sorted.
    pub fn from_corpus<S: AsRef<str>>(corpus: &[Vec<S>]) -> Self {
        let mut words: Vec<String> = corpus
            .iter()
            .flatten()
            .map(|w| w.as_ref().to_string())
            .filter(|w| w != UNK && w != BOS && w != EOS)
            .collect();
        words.sort();
        words.dedup();
        let mut all = vec![UNK.to_string(), BOS.to_string(), EOS.to_string()];
        all.extend(words);
        Vocabulary::from(all)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn bos(&self) -> Option<u32> {
        self.id(BOS)
    }

    pub fn eos(&self) -> Option<u32> {
        self.id(EOS)
    }

    pub fn unk(&self) -> Option<u32> {
        self.id(UNK)
    }

    /// Maps out-of-vocabulary words to `<unk>`; fails if there is none.
    pub fn id_or_unk(&self, word: &str) -> Result<u32> {
        self.id(word)
            .or_else(|| self.unk())
            .ok_or_else(|| Error::Vocabulary(vec![word.to_string()]))
    }

    /// Maps every word, reporting all words that cannot be mapped.
    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<u32>> {
        let mut missing = Vec::new();
        let ids: Vec<u32> = words
            .iter()
            .filter_map(|w| match self.id_or_unk(w.as_ref()) {
                Ok(i) => Some(i),
                Err(_) => {
                    missing.push(w.as_ref().to_string());
                    None
                }
            })
            .collect();
        if missing.is_empty() {
            Ok(ids)
        } else {
            Err(Error::Vocabulary(missing))
        }
    }
}
