//! Token vocabulary shared by the encoder and decoder.

use std::collections::{BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use crate::corpus::{tokenize, Document};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;

const SPECIALS: [&str; 4] = ["[pad]", "[unk]", "[bos]", "[eos]"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Special tokens followed by `words` in ascending order.
    pub fn new(words: impl IntoIterator<Item = String>) -> Self {
        let sorted: BTreeSet<String> = words.into_iter().collect();
        let tokens: Vec<String> =
            SPECIALS.iter().map(|s| s.to_string()).chain(sorted).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }

    /// Every token of every text field of `docs`.
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut words = BTreeSet::new();
        for d in docs {
            words.extend(tokenize(&d.title));
            words.extend(tokenize(&d.abstract_text));
            words.extend(tokenize(&d.introduction));
            for s in &d.body_sentences {
                words.extend(tokenize(s));
            }
        }
        Self::new(words)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(SPECIALS[UNK as usize], String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Decodes ids, dropping special tokens.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i as usize >= SPECIALS.len())
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    /// Hex SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}
