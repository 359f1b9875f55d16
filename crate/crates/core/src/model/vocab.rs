use std::collections::HashMap;

use crate::error::{Error, Result};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Token ↔ id map. Ids 0, 1, 2 are always bos, eos, unk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for s in [BOS, EOS, UNK] {
            v.insert(s);
        }
        v
    }

    /// Builds from a token list whose first three entries are the specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[0] != BOS || tokens[1] != EOS || tokens[2] != UNK {
            return Err(Error::invalid("vocabulary must start with <bos>, <eos>, <unk>"));
        }
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in tokens {
            if v.index.contains_key(&t) {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
            v.insert(&t);
        }
        Ok(v)
    }

    /// Adds a token if absent; returns its id.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn bos(&self) -> usize {
        0
    }

    pub fn eos(&self) -> usize {
        1
    }

    pub fn unk(&self) -> usize {
        2
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Whitespace tokenisation with bos/eos framing. Output length never
/// exceeds `max_len`; when truncating, eos stays last.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Vec<usize> {
    let max_len = max_len.max(2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(vocab.bos());
    ids.extend(
        text.split_whitespace()
            .take(max_len - 2)
            .map(|w| vocab.id(w).unwrap_or(vocab.unk())),
    );
    ids.push(vocab.eos());
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        let mut v = Vocab::new();
        for w in ["great", "sunny", "day"] {
            v.insert(w);
        }
        v
    }

    #[test]
    fn direct_lookup() {
        let v = vocab();
        assert_eq!(tokenize("great sunny day", &v, 16), vec![0, 3, 4, 5, 1]);
    }

    #[test]
    fn empty_text() {
        assert_eq!(tokenize("", &vocab(), 16), vec![0, 1]);
        assert_eq!(tokenize("   ", &vocab(), 16), vec![0, 1]);
    }

    #[test]
    fn out_of_vocabulary_maps_to_unk() {
        assert_eq!(tokenize("great rainy", &vocab(), 16), vec![0, 3, 2, 1]);
    }

    #[test]
    fn truncation_keeps_eos_last() {
        let t = tokenize(&"day ".repeat(40), &vocab(), 16);
        assert_eq!(t.len(), 16);
        assert_eq!(*t.last().unwrap(), 1);
        assert_eq!(t[0], 0);
    }

    #[test]
    fn from_tokens_validates_specials() {
        assert!(Vocab::from_tokens(vec!["a".into()]).is_err());
        let v = Vocab::from_tokens(vocab().tokens().to_vec()).unwrap();
        assert_eq!(v, vocab());
    }
}
