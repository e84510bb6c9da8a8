//! Word-level vocabulary with a fixed reserved-token prefix.
//!
//! Words are lowercased and split on whitespace; each word is its own
//! subtoken, so the word→first-subtoken alignment is the identity. Unknown
//! words map to `[UNK]`, which is a regular (maskable) token, unlike the
//! structural markers.

use std::collections::HashMap;

use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const EOU: u32 = 4;
pub const MASK: u32 = 5;

pub const RESERVED_TOKENS: [&str; 6] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[EOU]", "[MASK]"];

#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

/// One tokenized text: words, their ids, and each word's first-subtoken
/// index (the identity map under word-level tokenization).
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenized {
    pub words: Vec<String>,
    pub ids: Vec<u32>,
    pub alignment: Vec<u32>,
}

impl Vocab {
    /// Builds a vocabulary from whitespace-tokenized texts. Words with
    /// frequency ≥ `min_count` get ids after the reserved prefix, ordered by
    /// (frequency desc, lexicographic asc); the assignment is deterministic.
    pub fn build<I, T>(texts: I, min_count: usize) -> Result<Vocab>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        if min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut saw_any = false;
        for text in texts {
            saw_any = true;
            for word in text.as_ref().split_whitespace() {
                *counts.entry(word.to_lowercase()).or_insert(0) += 1;
            }
        }
        if !saw_any {
            return Err(Error::InvalidArgument("empty corpus".into()));
        }
        let mut kept: Vec<(String, u64)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count as u64).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut id_to_token: Vec<String> =
            RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(kept.into_iter().map(|(w, _)| w));
        Self::from_tokens(id_to_token)
    }

    /// Reconstructs a vocabulary from its full id-ordered token list, e.g.
    /// out of a checkpoint header.
    pub fn from_tokens(id_to_token: Vec<String>) -> Result<Vocab> {
        if id_to_token.len() < RESERVED_TOKENS.len() {
            return Err(Error::Vocab("token list shorter than the reserved prefix".into()));
        }
        for (i, expected) in RESERVED_TOKENS.iter().enumerate() {
            if id_to_token[i] != *expected {
                return Err(Error::Vocab(format!(
                    "id {} must be {}, found {}",
                    i, expected, id_to_token[i]
                )));
            }
        }
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, t) in id_to_token.iter().enumerate() {
            if token_to_id.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate token {}", t)));
            }
        }
        Ok(Vocab { token_to_id, id_to_token })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved prefix is always present
    }

    /// Number of non-reserved tokens.
    pub fn regular_len(&self) -> usize {
        self.id_to_token.len() - RESERVED_TOKENS.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Id of a word, falling back to `[UNK]`.
    pub fn id(&self, word: &str) -> u32 {
        self.token_to_id.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    /// Structural markers never masked and never scored: `[PAD]`, `[CLS]`,
    /// `[SEP]`, `[EOU]`, `[MASK]`. `[UNK]` is deliberately absent.
    pub fn is_structural(id: u32) -> bool {
        matches!(id, PAD | CLS | SEP | EOU | MASK)
    }

    pub fn tokenize(&self, text: &str) -> Tokenized {
        let words: Vec<String> =
            text.split_whitespace().map(|w| w.to_lowercase()).collect();
        let ids: Vec<u32> = words.iter().map(|w| self.id(w)).collect();
        let alignment: Vec<u32> = (0..words.len() as u32).collect();
        Tokenized { words, ids, alignment }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_count_threshold() {
        let v = Vocab::build(["a a b"], 2).unwrap();
        assert!(v.lookup("a").is_some());
        assert!(v.lookup("b").is_none());
    }

    #[test]
    fn reserved_tokens_always_present() {
        let v = Vocab::build(["solo"], 1).unwrap();
        for (i, t) in RESERVED_TOKENS.iter().enumerate() {
            assert_eq!(v.lookup(t), Some(i as u32));
        }
        assert_eq!(v.lookup("solo"), Some(6));
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = Vocab::build(["x y", "y"], 1).unwrap();
        assert!(v.lookup("y").unwrap() < v.lookup("x").unwrap());
        // equal counts break lexicographically
        let v2 = Vocab::build(["m z k"], 1).unwrap();
        assert!(v2.lookup("k").unwrap() < v2.lookup("m").unwrap());
        assert!(v2.lookup("m").unwrap() < v2.lookup("z").unwrap());
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            Vocab::build(std::iter::empty::<&str>(), 1),
            Err(crate::Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn tokenize_lowercases_and_aligns() {
        let v = Vocab::build(["hello world"], 1).unwrap();
        let t = v.tokenize("Hello world");
        assert_eq!(t.words, vec!["hello", "world"]);
        assert_eq!(t.alignment, vec![0, 1]);
        assert_eq!(t.ids, vec![v.id("hello"), v.id("world")]);
        assert_eq!(v.tokenize("").words.len(), 0);
    }

    #[test]
    fn unknown_word_maps_to_unk_and_keeps_alignment() {
        let v = Vocab::build(["known words only"], 1).unwrap();
        let t = v.tokenize("known mystery words");
        assert_eq!(t.ids[1], UNK);
        assert_eq!(t.alignment, vec![0, 1, 2]);
    }

    #[test]
    fn round_trip_through_token_list() {
        let v = Vocab::build(["red green blue red"], 1).unwrap();
        let v2 = Vocab::from_tokens(v.tokens().to_vec()).unwrap();
        assert_eq!(v2.lookup("red"), v.lookup("red"));
        assert_eq!(v2.len(), v.len());
        // tampered prefix is rejected
        let mut bad = v.tokens().to_vec();
        bad[0] = "[BAD]".into();
        assert!(Vocab::from_tokens(bad).is_err());
    }
}
