//! Word-level tokenizer. One embedding row per whitespace-separated word.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const START_TOKEN: &str = "<sot>";
pub const END_TOKEN: &str = "<eot>";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    /// Builds a vocabulary whose first two entries are the start and end
    /// sentinels, followed by `words` in first-seen order.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary::from(vec![START_TOKEN.to_string(), END_TOKEN.to_string()]);
        for w in words {
            vocab.insert(w.as_ref());
        }
        vocab
    }

    /// Adds every whitespace-separated word of `text` that is not yet present.
    pub fn insert(&mut self, text: &str) {
        for word in text.split_whitespace() {
            if !self.index.contains_key(word) {
                self.index.insert(word.to_string(), self.words.len());
                self.words.push(word.to_string());
            }
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn start_id(&self) -> usize {
        self.index[START_TOKEN]
    }

    pub fn end_id(&self) -> usize {
        self.index[END_TOKEN]
    }

    /// Token ids of every word in `text`; fails listing all unknown words.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = Vec::new();
        let mut missing = Vec::new();
        for word in text.split_whitespace() {
            match self.id(word) {
                Some(id) => ids.push(id),
                None => missing.push(word.to_string()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Tokenization { words: missing });
        }
        if ids.is_empty() {
            return Err(Error::Tokenization {
                words: vec![text.to_string()],
            });
        }
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentinels_come_first() {
        let v = Vocabulary::new(["color", "shape"]);
        assert_eq!(v.start_id(), 0);
        assert_eq!(v.end_id(), 1);
        assert_eq!(v.id("shape"), Some(3));
    }

    #[test]
    fn multi_word_names_map_to_consecutive_ids() {
        let v = Vocabulary::new(["golden retriever", "pug"]);
        assert_eq!(v.tokenize("golden retriever").unwrap(), vec![2, 3]);
    }

    #[test]
    fn unknown_words_are_listed() {
        let v = Vocabulary::new(["color"]);
        match v.tokenize("color habitat size") {
            Err(Error::Tokenization { words }) => assert_eq!(words, vec!["habitat", "size"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn serde_round_trip_rebuilds_index() {
        let v = Vocabulary::new(["a", "photo", "of"]);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back.id("photo"), Some(3));
        assert_eq!(back, v);
    }
}
