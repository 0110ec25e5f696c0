use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const SPECIFIC_ID: usize = 2;

const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<specific_token>"];

/// Lowercases and splits on whitespace; every punctuation character becomes
/// its own token.
///
/// ```
/// assert_eq!(tdan_core::corpus::tokenize("Best thing ever."), ["best", "thing", "ever", "."]);
/// ```
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_ascii()) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.extend(ch.to_lowercase().map(String::from));
        } else {
            current.extend(ch.to_lowercase());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Word <-> id map with `<pad>`, `<unk>` and `<specific_token>` at ids 0..3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    words: Vec<String>,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        Self::from_words(f.words)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile { words: v.words }
    }
}

impl Vocabulary {
    /// Builds from token lists. Words seen fewer than `min_count` times are
    /// dropped; the rest are ordered by descending frequency then alphabetically.
    pub fn build<'a, I>(token_lists: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for list in token_lists {
            for t in list {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && !RESERVED.contains(w))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_words(
            RESERVED
                .iter()
                .map(|s| s.to_string())
                .chain(kept.into_iter().map(|(w, _)| w.to_string()))
                .collect(),
        )
    }

    /// `words` must start with the reserved entries; they are inserted if missing.
    pub fn from_words(words: Vec<String>) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(
            words
                .into_iter()
                .filter(|w| !RESERVED.contains(&w.as_str())),
        );
        let mut index = HashMap::with_capacity(all.len());
        let mut deduped = Vec::with_capacity(all.len());
        for w in all {
            if !index.contains_key(&w) {
                index.insert(w.clone(), deduped.len());
                deduped.push(w);
            }
        }
        Self {
            words: deduped,
            index,
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
        self.words.get(id).map(|s| s.as_str())
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn is_reserved(id: usize) -> bool {
        id < RESERVED.len()
    }

    /// Frozen-mode lookup: unknown words map to `<unk>`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK_ID))
            .collect()
    }

    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        self.encode(&tokenize(text))
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.word(i).unwrap_or("<unk>").to_string())
            .collect()
    }

    /// SHA-256 over the newline-joined word list, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenizer_examples() {
        assert_eq!(
            tokenize("Best thing ever."),
            vec!["best", "thing", "ever", "."]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("  Don't STOP!! "),
            vec!["don", "'", "t", "stop", "!", "!"]
        );
    }

    #[test]
    fn frozen_mode_maps_unknown_words() {
        let toks = [tokenize("the the cat cat")];
        let v = Vocabulary::build(toks.iter().map(|t| t.as_slice()), 2);
        let ids = v.encode_text("the nephilim");
        assert_eq!(ids, vec![v.id("the").unwrap(), UNK_ID]);
    }

    #[test]
    fn min_count_cutoff() {
        let toks = [tokenize("a a b")];
        let v = Vocabulary::build(toks.iter().map(|t| t.as_slice()), 2);
        assert!(v.id("a").is_some());
        assert!(v.id("b").is_none());
        assert_eq!(v.word(PAD_ID), Some("<pad>"));
        assert_eq!(v.word(SPECIFIC_ID), Some("<specific_token>"));
    }

    #[test]
    fn serde_round_trip_preserves_hash() {
        let toks = [tokenize("x y y z z z")];
        let v = Vocabulary::build(toks.iter().map(|t| t.as_slice()), 1);
        let back: Vocabulary = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.content_hash(), v.content_hash());
    }

    proptest! {
        #[test]
        fn id_word_id_is_identity(words in proptest::collection::vec("[a-z]{1,6}", 1..40)) {
            let toks: Vec<String> = words.iter().flat_map(|w| [w.clone(), w.clone()]).collect();
            let v = Vocabulary::build([toks.as_slice()], 1);
            for id in 0..v.len() {
                let w = v.word(id).unwrap();
                prop_assert_eq!(v.id(w), Some(id));
            }
        }

        #[test]
        fn tokens_are_lowercase_and_nonempty(text in "\\PC{0,60}") {
            for t in tokenize(&text) {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.chars().any(char::is_whitespace));
                prop_assert_eq!(t.to_lowercase(), t.clone());
            }
        }
    }
}
