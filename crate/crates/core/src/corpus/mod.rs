//! Review ingestion: tokenization, vocabularies, JSONL corpora, target-domain
//! dev/test splits, pretrained embeddings and a synthetic domain-pair generator.

mod embeddings;
mod synthetic;
mod vocab;

pub use embeddings::{load_embeddings, EmbeddingTable, EMBEDDING_DIM};
pub use synthetic::{generate_synthetic_pair, SyntheticPair, SyntheticSpec};
pub use vocab::{tokenize, Vocabulary, PAD_ID, SPECIFIC_ID, UNK_ID};

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: unknown label `{label}` (expected pos/neg)")]
    UnknownLabel { line: usize, label: String },
    #[error("not enough {class} documents: need {needed}, have {available}")]
    InsufficientClass {
        class: Sentiment,
        needed: usize,
        available: usize,
    },
    #[error("embedding file line {line}: expected {expected} values, found {found}")]
    EmbeddingDimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Positive,
}

impl Sentiment {
    pub fn class_index(self) -> usize {
        match self {
            Sentiment::Negative => 0,
            Sentiment::Positive => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Self {
        if i == 0 {
            Sentiment::Negative
        } else {
            Sentiment::Positive
        }
    }

    /// Accepts `pos`/`neg` and the spelled-out forms, case-insensitively.
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pos" | "positive" => Some(Sentiment::Positive),
            "neg" | "negative" => Some(Sentiment::Negative),
            _ => None,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Sentiment::Negative => "neg",
            Sentiment::Positive => "pos",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Sentiment::Negative => Sentiment::Positive,
            Sentiment::Positive => Sentiment::Negative,
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sentiment::Negative => "negative",
            Sentiment::Positive => "positive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn class_index(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Domain::Source => Domain::Target,
            Domain::Target => Domain::Source,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// One line of a JSONL corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub raw_text: String,
    pub tokens: Vec<usize>,
    pub label: Option<Sentiment>,
    pub domain: Domain,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub source: usize,
    pub target: usize,
    pub positive: usize,
    pub negative: usize,
    pub unlabeled: usize,
    pub vocab_size: usize,
}

/// Documents of both domains tokenized against one vocabulary.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocab: Vocabulary,
}

impl Corpus {
    /// Tokenizes `records`, building a vocabulary (words seen fewer than
    /// `min_count` times map to `<unk>`) unless a frozen one is supplied.
    pub fn from_records(
        records: &[RawRecord],
        vocab: Option<&Vocabulary>,
        min_count: usize,
    ) -> Result<Self> {
        let token_lists: Vec<Vec<String>> = records.iter().map(|r| tokenize(&r.text)).collect();
        let vocab = match vocab {
            Some(v) => v.clone(),
            None => Vocabulary::build(token_lists.iter().map(|t| t.as_slice()), min_count),
        };
        let mut documents = Vec::with_capacity(records.len());
        for (i, (rec, toks)) in records.iter().zip(&token_lists).enumerate() {
            let label = match &rec.label {
                None => None,
                Some(l) => Some(
                    Sentiment::parse(l).ok_or_else(|| CorpusError::UnknownLabel {
                        line: i + 1,
                        label: l.clone(),
                    })?,
                ),
            };
            documents.push(Document {
                id: rec.id.clone().unwrap_or_else(|| format!("doc-{}", i + 1)),
                raw_text: rec.text.clone(),
                tokens: vocab.encode(toks),
                label,
                domain: rec.domain,
            });
        }
        Ok(Self { documents, vocab })
    }

    pub fn stats(&self) -> CorpusStats {
        let mut s = CorpusStats {
            documents: self.documents.len(),
            vocab_size: self.vocab.len(),
            ..CorpusStats::default()
        };
        for d in &self.documents {
            match d.domain {
                Domain::Source => s.source += 1,
                Domain::Target => s.target += 1,
            }
            match d.label {
                Some(Sentiment::Positive) => s.positive += 1,
                Some(Sentiment::Negative) => s.negative += 1,
                None => s.unlabeled += 1,
            }
        }
        s
    }

    pub fn by_id(&self) -> BTreeMap<&str, &Document> {
        self.documents.iter().map(|d| (d.id.as_str(), d)).collect()
    }
}

/// Reads a JSONL corpus: one `{text, domain, label?, id?}` object per line.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if let Some(l) = &rec.label {
            if Sentiment::parse(l).is_none() {
                return Err(CorpusError::UnknownLabel {
                    line: i + 1,
                    label: l.clone(),
                });
            }
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_records(path: impl AsRef<Path>, records: &[RawRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_corpus(
    path: impl AsRef<Path>,
    vocab: Option<&Vocabulary>,
    min_count: usize,
) -> Result<Corpus> {
    let records = read_records(path)?;
    Corpus::from_records(&records, vocab, min_count)
}

/// Splits labeled documents into a label-balanced dev set of `dev_size`
/// (`dev_size / 2` negatives, the rest positives) and a test set holding
/// everything else. Unlabeled documents are ignored.
pub fn split_dataset(
    documents: &[Document],
    dev_size: usize,
    seed: u64,
) -> Result<(Vec<Document>, Vec<Document>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<&Document> = Vec::new();
    let mut neg: Vec<&Document> = Vec::new();
    for d in documents {
        match d.label {
            Some(Sentiment::Positive) => pos.push(d),
            Some(Sentiment::Negative) => neg.push(d),
            None => {}
        }
    }
    let need_neg = dev_size / 2;
    let need_pos = dev_size - need_neg;
    for (class, needed, available) in [
        (Sentiment::Positive, need_pos, pos.len()),
        (Sentiment::Negative, need_neg, neg.len()),
    ] {
        if available < needed {
            return Err(CorpusError::InsufficientClass {
                class,
                needed,
                available,
            });
        }
    }
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut dev: Vec<Document> = pos[..need_pos]
        .iter()
        .chain(&neg[..need_neg])
        .map(|d| (*d).clone())
        .collect();
    let mut test: Vec<Document> = pos[need_pos..]
        .iter()
        .chain(&neg[need_neg..])
        .map(|d| (*d).clone())
        .collect();
    dev.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((dev, test))
}

/// The documents of one cross-domain task.
#[derive(Debug, Clone, Default)]
pub struct DomainPairDataset {
    pub source_labeled: Vec<Document>,
    /// Kept for format fidelity; training only uses labeled source data.
    pub source_unlabeled: Vec<Document>,
    pub target_unlabeled: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
}

impl DomainPairDataset {
    /// Partitions a two-domain corpus. Labeled target documents are split into
    /// dev/test; when the corpus carries no unlabeled target documents, the
    /// text of the labeled ones stands in for the unlabeled target pool.
    pub fn assemble(corpus: &Corpus, dev_size: usize, seed: u64) -> Result<Self> {
        let mut ds = DomainPairDataset::default();
        let mut target_labeled = Vec::new();
        for d in &corpus.documents {
            match (d.domain, d.label) {
                (Domain::Source, Some(_)) => ds.source_labeled.push(d.clone()),
                (Domain::Source, None) => ds.source_unlabeled.push(d.clone()),
                (Domain::Target, Some(_)) => target_labeled.push(d.clone()),
                (Domain::Target, None) => ds.target_unlabeled.push(d.clone()),
            }
        }
        if ds.target_unlabeled.is_empty() {
            ds.target_unlabeled = target_labeled
                .iter()
                .map(|d| Document {
                    label: None,
                    ..d.clone()
                })
                .collect();
        }
        let (dev, test) = split_dataset(&target_labeled, dev_size, seed)?;
        ds.dev = dev;
        ds.test = test;
        Ok(ds)
    }

    /// `N_s`: all source-domain documents.
    pub fn n_source(&self) -> usize {
        self.source_labeled.len() + self.source_unlabeled.len()
    }

    /// `N_t`: distinct target-domain documents.
    pub fn n_target(&self) -> usize {
        let mut ids: std::collections::BTreeSet<&str> = self
            .target_unlabeled
            .iter()
            .map(|d| d.id.as_str())
            .collect();
        ids.extend(self.dev.iter().chain(&self.test).map(|d| d.id.as_str()));
        ids.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn labeled(n_pos: usize, n_neg: usize) -> Vec<Document> {
        (0..n_pos + n_neg)
            .map(|i| Document {
                id: format!("d{i}"),
                raw_text: String::new(),
                tokens: vec![],
                label: Some(if i < n_pos {
                    Sentiment::Positive
                } else {
                    Sentiment::Negative
                }),
                domain: Domain::Target,
            })
            .collect()
    }

    #[test]
    fn loads_three_valid_lines() {
        let f = write(&[
            r#"{"text": "Great book.", "domain": "source", "label": "pos"}"#,
            r#"{"text": "Awful blender", "domain": "target", "label": "neg"}"#,
            r#"{"text": "meh", "domain": "target"}"#,
        ]);
        let c = load_corpus(f.path(), None, 1).unwrap();
        assert_eq!(c.documents.len(), 3);
        let s = c.stats();
        assert_eq!((s.positive, s.negative, s.unlabeled), (1, 1, 1));
        assert_eq!((s.source, s.target), (1, 2));
    }

    #[test]
    fn unknown_label_names_line() {
        let f = write(&[
            r#"{"text": "fine", "domain": "source", "label": "pos"}"#,
            r#"{"text": "five", "domain": "source", "label": "5stars"}"#,
        ]);
        let err = load_corpus(f.path(), None, 1).unwrap_err();
        assert!(
            matches!(err, CorpusError::UnknownLabel { line: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn malformed_line_names_line() {
        let f = write(&[r#"{"text": "ok", "domain": "source"}"#, "{not json"]);
        let err = load_corpus(f.path(), None, 1).unwrap_err();
        assert!(err.to_string().starts_with("line 2"), "{err}");
    }

    #[test]
    fn balanced_corpus_counts() {
        let mut lines = Vec::new();
        for i in 0..6000 {
            let label = if i % 2 == 0 { "pos" } else { "neg" };
            lines.push(format!(
                r#"{{"text": "review {i}", "domain": "target", "label": "{label}"}}"#
            ));
        }
        let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
        let f = write(&refs);
        let s = load_corpus(f.path(), None, 2).unwrap().stats();
        assert_eq!((s.positive, s.negative), (3000, 3000));
    }

    #[test]
    fn split_sizes_and_balance() {
        let docs = labeled(3000, 3000);
        let (dev, test) = split_dataset(&docs, 1000, 7).unwrap();
        assert_eq!((dev.len(), test.len()), (1000, 5000));
        let dev_pos = dev
            .iter()
            .filter(|d| d.label == Some(Sentiment::Positive))
            .count();
        assert_eq!(dev_pos, 500);
        let test_pos = test
            .iter()
            .filter(|d| d.label == Some(Sentiment::Positive))
            .count();
        assert_eq!(test_pos, 2500);
        let dev_ids: std::collections::HashSet<_> = dev.iter().map(|d| &d.id).collect();
        assert!(test.iter().all(|d| !dev_ids.contains(&d.id)));
    }

    #[test]
    fn split_is_deterministic() {
        let docs = labeled(60, 60);
        let a = split_dataset(&docs, 20, 3).unwrap();
        let b = split_dataset(&docs, 20, 3).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&docs, 20, 4).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn split_fails_when_a_class_is_short() {
        let docs = labeled(400, 3000);
        let err = split_dataset(&docs, 1000, 1).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::InsufficientClass {
                class: Sentiment::Positive,
                needed: 500,
                available: 400
            }
        ));
    }
}
