//! Where each artifact lives and how it is read back.
//!
//! Synthetic corpora go to `<out>/<SRC>.jsonl` and `<out>/<TGT>.jsonl`;
//! everything derived from one task goes under `<out>/<SRC>-<TGT>/`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use tdan_core::corpus::{read_records, Corpus, Document, DomainPairDataset, RawRecord, Vocabulary};
use tdan_core::dsw::read_dump;
use tdan_core::network::Variant;
use tdan_core::topic_model::TopicModel;

/// A cross-domain task written `SRC-TGT`, e.g. `B-K` for books to kitchen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub source: String,
    pub target: String,
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let valid =
            |p: &str| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        match s.split_once('-') {
            Some((a, b)) if valid(a) && valid(b) && a != b => Ok(Self {
                source: a.to_string(),
                target: b.to_string(),
            }),
            _ => Err(format!(
                "expected SRC-TGT with two distinct alphanumeric names, got {s:?}"
            )),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.source, self.target)
    }
}

/// Document ids of every pool, written by `ingest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub source_labeled: Vec<String>,
    pub source_unlabeled: Vec<String>,
    pub target_unlabeled: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn of(dataset: &DomainPairDataset) -> Self {
        let ids = |docs: &[Document]| docs.iter().map(|d| d.id.clone()).collect();
        Self {
            source_labeled: ids(&dataset.source_labeled),
            source_unlabeled: ids(&dataset.source_unlabeled),
            target_unlabeled: ids(&dataset.target_unlabeled),
            dev: ids(&dataset.dev),
            test: ids(&dataset.test),
        }
    }
}

pub struct Workspace {
    pub out: PathBuf,
    pub task: Task,
}

impl Workspace {
    pub fn new(out: &Path, task: Task) -> Self {
        Self {
            out: out.to_path_buf(),
            task,
        }
    }

    pub fn task_dir(&self) -> PathBuf {
        self.out.join(self.task.to_string())
    }

    pub fn corpus_file(dir: &Path, domain: &str) -> PathBuf {
        dir.join(format!("{domain}.jsonl"))
    }

    pub fn records(&self) -> PathBuf {
        self.task_dir().join("records.jsonl")
    }
    pub fn vocab(&self) -> PathBuf {
        self.task_dir().join("vocab.json")
    }
    pub fn split(&self) -> PathBuf {
        self.task_dir().join("split.json")
    }
    pub fn topics(&self) -> PathBuf {
        self.task_dir().join("topics.json")
    }
    pub fn extraction(&self) -> PathBuf {
        self.task_dir().join("extraction.jsonl")
    }
    pub fn checkpoint(&self, v: Variant) -> PathBuf {
        self.task_dir().join(format!("model-{v}.json"))
    }
    pub fn train_log(&self, v: Variant) -> PathBuf {
        self.task_dir().join(format!("train-log-{v}.jsonl"))
    }
    pub fn metrics(&self, v: Variant) -> PathBuf {
        self.task_dir().join(format!("metrics-{v}.json"))
    }
    pub fn predictions(&self, v: Variant) -> PathBuf {
        self.task_dir().join(format!("predictions-{v}.jsonl"))
    }
    pub fn attention(&self, v: Variant) -> PathBuf {
        self.task_dir().join(format!("attention-{v}.json"))
    }

    /// Vocabulary and dataset as written by `ingest`.
    pub fn load_dataset(&self) -> Result<(Vocabulary, DomainPairDataset)> {
        for p in [self.records(), self.vocab(), self.split()] {
            require(&p, "ingest")?;
        }
        let vocab: Vocabulary = read_json(&self.vocab())?;
        let split: Split = read_json(&self.split())?;
        let records = read_records(self.records())
            .with_context(|| format!("reading {}", self.records().display()))?;
        let corpus = Corpus::from_records(&records, Some(&vocab), 1)?;
        let by_id = corpus.by_id();
        let pick = |ids: &[String], strip_label: bool| -> Result<Vec<Document>> {
            ids.iter()
                .map(|id| {
                    let d = by_id.get(id.as_str()).ok_or_else(|| {
                        anyhow!("split names unknown document {id}; rerun ingest")
                    })?;
                    let mut d = (*d).clone();
                    if strip_label {
                        d.label = None;
                    }
                    Ok(d)
                })
                .collect()
        };
        let dataset = DomainPairDataset {
            source_labeled: pick(&split.source_labeled, false)?,
            source_unlabeled: pick(&split.source_unlabeled, true)?,
            target_unlabeled: pick(&split.target_unlabeled, true)?,
            dev: pick(&split.dev, false)?,
            test: pick(&split.test, false)?,
        };
        Ok((vocab, dataset))
    }

    /// Topic model written by `train-topics`, checked against the vocabulary.
    pub fn load_topics(&self, vocab: &Vocabulary) -> Result<TopicModel> {
        require(&self.topics(), "train-topics")?;
        let model = TopicModel::load(self.topics())
            .with_context(|| format!("reading {}", self.topics().display()))?;
        if model.vocab_hash != vocab.content_hash() {
            bail!(
                "{} was fitted on a different vocabulary; rerun train-topics",
                self.topics().display()
            );
        }
        Ok(model)
    }

    /// Extracted words by document id. Returns `None` when the dump is
    /// absent and not `required`.
    pub fn load_extraction(
        &self,
        vocab: &Vocabulary,
        required: bool,
    ) -> Result<Option<BTreeMap<String, Vec<usize>>>> {
        let path = self.extraction();
        if !path.exists() {
            if required {
                require(&path, "extract")?;
            }
            return Ok(None);
        }
        let words =
            read_dump(&path, vocab).with_context(|| format!("reading {}", path.display()))?;
        Ok(Some(
            words.into_iter().map(|w| (w.doc_id, w.words)).collect(),
        ))
    }
}

/// Fails with a message naming the command that produces `path`.
pub fn require(path: &Path, command: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        bail!("missing {}: run `tdan {command}` first", path.display())
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Gives every record an id (`<prefix>-<line>` when the file has none) and
/// rejects duplicates.
pub fn assign_ids(
    records: &mut [RawRecord],
    prefix: &str,
    seen: &mut BTreeSet<String>,
) -> Result<()> {
    for (i, r) in records.iter_mut().enumerate() {
        let id =
            r.id.get_or_insert_with(|| format!("{prefix}-{}", i + 1))
                .clone();
        if !seen.insert(id.clone()) {
            bail!("duplicate document id {id}");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_names() {
        let t: Task = "B-K".parse().unwrap();
        assert_eq!((t.source.as_str(), t.target.as_str()), ("B", "K"));
        assert_eq!(t.to_string(), "B-K");
        for bad in ["BK", "B-", "-K", "B-B", "B-K-D", "B K-D"] {
            assert!(bad.parse::<Task>().is_err(), "{bad}");
        }
    }

    #[test]
    fn missing_artifacts_name_their_command() {
        let err = require(Path::new("/nonexistent/topics.json"), "train-topics").unwrap_err();
        assert!(err.to_string().contains("tdan train-topics"));
        assert!(read_json::<Split>(Path::new("/nonexistent/split.json")).is_err());
    }

    #[test]
    fn ids_are_assigned_and_unique() {
        let rec = |id: Option<&str>| RawRecord {
            id: id.map(String::from),
            text: "x".into(),
            domain: tdan_core::corpus::Domain::Source,
            label: None,
        };
        let mut seen = BTreeSet::new();
        let mut a = vec![rec(None), rec(Some("keep"))];
        assign_ids(&mut a, "B", &mut seen).unwrap();
        assert_eq!(a[0].id.as_deref(), Some("B-1"));
        assert_eq!(a[1].id.as_deref(), Some("keep"));
        assert!(assign_ids(&mut [rec(Some("keep"))], "K", &mut seen).is_err());
    }
}
