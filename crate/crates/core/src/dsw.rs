//! Domain-specific word extraction.
//!
//! Topics whose average probability in one domain exceeds the other domain's
//! by more than a tolerance are domain-specific. A word occurrence is kept
//! when its most related topic, `argmax_t beta[w][t] * theta_doc[t]`, is
//! specific to the document's own domain.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Domain, DomainPairDataset, Vocabulary, SPECIFIC_ID};
use crate::topic_model::{fit_lda, FitReport, LdaConfig, TopicModel, TopicModelError};

pub const DEFAULT_TOLERANCE: f64 = 0.08;
pub const DEFAULT_MAX_SPECIFIC_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("cannot average an empty list of topic distributions")]
    EmptyDistributionList,
    #[error("topic distributions have mismatched lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("tolerance must be > 0, got {0}")]
    InvalidTolerance(f64),
    #[error("extraction dump line {line}: {reason}")]
    Dump { line: usize, reason: String },
    #[error(transparent)]
    TopicModel(#[from] TopicModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ExtractionError> = std::result::Result<T, E>;

/// Mean topic distribution of each domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainTopicProfile {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecificTopicSets {
    pub source_specific: BTreeSet<usize>,
    pub target_specific: BTreeSet<usize>,
}

impl SpecificTopicSets {
    pub fn for_domain(&self, domain: Domain) -> &BTreeSet<usize> {
        match domain {
            Domain::Source => &self.source_specific,
            Domain::Target => &self.target_specific,
        }
    }
}

/// Extracted sequence of one document. `words[0]` is always `<specific_token>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainSpecificWords {
    pub doc_id: String,
    pub domain: Domain,
    pub words: Vec<usize>,
}

pub fn average_topic_distribution<T: AsRef<[f64]>>(thetas: &[T]) -> Result<Vec<f64>> {
    let first = thetas
        .first()
        .ok_or(ExtractionError::EmptyDistributionList)?;
    let k = first.as_ref().len();
    let mut mean = vec![0.0; k];
    for t in thetas {
        let t = t.as_ref();
        if t.len() != k {
            return Err(ExtractionError::LengthMismatch(k, t.len()));
        }
        mean.iter_mut().zip(t).for_each(|(m, x)| *m += x);
    }
    let n = thetas.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Topic `t` is source-specific iff `source[t] - target[t] > tol`, and
/// target-specific iff `target[t] - source[t] > tol`.
pub fn classify_specific_topics(
    profile: &DomainTopicProfile,
    tol: f64,
) -> Result<SpecificTopicSets> {
    if !(tol > 0.0) {
        return Err(ExtractionError::InvalidTolerance(tol));
    }
    if profile.source.len() != profile.target.len() {
        return Err(ExtractionError::LengthMismatch(
            profile.source.len(),
            profile.target.len(),
        ));
    }
    let mut sets = SpecificTopicSets::default();
    for (t, (ps, pt)) in profile.source.iter().zip(&profile.target).enumerate() {
        if ps - pt > tol {
            sets.source_specific.insert(t);
        } else if pt - ps > tol {
            sets.target_specific.insert(t);
        }
    }
    Ok(sets)
}

/// `argmax_t beta[word][t] * theta[t]`, ties going to the lowest topic id.
pub fn most_related_topic(model: &TopicModel, theta: &[f64], word: usize) -> usize {
    let row = model.beta_row(word);
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (t, (b, p)) in row.iter().zip(theta).enumerate() {
        let score = b * p;
        if score > best_score {
            best = t;
            best_score = score;
        }
    }
    best
}

/// What extraction needs to know about one document.
#[derive(Debug, Clone, Copy)]
pub struct ExtractionInput<'a> {
    pub doc_id: &'a str,
    pub domain: Domain,
    pub tokens: &'a [usize],
    pub theta: &'a [f64],
}

/// Keeps every occurrence of a domain-specific word in document order behind
/// a leading `<specific_token>`, truncated to `max_len` entries in total.
/// Reserved vocabulary entries are never extracted.
pub fn extract_document(
    input: &ExtractionInput<'_>,
    model: &TopicModel,
    sets: &SpecificTopicSets,
    max_len: usize,
) -> DomainSpecificWords {
    let specific = sets.for_domain(input.domain);
    let mut words = vec![SPECIFIC_ID];
    for &w in input.tokens {
        if words.len() >= max_len.max(1) {
            break;
        }
        if Vocabulary::is_reserved(w) || w >= model.vocab_size {
            continue;
        }
        if specific.contains(&most_related_topic(model, input.theta, w)) {
            words.push(w);
        }
    }
    DomainSpecificWords {
        doc_id: input.doc_id.to_string(),
        domain: input.domain,
        words,
    }
}

pub fn extract_domain_specific_words(
    inputs: &[ExtractionInput<'_>],
    model: &TopicModel,
    sets: &SpecificTopicSets,
    max_len: usize,
) -> Vec<DomainSpecificWords> {
    inputs
        .iter()
        .map(|i| extract_document(i, model, sets, max_len))
        .collect()
}

/// The complete extraction for a two-domain document set.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub profile: DomainTopicProfile,
    pub sets: SpecificTopicSets,
    pub words: Vec<DomainSpecificWords>,
}

impl Extraction {
    pub fn by_id(&self) -> BTreeMap<String, Vec<usize>> {
        self.words
            .iter()
            .map(|d| (d.doc_id.clone(), d.words.clone()))
            .collect()
    }
}

/// Averages each domain's distributions, classifies topics with `tol` and
/// extracts every document.
pub fn run_extraction(
    inputs: &[ExtractionInput<'_>],
    model: &TopicModel,
    tol: f64,
    max_len: usize,
) -> Result<Extraction> {
    let of = |d: Domain| -> Vec<&[f64]> {
        inputs
            .iter()
            .filter(|i| i.domain == d)
            .map(|i| i.theta)
            .collect()
    };
    let profile = DomainTopicProfile {
        source: average_topic_distribution(&of(Domain::Source))?,
        target: average_topic_distribution(&of(Domain::Target))?,
    };
    let sets = classify_specific_topics(&profile, tol)?;
    let words = extract_domain_specific_words(inputs, model, &sets, max_len);
    Ok(Extraction {
        profile,
        sets,
        words,
    })
}

/// Token ids the topic model sees: everything except the reserved entries.
pub fn content_tokens(tokens: &[usize]) -> Vec<usize> {
    tokens
        .iter()
        .copied()
        .filter(|&w| !Vocabulary::is_reserved(w))
        .collect()
}

/// Documents the topic model is fit on: all source documents plus the
/// unlabeled target pool.
pub fn topic_training_documents(dataset: &DomainPairDataset) -> Vec<&Document> {
    dataset
        .source_labeled
        .iter()
        .chain(&dataset.source_unlabeled)
        .chain(&dataset.target_unlabeled)
        .collect()
}

/// Every distinct document of the dataset, training pools first, then dev
/// and test documents not already seen.
pub fn all_documents(dataset: &DomainPairDataset) -> Vec<&Document> {
    let mut seen = BTreeSet::new();
    topic_training_documents(dataset)
        .into_iter()
        .chain(&dataset.dev)
        .chain(&dataset.test)
        .filter(|d| seen.insert(d.id.as_str()))
        .collect()
}

/// Fits LDA over the training pools and records their ids, so their stored
/// distributions can be looked up later.
pub fn fit_dataset_topics(
    dataset: &DomainPairDataset,
    vocab: &Vocabulary,
    config: &LdaConfig,
) -> Result<(TopicModel, FitReport)> {
    let docs = topic_training_documents(dataset);
    let tokens: Vec<Vec<usize>> = docs.iter().map(|d| content_tokens(&d.tokens)).collect();
    let slices: Vec<&[usize]> = tokens.iter().map(|t| t.as_slice()).collect();
    let (mut model, report, _) = fit_lda(&slices, vocab.len(), config)?;
    model.vocab_hash = vocab.content_hash();
    model.doc_ids = docs.iter().map(|d| d.id.clone()).collect();
    Ok((model, report))
}

/// Stored distribution for training documents, fold-in for the rest.
pub fn document_thetas(
    model: &TopicModel,
    docs: &[&Document],
    fold_in_iterations: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let stored: BTreeMap<&str, usize> = model
        .doc_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    docs.iter()
        .enumerate()
        .map(|(i, d)| match stored.get(d.id.as_str()) {
            Some(&j) => model.doc_theta[j].clone(),
            None => model.infer_theta(
                &content_tokens(&d.tokens),
                fold_in_iterations,
                seed.wrapping_add(i as u64),
            ),
        })
        .collect()
}

/// Domain profiles come from the topic-training pools; extraction covers
/// every document of the dataset.
pub fn extract_dataset(
    dataset: &DomainPairDataset,
    model: &TopicModel,
    tol: f64,
    max_len: usize,
    fold_in_iterations: usize,
    seed: u64,
) -> Result<Extraction> {
    let training = topic_training_documents(dataset);
    let n_training = {
        let mut ids = BTreeSet::new();
        training
            .iter()
            .filter(|d| ids.insert(d.id.as_str()))
            .count()
    };
    let docs = all_documents(dataset);
    let thetas = document_thetas(model, &docs, fold_in_iterations, seed);
    let inputs: Vec<ExtractionInput<'_>> = docs
        .iter()
        .zip(&thetas)
        .map(|(d, theta)| ExtractionInput {
            doc_id: &d.id,
            domain: d.domain,
            tokens: &d.tokens,
            theta,
        })
        .collect();
    let mut extraction = run_extraction(&inputs[..n_training], model, tol, max_len)?;
    extraction.words = extract_domain_specific_words(&inputs, model, &extraction.sets, max_len);
    Ok(extraction)
}

#[derive(Debug, Serialize, Deserialize)]
struct DumpLine {
    doc_id: String,
    domain: Domain,
    specific_words: Vec<String>,
}

/// Writes one `{doc_id, domain, specific_words}` JSON object per line.
pub fn write_dump(
    path: impl AsRef<Path>,
    words: &[DomainSpecificWords],
    vocab: &Vocabulary,
) -> Result<()> {
    let mut out = String::new();
    for d in words {
        let line = DumpLine {
            doc_id: d.doc_id.clone(),
            domain: d.domain,
            specific_words: vocab.decode(&d.words),
        };
        out.push_str(&serde_json::to_string(&line).expect("dump lines serialize"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a dump back into token ids, restoring the leading
/// `<specific_token>` when a line omits it.
pub fn read_dump(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Vec<DomainSpecificWords>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DumpLine = serde_json::from_str(&line).map_err(|e| ExtractionError::Dump {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let mut words = vocab.encode(&parsed.specific_words);
        if words.first() != Some(&SPECIFIC_ID) {
            words.insert(0, SPECIFIC_ID);
        }
        out.push(DomainSpecificWords {
            doc_id: parsed.doc_id,
            domain: parsed.domain,
            words,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topic_model::TOPIC_MODEL_VERSION;
    use proptest::prelude::*;

    fn model_from_columns(columns: &[Vec<f64>]) -> TopicModel {
        let k = columns.len();
        let v = columns[0].len();
        let mut beta = vec![0.0; v * k];
        for (t, col) in columns.iter().enumerate() {
            for (w, x) in col.iter().enumerate() {
                beta[w * k + t] = *x;
            }
        }
        TopicModel {
            version: TOPIC_MODEL_VERSION,
            k,
            vocab_size: v,
            vocab_hash: String::new(),
            alpha: 1.0,
            eta: 0.01,
            beta,
            doc_ids: vec![],
            doc_theta: vec![],
        }
    }

    #[test]
    fn averages() {
        let two = [vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(average_topic_distribution(&two).unwrap(), vec![0.5, 0.5]);
        let one = [vec![0.2, 0.8]];
        assert_eq!(average_topic_distribution(&one).unwrap(), vec![0.2, 0.8]);
        let three = [vec![0.5, 0.3, 0.2], vec![0.1, 0.3, 0.6]];
        let m = average_topic_distribution(&three).unwrap();
        for (a, b) in m.iter().zip([0.3, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-12);
        }
        let empty: [Vec<f64>; 0] = [];
        assert!(average_topic_distribution(&empty).is_err());
    }

    #[test]
    fn threshold_classification() {
        let p = DomainTopicProfile {
            source: vec![0.5, 0.3, 0.2],
            target: vec![0.3, 0.3, 0.4],
        };
        let sets = classify_specific_topics(&p, 0.08).unwrap();
        assert_eq!(sets.source_specific, BTreeSet::from([0]));
        assert_eq!(sets.target_specific, BTreeSet::from([2]));

        let same = DomainTopicProfile {
            source: vec![0.4, 0.6],
            target: vec![0.4, 0.6],
        };
        let sets = classify_specific_topics(&same, 0.08).unwrap();
        assert!(sets.source_specific.is_empty() && sets.target_specific.is_empty());

        // a gap of exactly tol is not specific
        let edge = DomainTopicProfile {
            source: vec![0.5, 0.5],
            target: vec![0.25, 0.75],
        };
        let sets = classify_specific_topics(&edge, 0.25).unwrap();
        assert!(sets.source_specific.is_empty() && sets.target_specific.is_empty());
        assert!(classify_specific_topics(&edge, 0.0).is_err());
    }

    #[test]
    fn most_related_topic_cases() {
        let m = model_from_columns(&[vec![0.9, 0.1], vec![0.2, 0.8]]);
        let theta = [0.3, 0.7];
        assert_eq!(most_related_topic(&m, &theta, 0), 0); // (0.27, 0.14)
        assert_eq!(most_related_topic(&m, &theta, 1), 1); // (0.03, 0.56)

        let m3 = model_from_columns(&[vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert_eq!(most_related_topic(&m3, &[1.0, 0.0, 0.0], 1), 0);
        assert_eq!(most_related_topic(&m3, &[0.0, 0.5, 0.5], 0), 1);
    }

    #[test]
    fn no_specific_words_gives_the_special_token_alone() {
        let m = model_from_columns(&[vec![0.0, 0.0, 0.0, 0.5, 0.5], vec![0.0, 0.0, 0.0, 0.5, 0.5]]);
        let sets = SpecificTopicSets::default();
        let input = ExtractionInput {
            doc_id: "d",
            domain: Domain::Source,
            tokens: &[3, 4, 3],
            theta: &[0.5, 0.5],
        };
        assert_eq!(
            extract_document(&input, &m, &sets, 64).words,
            vec![SPECIFIC_ID]
        );
    }

    #[test]
    fn keeps_order_duplicates_and_caps_length() {
        // word 3 -> topic 0, word 4 -> topic 1
        let m = model_from_columns(&[vec![0.0, 0.0, 0.0, 0.9, 0.1], vec![0.0, 0.0, 0.0, 0.1, 0.9]]);
        let sets = SpecificTopicSets {
            source_specific: BTreeSet::from([0]),
            target_specific: BTreeSet::from([1]),
        };
        let src = ExtractionInput {
            doc_id: "s",
            domain: Domain::Source,
            tokens: &[3, 4, 3, 1, 3],
            theta: &[0.5, 0.5],
        };
        assert_eq!(
            extract_document(&src, &m, &sets, 64).words,
            vec![SPECIFIC_ID, 3, 3, 3]
        );
        assert_eq!(
            extract_document(&src, &m, &sets, 3).words,
            vec![SPECIFIC_ID, 3, 3]
        );
        let tgt = ExtractionInput {
            domain: Domain::Target,
            doc_id: "t",
            ..src
        };
        assert_eq!(
            extract_document(&tgt, &m, &sets, 64).words,
            vec![SPECIFIC_ID, 4]
        );
    }

    #[test]
    fn dump_round_trip() {
        let vocab = Vocabulary::from_words(vec!["book".into(), "kindle".into()]);
        let words = vec![
            DomainSpecificWords {
                doc_id: "a".into(),
                domain: Domain::Source,
                words: vec![SPECIFIC_ID, 3, 3],
            },
            DomainSpecificWords {
                doc_id: "b".into(),
                domain: Domain::Target,
                words: vec![SPECIFIC_ID],
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        write_dump(&p, &words, &vocab).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(r#"{"doc_id":"a","domain":"source","specific_words":["<specific_token>","book","book"]}"#));
        assert_eq!(read_dump(&p, &vocab).unwrap(), words);
    }

    proptest! {
        #[test]
        fn swapping_domains_swaps_sets(
            pairs in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..12),
            tol in 0.01f64..0.3,
        ) {
            let source: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let target: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let a = classify_specific_topics(&DomainTopicProfile { source: source.clone(), target: target.clone() }, tol).unwrap();
            let b = classify_specific_topics(&DomainTopicProfile { source: target, target: source }, tol).unwrap();
            prop_assert_eq!(&a.source_specific, &b.target_specific);
            prop_assert_eq!(&a.target_specific, &b.source_specific);
            prop_assert!(a.source_specific.is_disjoint(&a.target_specific));
        }

        #[test]
        fn mean_of_simplex_vectors_is_simplex(
            raw in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 4), 1..20)
        ) {
            let simplex: Vec<Vec<f64>> = raw.iter().map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|x| x / s).collect()
            }).collect();
            let m = average_topic_distribution(&simplex).unwrap();
            prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
