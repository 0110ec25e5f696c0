//! Seeded two-domain review generator with planted sentiment and domain words.
//!
//! Each document's label is decided by the sentiment markers it contains
//! (only markers of its own class), and its domain by the background words
//! mixed into its filler tokens.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Domain, DomainPairDataset, RawRecord, Result, Sentiment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub positive_markers: Vec<String>,
    pub negative_markers: Vec<String>,
    /// Neutral filler shared by both domains.
    pub shared_words: Vec<String>,
    pub source_background: Vec<String>,
    pub target_background: Vec<String>,
    /// Inclusive token-count range.
    pub doc_len: (usize, usize),
    /// Inclusive range of sentiment markers planted per document.
    pub markers_per_doc: (usize, usize),
    /// Probability that a filler token is a domain background word.
    pub background_rate: f64,
    pub source_labeled: usize,
    pub source_unlabeled: usize,
    pub target_unlabeled: usize,
    /// Labeled target documents, later split into dev and test.
    pub target_labeled: usize,
    pub dev_size: usize,
    pub min_count: usize,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            positive_markers: words(&["good", "great", "excellent", "love", "wonderful"]),
            negative_markers: words(&["bad", "poor", "terrible", "awful", "boring"]),
            shared_words: words(&[
                "the", "a", "it", "this", "is", "was", "and", "very", "really", "just", "i", "my",
            ]),
            source_background: words(&[
                "book", "author", "novel", "chapter", "story", "read", "pages", "writing",
            ]),
            target_background: words(&[
                "blender",
                "kitchen",
                "knife",
                "pan",
                "dishwasher",
                "cook",
                "lid",
                "steel",
            ]),
            doc_len: (8, 16),
            markers_per_doc: (1, 2),
            background_rate: 0.35,
            source_labeled: 200,
            source_unlabeled: 0,
            target_unlabeled: 200,
            target_labeled: 200,
            dev_size: 100,
            min_count: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CorpusError::InvalidSpec(m.to_string()));
        if self.positive_markers.is_empty() || self.negative_markers.is_empty() {
            return bad("sentiment marker sets must be nonempty");
        }
        if self
            .positive_markers
            .iter()
            .any(|w| self.negative_markers.contains(w))
        {
            return bad("a word cannot mark both sentiments");
        }
        if self.shared_words.is_empty()
            || self.source_background.is_empty()
            || self.target_background.is_empty()
        {
            return bad("shared and background word lists must be nonempty");
        }
        let (lo, hi) = self.doc_len;
        let (mlo, mhi) = self.markers_per_doc;
        if mlo == 0 || mlo > mhi || lo > hi || hi < mhi || lo < mhi {
            return bad(
                "need 1 <= markers_per_doc.0 <= markers_per_doc.1 <= doc_len.0 <= doc_len.1",
            );
        }
        if !(0.0..=1.0).contains(&self.background_rate) {
            return bad("background_rate must lie in [0, 1]");
        }
        if self.dev_size > self.target_labeled {
            return bad("dev_size exceeds target_labeled");
        }
        Ok(())
    }

    fn markers(&self, s: Sentiment) -> &[String] {
        match s {
            Sentiment::Positive => &self.positive_markers,
            Sentiment::Negative => &self.negative_markers,
        }
    }

    fn background(&self, d: Domain) -> &[String] {
        match d {
            Domain::Source => &self.source_background,
            Domain::Target => &self.target_background,
        }
    }
}

/// A generated task together with the inputs that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub spec: SyntheticSpec,
    pub seed: u64,
    pub records: Vec<RawRecord>,
    /// Ground-truth label of every record, including those written unlabeled.
    pub truth: Vec<Sentiment>,
    pub corpus: Corpus,
    pub dataset: DomainPairDataset,
}

fn generate_doc(
    spec: &SyntheticSpec,
    domain: Domain,
    label: Sentiment,
    rng: &mut ChaCha8Rng,
) -> String {
    let len = rng.random_range(spec.doc_len.0..=spec.doc_len.1);
    let n_markers = rng.random_range(spec.markers_per_doc.0..=spec.markers_per_doc.1);
    let mut tokens: Vec<&str> = (0..len - n_markers)
        .map(|_| {
            let pool = if rng.random::<f64>() < spec.background_rate {
                spec.background(domain)
            } else {
                &spec.shared_words
            };
            pool.choose(rng).expect("validated nonempty").as_str()
        })
        .collect();
    for _ in 0..n_markers {
        let m = spec.markers(label).choose(rng).expect("validated nonempty");
        let at = rng.random_range(0..=tokens.len());
        tokens.insert(at, m);
    }
    tokens.join(" ")
}

pub fn generate_synthetic_pair(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticPair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut truth = Vec::new();
    let groups = [
        ("src-l", Domain::Source, spec.source_labeled, true),
        ("src-u", Domain::Source, spec.source_unlabeled, false),
        ("tgt-u", Domain::Target, spec.target_unlabeled, false),
        ("tgt-l", Domain::Target, spec.target_labeled, true),
    ];
    for (prefix, domain, n, labeled) in groups {
        let mut labels: Vec<Sentiment> = (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    Sentiment::Positive
                } else {
                    Sentiment::Negative
                }
            })
            .collect();
        labels.shuffle(&mut rng);
        for (i, label) in labels.into_iter().enumerate() {
            let text = generate_doc(spec, domain, label, &mut rng);
            records.push(RawRecord {
                id: Some(format!("{prefix}-{i:05}")),
                text,
                domain,
                label: labeled.then(|| label.short_name().to_string()),
            });
            truth.push(label);
        }
    }
    let corpus = Corpus::from_records(&records, None, spec.min_count)?;
    let dataset = DomainPairDataset::assemble(&corpus, spec.dev_size, seed)?;
    Ok(SyntheticPair {
        spec: spec.clone(),
        seed,
        records,
        truth,
        corpus,
        dataset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    #[test]
    fn labels_follow_planted_markers() {
        let pair = generate_synthetic_pair(&SyntheticSpec::default(), 5).unwrap();
        let spec = &pair.spec;
        for (rec, truth) in pair.records.iter().zip(&pair.truth) {
            let toks = tokenize(&rec.text);
            let has_pos = toks.iter().any(|t| spec.positive_markers.contains(t));
            let has_neg = toks.iter().any(|t| spec.negative_markers.contains(t));
            assert!(has_pos != has_neg);
            assert_eq!(*truth == Sentiment::Positive, has_pos);
            if toks.iter().any(|t| t == "good") && !toks.iter().any(|t| t == "bad") {
                assert_eq!(*truth, Sentiment::Positive);
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_synthetic_pair(&SyntheticSpec::default(), 9).unwrap();
        let b = generate_synthetic_pair(&SyntheticSpec::default(), 9).unwrap();
        let ja = serde_json::to_string(&a.records).unwrap();
        let jb = serde_json::to_string(&b.records).unwrap();
        assert_eq!(ja, jb);
        let c = generate_synthetic_pair(&SyntheticSpec::default(), 10).unwrap();
        assert_ne!(ja, serde_json::to_string(&c.records).unwrap());
    }

    #[test]
    fn domain_counts() {
        let spec = SyntheticSpec {
            source_labeled: 300,
            source_unlabeled: 200,
            target_unlabeled: 300,
            target_labeled: 200,
            ..SyntheticSpec::default()
        };
        let pair = generate_synthetic_pair(&spec, 1).unwrap();
        assert_eq!(pair.dataset.n_source(), 500);
        assert_eq!(pair.dataset.n_target(), 500);
        assert_eq!(pair.dataset.dev.len(), 100);
        assert_eq!(pair.dataset.test.len(), 100);
        assert!(pair.dataset.dev.iter().all(|d| d.domain == Domain::Target));
    }

    #[test]
    fn empty_markers_rejected() {
        let spec = SyntheticSpec {
            positive_markers: vec![],
            ..SyntheticSpec::default()
        };
        assert!(matches!(
            generate_synthetic_pair(&spec, 1),
            Err(CorpusError::InvalidSpec(_))
        ));
    }
}
