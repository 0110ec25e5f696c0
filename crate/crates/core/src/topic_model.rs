//! Latent Dirichlet allocation trained by collapsed Gibbs sampling.
//!
//! The fitted [`TopicModel`] exposes the `V x k` topic-word matrix (each topic
//! column sums to one) and a topic distribution for every training document.
//! Unseen documents get their distribution by fold-in sampling against the
//! fixed topic-word matrix.

use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TOPIC_MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TopicModelError {
    #[error("cannot fit a topic model on an empty corpus")]
    EmptyCorpus,
    #[error("invalid LDA config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("topic model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TopicModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdaConfig {
    pub k: usize,
    /// Document-topic prior.
    pub alpha: f64,
    /// Topic-word prior.
    pub eta: f64,
    pub gibbs_iterations: usize,
    pub seed: u64,
}

impl LdaConfig {
    /// `alpha = 50 / k`, `eta = 0.01`, 500 sweeps.
    pub fn with_topics(k: usize, seed: u64) -> Self {
        Self {
            k,
            alpha: 50.0 / k as f64,
            eta: 0.01,
            gibbs_iterations: 500,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(TopicModelError::InvalidConfig(format!(
                "k = {} < 2",
                self.k
            )));
        }
        if !(self.alpha > 0.0) || !(self.eta > 0.0) {
            return Err(TopicModelError::InvalidConfig(
                "alpha and eta must be > 0".into(),
            ));
        }
        Ok(())
    }
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self::with_topics(50, 0)
    }
}

/// Topic assignments and count tables of a collapsed Gibbs chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    k: usize,
    vocab_size: usize,
    assignments: Vec<Vec<usize>>,
    /// `docs x k`, row-major.
    n_dk: Vec<u32>,
    /// `k x V`, row-major.
    n_kv: Vec<u32>,
    n_k: Vec<u32>,
}

impl GibbsState {
    fn init(docs: &[&[usize]], k: usize, vocab_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut s = Self {
            k,
            vocab_size,
            assignments: Vec::with_capacity(docs.len()),
            n_dk: vec![0; docs.len() * k],
            n_kv: vec![0; k * vocab_size],
            n_k: vec![0; k],
        };
        for (d, doc) in docs.iter().enumerate() {
            let z: Vec<usize> = doc.iter().map(|_| rng.random_range(0..k)).collect();
            for (&w, &t) in doc.iter().zip(&z) {
                s.n_dk[d * k + t] += 1;
                s.n_kv[t * vocab_size + w] += 1;
                s.n_k[t] += 1;
            }
            s.assignments.push(z);
        }
        s
    }

    fn sweep(&mut self, docs: &[&[usize]], alpha: f64, eta: f64, rng: &mut ChaCha8Rng) {
        let (k, v) = (self.k, self.vocab_size);
        let v_eta = v as f64 * eta;
        let mut weights = vec![0.0; k];
        for (d, doc) in docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = self.assignments[d][i];
                self.n_dk[d * k + old] -= 1;
                self.n_kv[old * v + w] -= 1;
                self.n_k[old] -= 1;

                let mut total = 0.0;
                for (t, cum) in weights.iter_mut().enumerate() {
                    let p = (self.n_dk[d * k + t] as f64 + alpha)
                        * (self.n_kv[t * v + w] as f64 + eta)
                        / (self.n_k[t] as f64 + v_eta);
                    total += p;
                    *cum = total;
                }
                let u = rng.random::<f64>() * total;
                let new = weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                self.assignments[d][i] = new;
                self.n_dk[d * k + new] += 1;
                self.n_kv[new * v + w] += 1;
                self.n_k[new] += 1;
            }
        }
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn doc_topic_count(&self, doc: usize, topic: usize) -> u32 {
        self.n_dk[doc * self.k + topic]
    }

    pub fn topic_word_count(&self, topic: usize, word: usize) -> u32 {
        self.n_kv[topic * self.vocab_size + word]
    }

    pub fn topic_count(&self, topic: usize) -> u32 {
        self.n_k[topic]
    }

    /// Checks that the count tables agree with the assignments.
    pub fn is_consistent(&self, docs: &[&[usize]]) -> bool {
        let k = self.k;
        for (d, doc) in docs.iter().enumerate() {
            let row: u32 = self.n_dk[d * k..(d + 1) * k].iter().sum();
            if row as usize != doc.len() || self.assignments[d].len() != doc.len() {
                return false;
            }
            let mut counts = vec![0u32; k];
            for &z in &self.assignments[d] {
                counts[z] += 1;
            }
            if counts != self.n_dk[d * k..(d + 1) * k] {
                return false;
            }
        }
        (0..k).all(|t| {
            self.n_kv[t * self.vocab_size..(t + 1) * self.vocab_size]
                .iter()
                .sum::<u32>()
                == self.n_k[t]
        })
    }

    fn estimate(&self, alpha: f64, eta: f64, doc_lens: &[usize]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let (k, v) = (self.k, self.vocab_size);
        let mut beta = vec![0.0; v * k];
        for t in 0..k {
            let denom = self.n_k[t] as f64 + v as f64 * eta;
            for w in 0..v {
                beta[w * k + t] = (self.n_kv[t * v + w] as f64 + eta) / denom;
            }
        }
        let theta = doc_lens
            .iter()
            .enumerate()
            .map(|(d, &len)| {
                let denom = len as f64 + k as f64 * alpha;
                (0..k)
                    .map(|t| (self.n_dk[d * k + t] as f64 + alpha) / denom)
                    .collect()
            })
            .collect();
        (beta, theta)
    }
}

/// Fitted topic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicModel {
    pub version: u32,
    pub k: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub vocab_hash: String,
    pub alpha: f64,
    pub eta: f64,
    /// `V x k` row-major: `beta[w * k + t] = p(w | t)`.
    pub beta: Vec<f64>,
    /// Ids of the training documents, parallel to `doc_theta`.
    #[serde(default)]
    pub doc_ids: Vec<String>,
    #[serde(default)]
    pub doc_theta: Vec<Vec<f64>>,
}

/// Diagnostics recorded while fitting.
#[derive(Debug, Clone, Default, Serialize)]
pub struct FitReport {
    /// Per-token log-likelihood after each sweep.
    pub log_likelihood: Vec<f64>,
    pub skipped_documents: Vec<usize>,
    pub tokens: usize,
}

/// Fits LDA over `docs` (token ids below `vocab_size`). Empty documents are
/// skipped with a warning and receive a uniform topic distribution.
pub fn fit_lda(
    docs: &[&[usize]],
    vocab_size: usize,
    config: &LdaConfig,
) -> Result<(TopicModel, FitReport, GibbsState)> {
    config.validate()?;
    if docs.is_empty() || docs.iter().all(|d| d.is_empty()) {
        return Err(TopicModelError::EmptyCorpus);
    }
    for doc in docs {
        if let Some(&id) = doc.iter().find(|&&w| w >= vocab_size) {
            return Err(TopicModelError::TokenOutOfRange { id, vocab_size });
        }
    }
    let mut report = FitReport::default();
    for (i, d) in docs.iter().enumerate() {
        if d.is_empty() {
            warn!("topic model: document {i} is empty; skipped");
            report.skipped_documents.push(i);
        }
    }
    let doc_lens: Vec<usize> = docs.iter().map(|d| d.len()).collect();
    report.tokens = doc_lens.iter().sum();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = GibbsState::init(docs, config.k, vocab_size, &mut rng);
    for _ in 0..config.gibbs_iterations {
        state.sweep(docs, config.alpha, config.eta, &mut rng);
        let (beta, theta) = state.estimate(config.alpha, config.eta, &doc_lens);
        report
            .log_likelihood
            .push(corpus_log_likelihood(&beta, config.k, docs, &theta) / report.tokens as f64);
    }
    let (beta, doc_theta) = state.estimate(config.alpha, config.eta, &doc_lens);
    let model = TopicModel {
        version: TOPIC_MODEL_VERSION,
        k: config.k,
        vocab_size,
        vocab_hash: String::new(),
        alpha: config.alpha,
        eta: config.eta,
        beta,
        doc_ids: Vec::new(),
        doc_theta,
    };
    Ok((model, report, state))
}

fn corpus_log_likelihood(beta: &[f64], k: usize, docs: &[&[usize]], thetas: &[Vec<f64>]) -> f64 {
    docs.iter()
        .zip(thetas)
        .map(|(doc, theta)| {
            doc.iter()
                .map(|&w| {
                    let row = &beta[w * k..(w + 1) * k];
                    row.iter().zip(theta).map(|(b, p)| b * p).sum::<f64>().ln()
                })
                .sum::<f64>()
        })
        .sum()
}

impl TopicModel {
    pub fn beta_row(&self, word: usize) -> &[f64] {
        &self.beta[word * self.k..(word + 1) * self.k]
    }

    /// `p(. | topic)` over the vocabulary.
    pub fn topic_distribution(&self, topic: usize) -> Vec<f64> {
        (0..self.vocab_size)
            .map(|w| self.beta[w * self.k + topic])
            .collect()
    }

    /// Stored distribution of a training document, by id.
    pub fn theta_for(&self, doc_id: &str) -> Option<&[f64]> {
        self.doc_ids
            .iter()
            .position(|d| d == doc_id)
            .and_then(|i| self.doc_theta.get(i))
            .map(|v| v.as_slice())
    }

    /// Fold-in Gibbs sampling of a document's topic distribution with the
    /// topic-word matrix held fixed. The estimate is averaged over the second
    /// half of the sweeps. Empty documents get the uniform distribution.
    pub fn infer_theta(&self, doc: &[usize], iterations: usize, seed: u64) -> Vec<f64> {
        let k = self.k;
        let doc: Vec<usize> = doc
            .iter()
            .copied()
            .filter(|&w| w < self.vocab_size)
            .collect();
        if doc.is_empty() {
            warn!("topic model: inferring topics for an empty document; returning uniform");
            return vec![1.0 / k as f64; k];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z: Vec<usize> = doc.iter().map(|_| rng.random_range(0..k)).collect();
        let mut n_k = vec![0usize; k];
        for &t in &z {
            n_k[t] += 1;
        }
        let iterations = iterations.max(1);
        let burn_in = iterations / 2;
        let mut acc = vec![0.0; k];
        let mut samples = 0usize;
        let mut weights = vec![0.0; k];
        let denom = doc.len() as f64 + k as f64 * self.alpha;
        for sweep in 0..iterations {
            for (i, &w) in doc.iter().enumerate() {
                n_k[z[i]] -= 1;
                let row = self.beta_row(w);
                let mut total = 0.0;
                for t in 0..k {
                    total += (n_k[t] as f64 + self.alpha) * row[t];
                    weights[t] = total;
                }
                let u = rng.random::<f64>() * total;
                let new = weights.iter().position(|&c| u < c).unwrap_or(k - 1);
                z[i] = new;
                n_k[new] += 1;
            }
            if sweep >= burn_in {
                for t in 0..k {
                    acc[t] += (n_k[t] as f64 + self.alpha) / denom;
                }
                samples += 1;
            }
        }
        acc.iter().map(|a| a / samples as f64).collect()
    }

    /// `sum_d sum_{w in d} ln sum_t theta_d[t] * beta[w][t]`.
    pub fn log_likelihood(&self, docs: &[&[usize]], thetas: &[Vec<f64>]) -> f64 {
        corpus_log_likelihood(&self.beta, self.k, docs, thetas)
    }

    /// Log-likelihood of the training documents under their stored distributions.
    pub fn training_log_likelihood(&self, docs: &[&[usize]]) -> Result<f64> {
        if docs.len() != self.doc_theta.len() {
            return Err(TopicModelError::Format(format!(
                "{} documents but {} stored distributions",
                docs.len(),
                self.doc_theta.len()
            )));
        }
        Ok(self.log_likelihood(docs, &self.doc_theta))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != TOPIC_MODEL_VERSION {
            return Err(TopicModelError::Format(format!(
                "unsupported version {}",
                self.version
            )));
        }
        if self.beta.len() != self.vocab_size * self.k {
            return Err(TopicModelError::Format(format!(
                "beta has {} entries, expected {} x {}",
                self.beta.len(),
                self.vocab_size,
                self.k
            )));
        }
        if self.doc_theta.iter().any(|t| t.len() != self.k) {
            return Err(TopicModelError::Format("theta width differs from k".into()));
        }
        if !self.doc_ids.is_empty() && self.doc_ids.len() != self.doc_theta.len() {
            return Err(TopicModelError::Format(
                "doc_ids and doc_theta lengths differ".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: TopicModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs_of(raw: &[Vec<usize>]) -> Vec<&[usize]> {
        raw.iter().map(|d| d.as_slice()).collect()
    }

    fn small_config(k: usize, iters: usize, seed: u64) -> LdaConfig {
        LdaConfig {
            gibbs_iterations: iters,
            ..LdaConfig::with_topics(k, seed)
        }
    }

    #[test]
    fn single_word_corpus_normalizes() {
        let raw = vec![vec![0usize, 0, 0]; 10];
        let (m, _, _) = fit_lda(&docs_of(&raw), 1, &small_config(2, 20, 1)).unwrap();
        for theta in &m.doc_theta {
            assert!((theta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for t in 0..2 {
            assert!((m.topic_distribution(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let raw: Vec<Vec<usize>> = (0..30)
            .map(|d| (0..8).map(|i| (d * 3 + i) % 12).collect())
            .collect();
        let a = fit_lda(&docs_of(&raw), 12, &small_config(3, 30, 4)).unwrap();
        let b = fit_lda(&docs_of(&raw), 12, &small_config(3, 30, 4)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn counts_conserved() {
        let raw: Vec<Vec<usize>> = (0..20)
            .map(|d| (0..(d % 7 + 1)).map(|i| (d + i) % 9).collect())
            .collect();
        let docs = docs_of(&raw);
        let (_, _, state) = fit_lda(&docs, 9, &small_config(4, 10, 2)).unwrap();
        assert!(state.is_consistent(&docs));
        let total: u32 = (0..4).map(|t| state.topic_count(t)).sum();
        assert_eq!(total as usize, raw.iter().map(|d| d.len()).sum::<usize>());
    }

    #[test]
    fn errors_and_empty_documents() {
        assert!(matches!(
            fit_lda(&[], 5, &small_config(2, 1, 0)),
            Err(TopicModelError::EmptyCorpus)
        ));
        assert!(fit_lda(&[&[0usize][..]], 5, &small_config(1, 1, 0)).is_err());
        assert!(fit_lda(&[&[7usize][..]], 5, &small_config(2, 1, 0)).is_err());
        let raw = vec![vec![0usize, 1], vec![], vec![1, 1]];
        let (m, report, _) = fit_lda(&docs_of(&raw), 2, &small_config(2, 5, 0)).unwrap();
        assert_eq!(report.skipped_documents, vec![1]);
        assert_eq!(m.doc_theta[1], vec![0.5, 0.5]);
    }

    #[test]
    fn infer_theta_on_degenerate_beta() {
        // words 0 and 1 only have mass in topic 3
        let k = 5;
        let v = 4;
        let mut beta = vec![0.0; v * k];
        for w in [0, 1] {
            beta[w * k + 3] = 0.5;
        }
        for t in [0, 1, 2, 4] {
            beta[2 * k + t] = 0.5;
            beta[3 * k + t] = 0.5;
        }
        let m = TopicModel {
            version: TOPIC_MODEL_VERSION,
            k,
            vocab_size: v,
            vocab_hash: String::new(),
            alpha: 0.1,
            eta: 0.01,
            beta,
            doc_ids: vec![],
            doc_theta: vec![],
        };
        let theta = m.infer_theta(&[0, 1, 1, 0, 0], 50, 3);
        let argmax = (0..k)
            .max_by(|&a, &b| theta[a].total_cmp(&theta[b]))
            .unwrap();
        assert_eq!(argmax, 3);
        assert!((theta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(m.infer_theta(&[], 50, 3), vec![0.2; 5]);
        assert_eq!(m.infer_theta(&[0, 2], 20, 8), m.infer_theta(&[0, 2], 20, 8));
    }

    #[test]
    fn persistence_round_trip() {
        let raw: Vec<Vec<usize>> = (0..10).map(|d| vec![d % 3, (d + 1) % 3, 2]).collect();
        let (mut m, _, _) = fit_lda(&docs_of(&raw), 3, &small_config(2, 5, 0)).unwrap();
        m.doc_ids = (0..10).map(|i| format!("d{i}")).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lda.json");
        m.save(&p).unwrap();
        assert_eq!(TopicModel::load(&p).unwrap(), m);
        assert_eq!(m.theta_for("d3"), Some(m.doc_theta[3].as_slice()));
    }
}
