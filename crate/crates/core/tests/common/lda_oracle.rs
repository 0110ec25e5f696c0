//! Ground-truth LDA corpora with disjoint topic supports and greedy
//! total-variation topic matching.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

pub struct PlantedCorpus {
    pub docs: Vec<Vec<usize>>,
    /// `topics x vocab`, each row a distribution.
    pub beta: Vec<Vec<f64>>,
    pub vocab_size: usize,
}

/// `topics` topics, each supported on its own block of `words_per_topic`
/// words; per-topic word weights ~ Dirichlet(1), document mixtures
/// ~ Dirichlet(`doc_alpha`).
pub fn planted_corpus(
    topics: usize,
    words_per_topic: usize,
    n_docs: usize,
    doc_len: usize,
    doc_alpha: f64,
    seed: u64,
) -> PlantedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab_size = topics * words_per_topic;
    let beta: Vec<Vec<f64>> = (0..topics)
        .map(|t| {
            let w = dirichlet(1.0, words_per_topic, &mut rng);
            let mut row = vec![0.0; vocab_size];
            row[t * words_per_topic..(t + 1) * words_per_topic].copy_from_slice(&w);
            row
        })
        .collect();
    let docs = (0..n_docs)
        .map(|_| {
            let theta = dirichlet(doc_alpha, topics, &mut rng);
            (0..doc_len)
                .map(|_| {
                    let t = sample(&theta, &mut rng);
                    sample(&beta[t], &mut rng)
                })
                .collect()
        })
        .collect();
    PlantedCorpus {
        docs,
        beta,
        vocab_size,
    }
}

/// Symmetric Dirichlet draw via normalized Gamma(concentration, 1) variates.
fn dirichlet(concentration: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).unwrap();
    let g: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = g.iter().sum();
    g.iter().map(|x| x / total).collect()
}

fn sample(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Repeatedly pairs the closest (truth, estimate) topics by TV distance and
/// returns the TV of each pair, in matching order.
pub fn greedy_match(truth: &[Vec<f64>], estimated: &[Vec<f64>]) -> Vec<f64> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        for (j, e) in estimated.iter().enumerate() {
            pairs.push((total_variation(t, e), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut used_t = vec![false; truth.len()];
    let mut used_e = vec![false; estimated.len()];
    let mut out = Vec::new();
    for (tv, i, j) in pairs {
        if !used_t[i] && !used_e[j] {
            used_t[i] = true;
            used_e[j] = true;
            out.push(tv);
        }
    }
    out
}
