//! Synthetic corpus -> topics -> extraction -> network-ready examples.

use tdan_core::corpus::{generate_synthetic_pair, SyntheticPair, SyntheticSpec};
use tdan_core::dsw::{extract_dataset, fit_dataset_topics, Extraction};
use tdan_core::network::ModelConfig;
use tdan_core::topic_model::LdaConfig;
use tdan_core::training::TrainingData;

/// The default 50/k prior would swamp 8-16 token documents.
pub const SHORT_DOC_ALPHA: f64 = 0.1;

pub struct Prepared {
    pub pair: SyntheticPair,
    pub extraction: Extraction,
    pub data: TrainingData,
}

pub fn prepare(spec: &SyntheticSpec, seed: u64, topics: usize, sweeps: usize) -> Prepared {
    let pair = generate_synthetic_pair(spec, seed).unwrap();
    let lda = LdaConfig {
        alpha: SHORT_DOC_ALPHA,
        gibbs_iterations: sweeps,
        ..LdaConfig::with_topics(topics, seed)
    };
    let (model, _) = fit_dataset_topics(&pair.dataset, &pair.corpus.vocab, &lda).unwrap();
    let extraction = extract_dataset(&pair.dataset, &model, 0.08, 64, 50, seed).unwrap();
    let data = TrainingData::from_dataset(&pair.dataset, &extraction.by_id(), true).unwrap();
    Prepared {
        pair,
        extraction,
        data,
    }
}

/// Small network that still sees whole synthetic documents.
pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        d_h: 16,
        san_layers: 1,
        dspwan_layers: 1,
        heads: 2,
        ffn_dim: 32,
        d_l: 16,
        d_sp_max: 8,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}
