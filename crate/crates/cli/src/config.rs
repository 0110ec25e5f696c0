//! Run configuration: one JSON file holding every tunable of the pipeline.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tdan_core::corpus::SyntheticSpec;
use tdan_core::dsw::{DEFAULT_MAX_SPECIFIC_LEN, DEFAULT_TOLERANCE};
use tdan_core::network::ModelConfig;
use tdan_core::topic_model::LdaConfig;
use tdan_core::training::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub topics: TopicSection,
    #[serde(default)]
    pub extraction: ExtractionSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
    #[serde(default)]
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            corpus: CorpusSection::default(),
            topics: TopicSection::default(),
            extraction: ExtractionSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synthetic: SyntheticSpec::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Words rarer than this map to `<unk>`.
    pub min_count: usize,
    /// Labeled target documents held out for early stopping.
    pub dev_size: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            min_count: 2,
            dev_size: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopicSection {
    pub k: usize,
    /// `50 / k` when absent.
    pub alpha: Option<f64>,
    pub eta: f64,
    pub gibbs_iterations: usize,
    pub fold_in_iterations: usize,
}

impl Default for TopicSection {
    fn default() -> Self {
        Self {
            k: 50,
            alpha: None,
            eta: 0.01,
            gibbs_iterations: 500,
            fold_in_iterations: 50,
        }
    }
}

impl TopicSection {
    pub fn lda(&self, seed: u64) -> LdaConfig {
        let base = LdaConfig::with_topics(self.k, seed);
        LdaConfig {
            alpha: self.alpha.unwrap_or(base.alpha),
            eta: self.eta,
            gibbs_iterations: self.gibbs_iterations,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionSection {
    pub tol: f64,
    pub max_specific_len: usize,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOLERANCE,
            max_specific_len: DEFAULT_MAX_SPECIFIC_LEN,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Directory holding `<SRC>.jsonl` and `<TGT>.jsonl`; the output
    /// directory when absent.
    pub corpora: Option<PathBuf>,
    /// word2vec text file whose width must equal `model.d_h`.
    pub embeddings: Option<PathBuf>,
}

impl RunConfig {
    /// Reads and validates a config file, or returns the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let config = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            );
        }
        if self.extraction.tol.is_nan() || self.extraction.tol <= 0.0 {
            bail!("extraction.tol must be > 0, got {}", self.extraction.tol);
        }
        if self.extraction.max_specific_len == 0 {
            bail!("extraction.max_specific_len must be positive");
        }
        if self.topics.fold_in_iterations == 0 {
            bail!("topics.fold_in_iterations must be positive");
        }
        self.topics.lda(0).validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.synthetic.validate()?;
        for p in [&self.paths.corpora, &self.paths.embeddings]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                bail!("configured path {} does not exist", p.display());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn sections_are_optional() {
        let c: RunConfig = serde_json::from_str(r#"{"version": 1, "topics": {"k": 7}}"#).unwrap();
        assert_eq!(c.topics.k, 7);
        assert_eq!(c.topics.lda(3).alpha, 50.0 / 7.0);
        assert_eq!(c.model, ModelConfig::default());
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"version": 1, "topic": {}}"#).is_err());
        assert!(
            serde_json::from_str::<RunConfig>(r#"{"version": 1, "train": {"lr_rate": 1}}"#)
                .is_err()
        );
        assert!(serde_json::from_str::<RunConfig>(r#"{"topics": {}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"version": 2}"#).unwrap();
        assert!(c.validate().is_err());
        let c: RunConfig =
            serde_json::from_str(r#"{"version": 1, "extraction": {"tol": 0}}"#).unwrap();
        assert!(c.validate().is_err());
    }
}
