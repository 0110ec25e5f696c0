//! One method per subcommand. Each reads the artifacts of earlier steps,
//! writes its own, and prints a short JSON summary on stdout.

use std::collections::BTreeSet;

use anyhow::{bail, Context as _, Result};
use log::info;
use serde::Serialize;
use serde_json::json;
use tdan_core::corpus::{
    generate_synthetic_pair, load_embeddings, read_records, write_records, Corpus, Domain,
    DomainPairDataset, Vocabulary,
};
use tdan_core::dsw::{extract_dataset, fit_dataset_topics, write_dump};
use tdan_core::network::{ModelConfig, TdanModel, Variant};
use tdan_core::training::{evaluate_accuracy, predict, train, write_log, TrainingData};

use crate::config::RunConfig;
use crate::workspace::{assign_ids, require, write_json, Split, Workspace};
use crate::Common;

pub struct Context {
    config: RunConfig,
    seed: u64,
    variant: Variant,
    ws: Workspace,
}

fn print(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("json values serialize")
    );
}

impl Context {
    /// Loads and validates the config before any data is touched.
    pub fn new(flags: &Common) -> Result<Self> {
        let config = RunConfig::load(flags.config.as_deref())?;
        Ok(Self {
            seed: flags.seed.unwrap_or(config.train.seed),
            variant: flags.variant.unwrap_or(config.model.variant),
            ws: Workspace::new(&flags.out, flags.task.clone()),
            config,
        })
    }

    fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            ..self.config.model.clone()
        }
    }

    fn create_task_dir(&self) -> Result<()> {
        let dir = self.ws.task_dir();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))
    }

    pub fn synth(&self) -> Result<()> {
        let pair = generate_synthetic_pair(&self.config.synthetic, self.seed)?;
        std::fs::create_dir_all(&self.ws.out)
            .with_context(|| format!("creating {}", self.ws.out.display()))?;
        let task = &self.ws.task;
        for (name, domain) in [
            (&task.source, Domain::Source),
            (&task.target, Domain::Target),
        ] {
            let records: Vec<_> = pair
                .records
                .iter()
                .filter(|r| r.domain == domain)
                .cloned()
                .collect();
            write_records(Workspace::corpus_file(&self.ws.out, name), &records)?;
        }
        let spec_path = self.ws.out.join(format!("synth-{task}.json"));
        write_json(&spec_path, &json!({ "seed": self.seed, "spec": pair.spec }))?;
        print(&json!({ "corpus": pair.corpus.stats(), "spec": spec_path }));
        Ok(())
    }

    pub fn ingest(&self) -> Result<()> {
        let dir = self
            .config
            .paths
            .corpora
            .clone()
            .unwrap_or_else(|| self.ws.out.clone());
        let task = &self.ws.task;
        let mut records = Vec::new();
        let mut seen = BTreeSet::new();
        for (name, domain) in [
            (&task.source, Domain::Source),
            (&task.target, Domain::Target),
        ] {
            let path = Workspace::corpus_file(&dir, name);
            require(&path, "synth")
                .with_context(|| format!("no corpus for domain {name} in {}", dir.display()))?;
            let mut part =
                read_records(&path).with_context(|| format!("reading {}", path.display()))?;
            for r in &mut part {
                r.domain = domain;
            }
            assign_ids(&mut part, name, &mut seen)?;
            records.extend(part);
        }
        let corpus = Corpus::from_records(&records, None, self.config.corpus.min_count)?;
        let dataset = DomainPairDataset::assemble(&corpus, self.config.corpus.dev_size, self.seed)?;
        self.create_task_dir()?;
        write_records(self.ws.records(), &records)?;
        write_json(&self.ws.vocab(), &corpus.vocab)?;
        write_json(&self.ws.split(), &Split::of(&dataset))?;
        print(&json!({
            "task": task.to_string(),
            "corpus": corpus.stats(),
            "source_labeled": dataset.source_labeled.len(),
            "source_unlabeled": dataset.source_unlabeled.len(),
            "target_unlabeled": dataset.target_unlabeled.len(),
            "dev": dataset.dev.len(),
            "test": dataset.test.len(),
        }));
        Ok(())
    }

    pub fn train_topics(&self) -> Result<()> {
        let (vocab, dataset) = self.ws.load_dataset()?;
        let lda = self.config.topics.lda(self.seed);
        let (model, report) = fit_dataset_topics(&dataset, &vocab, &lda)?;
        model.save(self.ws.topics())?;
        print(&json!({
            "k": model.k,
            "documents": model.doc_ids.len(),
            "tokens": report.tokens,
            "skipped_documents": report.skipped_documents.len(),
            "final_log_likelihood": report.log_likelihood.last(),
        }));
        Ok(())
    }

    pub fn extract(&self) -> Result<()> {
        let (vocab, dataset) = self.ws.load_dataset()?;
        let topics = self.ws.load_topics(&vocab)?;
        let ex = &self.config.extraction;
        let extraction = extract_dataset(
            &dataset,
            &topics,
            ex.tol,
            ex.max_specific_len,
            self.config.topics.fold_in_iterations,
            self.seed,
        )?;
        write_dump(self.ws.extraction(), &extraction.words, &vocab)?;
        let n = extraction.words.len().max(1);
        let mean_len = extraction
            .words
            .iter()
            .map(|w| w.words.len())
            .sum::<usize>() as f64
            / n as f64;
        print(&json!({
            "source_specific_topics": extraction.sets.source_specific,
            "target_specific_topics": extraction.sets.target_specific,
            "documents": extraction.words.len(),
            "mean_length": mean_len,
        }));
        Ok(())
    }

    /// Dataset paired with extracted words; the dump is optional for
    /// variants that never read it.
    fn training_data(&self) -> Result<(Vocabulary, TrainingData)> {
        let (vocab, dataset) = self.ws.load_dataset()?;
        let needed = self.variant.uses_specific_words();
        let words = self.ws.load_extraction(&vocab, needed)?.unwrap_or_default();
        let data = TrainingData::from_dataset(&dataset, &words, needed)?;
        Ok((vocab, data))
    }

    pub fn train(&self) -> Result<()> {
        let (vocab, data) = self.training_data()?;
        let config = self.model_config();
        let mut model = match &self.config.paths.embeddings {
            Some(path) => {
                let table = load_embeddings(path, &vocab, config.d_h, self.seed)?;
                info!("embedding coverage {:?}", table.coverage());
                TdanModel::with_embeddings(config, &table, self.seed)?
            }
            None => TdanModel::new(config, vocab.len(), self.seed)?,
        };
        let train_config = tdan_core::training::TrainConfig {
            seed: self.seed,
            ..self.config.train.clone()
        };
        let state = train(&mut model, &data, &train_config, |_| {})?;
        model.save(self.ws.checkpoint(self.variant), &vocab.content_hash())?;
        write_log(self.ws.train_log(self.variant), &state.history)?;
        print(&json!({
            "variant": self.variant,
            "epochs": state.epoch,
            "best_epoch": state.best_epoch,
            "best_dev_accuracy": state.best_dev_accuracy,
            "initial_dev_accuracy": state.initial_dev_accuracy,
            "stopped_early": state.stopped_early,
        }));
        Ok(())
    }

    fn load_model(&self, vocab: &Vocabulary) -> Result<TdanModel> {
        let path = self.ws.checkpoint(self.variant);
        require(&path, "train")?;
        let (model, hash) =
            TdanModel::load(&path).with_context(|| format!("reading {}", path.display()))?;
        if hash != vocab.content_hash() {
            bail!(
                "{} was trained on a different vocabulary; rerun train",
                path.display()
            );
        }
        if model.config().variant != self.variant {
            bail!(
                "{} holds a {} model",
                path.display(),
                model.config().variant
            );
        }
        Ok(model)
    }

    pub fn eval(&self) -> Result<()> {
        let (vocab, data) = self.training_data()?;
        let model = self.load_model(&vocab)?;
        let accuracy = evaluate_accuracy(&model, &data.test)?;
        let dev_accuracy = evaluate_accuracy(&model, &data.dev)?;

        #[derive(Serialize)]
        struct Prediction<'a> {
            doc_id: &'a str,
            label: &'a str,
            prediction: &'a str,
        }
        let mut lines = String::new();
        for (e, p) in data.test.iter().zip(predict(&model, &data.test)?) {
            let line = Prediction {
                doc_id: &e.doc_id,
                label: e.label.map_or("", |l| l.short_name()),
                prediction: p.short_name(),
            };
            lines.push_str(&serde_json::to_string(&line)?);
            lines.push('\n');
        }
        std::fs::write(self.ws.predictions(self.variant), lines)?;
        let metrics = json!({
            "task": self.ws.task.to_string(),
            "variant": self.variant,
            "split": "test",
            "documents": data.test.len(),
            "accuracy": accuracy,
            "dev_accuracy": dev_accuracy,
        });
        write_json(&self.ws.metrics(self.variant), &metrics)?;
        print(&metrics);
        Ok(())
    }

    pub fn attn_export(&self, ids: &[String], limit: usize) -> Result<()> {
        let (vocab, data) = self.training_data()?;
        let model = self.load_model(&vocab)?;
        let docs: Vec<_> = if ids.is_empty() {
            data.test.iter().take(limit).collect()
        } else {
            let all: Vec<_> = data
                .source
                .iter()
                .chain(&data.target)
                .chain(&data.dev)
                .chain(&data.test)
                .collect();
            ids.iter()
                .map(|id| {
                    all.iter()
                        .find(|e| &e.doc_id == id)
                        .copied()
                        .with_context(|| {
                            format!("document {id} is not part of task {}", self.ws.task)
                        })
                })
                .collect::<Result<_>>()?
        };
        let exports = docs
            .iter()
            .map(|e| model.export_attention(&e.doc_id, e.input(), &vocab))
            .collect::<Result<Vec<_>, _>>()?;
        let path = self.ws.attention(self.variant);
        write_json(&path, &exports)?;
        print(&json!({ "documents": exports.len(), "path": path }));
        Ok(())
    }
}
