//! The dual-branch sentiment network.
//!
//! A semantics branch (embeddings plus sinusoidal positions through a
//! transformer encoder) reads the document; a position-free branch reads the
//! document's extracted domain-specific words. Each branch is pooled by
//! additive attention, the pooled vectors are exchanged between branches as
//! one extra context row, and the re-pooled features are fused into `h_f`,
//! which feeds a sentiment head and, through gradient reversal, a domain head.
//!
//! Weights are stored `(out, in)` and applied as `x * W^T`.

mod attention;
mod encoder;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Checkpoint, Graph, Mode, ParamId, ParamStore, Tensor, Var};
use crate::corpus::{EmbeddingTable, Vocabulary, PAD_ID};

pub use attention::{MlpAttentionHead, Pooled};
pub use encoder::positional_encoding;
use encoder::{linear, EncoderLayer};

pub const MODEL_ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid model input: {0}")]
    InvalidInput(String),
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = NetworkError> = std::result::Result<T, E>;

/// Which architecture to build.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Both branches with the interactive connection.
    #[default]
    Tdan,
    /// Both branches, fused directly without the interactive connection.
    TdanF,
    /// Semantics branch only.
    TdanMinus,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Tdan => "tdan",
            Variant::TdanF => "tdan-f",
            Variant::TdanMinus => "tdan-minus",
        }
    }

    pub fn uses_specific_words(self) -> bool {
        self != Variant::TdanMinus
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tdan" => Ok(Variant::Tdan),
            "tdan-f" => Ok(Variant::TdanF),
            "tdan-minus" => Ok(Variant::TdanMinus),
            _ => Err(format!(
                "unknown variant `{s}` (expected tdan, tdan-f or tdan-minus)"
            )),
        }
    }
}

/// Where each pooled vector is appended before the second pooling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Wiring {
    /// The semantics summary joins the specific-word context and vice versa.
    #[default]
    Cross,
    /// Each summary is appended back to its own branch.
    #[serde(rename = "self")]
    SelfLoop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_h: usize,
    pub san_layers: usize,
    pub dspwan_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Documents are truncated or padded to this many tokens.
    pub d_l: usize,
    /// Specific-word sequences are truncated to this many entries.
    pub d_sp_max: usize,
    pub dropout: f64,
    pub variant: Variant,
    pub wiring: Wiring,
    pub freeze_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_h: 300,
            san_layers: 6,
            dspwan_layers: 3,
            heads: 4,
            ffn_dim: 1200,
            d_l: 256,
            d_sp_max: 64,
            dropout: 0.25,
            variant: Variant::Tdan,
            wiring: Wiring::Cross,
            freeze_embeddings: false,
        }
    }
}

impl ModelConfig {
    /// Small enough for finite-difference checks: `d_h = 8`, one layer per
    /// branch, two heads, `d_l = 6`, `d_sp_max = 4`, no dropout.
    pub fn tiny() -> Self {
        Self {
            d_h: 8,
            san_layers: 1,
            dspwan_layers: 1,
            heads: 2,
            ffn_dim: 16,
            d_l: 6,
            d_sp_max: 4,
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetworkError::InvalidConfig(m));
        if self.d_h == 0
            || self.heads == 0
            || self.ffn_dim == 0
            || self.d_l == 0
            || self.d_sp_max == 0
        {
            return bad("all dimensions must be positive".into());
        }
        if !self.d_h.is_multiple_of(self.heads) {
            return bad(format!(
                "d_h {} is not divisible by {} heads",
                self.d_h, self.heads
            ));
        }
        if !self.d_h.is_multiple_of(2) {
            return bad(format!(
                "d_h {} must be even for positional encoding",
                self.d_h
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// One document as the network sees it.
#[derive(Debug, Clone, Copy)]
pub struct DocumentInput<'a> {
    pub tokens: &'a [usize],
    /// Extracted specific-word ids, `<specific_token>` first. Ignored by
    /// the semantics-only variant.
    pub specific: &'a [usize],
}

/// Attention nodes recorded during one forward pass.
#[derive(Debug, Clone, Default)]
pub struct AttentionVars {
    /// `[layer][head]`, each `d_l x d_l`.
    pub san: Vec<Vec<Var>>,
    /// `[layer][head]`, each `d_sp x d_sp`.
    pub dspwan: Vec<Vec<Var>>,
    /// First pooling over the document context (`d_l x 1`).
    pub semantics: Option<Var>,
    /// First pooling over the specific-word context (`d_sp x 1`).
    pub specific: Option<Var>,
    /// Second-stage poolings over the augmented contexts.
    pub augmented: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// `1 x 2`, Negative then Positive.
    pub sentiment_logits: Var,
    /// `1 x 2`, Source then Target.
    pub domain_logits: Var,
    pub h_s: Var,
    pub h_sp: Option<Var>,
    pub h_f: Var,
    pub attention: AttentionVars,
    /// Positions of the document that are real tokens rather than padding.
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone)]
struct Heads {
    semantics: MlpAttentionHead,
    specific: Option<MlpAttentionHead>,
    augmented_semantics: Option<MlpAttentionHead>,
    augmented_specific: Option<MlpAttentionHead>,
}

/// Parameters and architecture of one model.
#[derive(Debug, Clone)]
pub struct TdanModel {
    config: ModelConfig,
    vocab_size: usize,
    store: ParamStore,
    positions: Tensor,
    embedding: ParamId,
    san: Vec<EncoderLayer>,
    dspwan: Vec<EncoderLayer>,
    heads: Heads,
    fusion_w: ParamId,
    fusion_b: ParamId,
    cls_w: ParamId,
    cls_b: ParamId,
    dom_w: ParamId,
    dom_b: ParamId,
}

impl TdanModel {
    /// Fresh model with a Xavier-initialized embedding table.
    pub fn new(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = Tensor::xavier(vocab_size, config.d_h, &mut rng);
        Self::build(config, table, &mut rng)
    }

    /// Fresh model whose embedding table starts from `table`, which must be
    /// `d_h` wide.
    pub fn with_embeddings(config: ModelConfig, table: &EmbeddingTable, seed: u64) -> Result<Self> {
        if table.dim() != config.d_h {
            return Err(NetworkError::InvalidConfig(format!(
                "embedding width {} differs from d_h {}",
                table.dim(),
                config.d_h
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, table.matrix.clone(), &mut rng)
    }

    fn build(config: ModelConfig, mut table: Tensor, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let (vocab_size, d_h) = table.dims();
        if vocab_size == 0 {
            return Err(NetworkError::InvalidConfig("empty vocabulary".into()));
        }
        table.data_mut()[PAD_ID * d_h..(PAD_ID + 1) * d_h].fill(0.0);
        let mut store = ParamStore::new();
        let embedding = store.insert("embedding", table)?;
        if config.freeze_embeddings {
            store.set_requires_grad(embedding, false);
        }
        let both = config.variant.uses_specific_words();
        let san = (0..config.san_layers)
            .map(|i| EncoderLayer::new(&mut store, &format!("san.{i}"), d_h, config.ffn_dim, rng))
            .collect::<Result<Vec<_>>>()?;
        let dspwan = if both {
            (0..config.dspwan_layers)
                .map(|i| {
                    EncoderLayer::new(&mut store, &format!("dspwan.{i}"), d_h, config.ffn_dim, rng)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let interactive = config.variant == Variant::Tdan;
        let mut head = |name: &str, on: bool| -> Result<Option<MlpAttentionHead>> {
            on.then(|| MlpAttentionHead::new(&mut store, name, d_h, rng))
                .transpose()
        };
        let heads = Heads {
            semantics: head("pool.semantics", true)?.expect("always built"),
            specific: head("pool.specific", both)?,
            augmented_semantics: head("pool.semantics_aug", interactive)?,
            augmented_specific: head("pool.specific_aug", interactive)?,
        };
        let fused_in = if both { 2 * d_h } else { d_h };
        let fusion_w = store.xavier("fusion.w", d_h, fused_in, rng)?;
        let fusion_b = store.insert("fusion.b", Tensor::zeros(1, d_h))?;
        let cls_w = store.xavier("sentiment.w", 2, d_h, rng)?;
        let cls_b = store.insert("sentiment.b", Tensor::zeros(1, 2))?;
        let dom_w = store.xavier("domain.w", 2, d_h, rng)?;
        let dom_b = store.insert("domain.b", Tensor::zeros(1, 2))?;
        Ok(Self {
            positions: positional_encoding(config.d_l, d_h),
            config,
            vocab_size,
            store,
            embedding,
            san,
            dspwan,
            heads,
            fusion_w,
            fusion_b,
            cls_w,
            cls_b,
            dom_w,
            dom_b,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn embedding_param(&self) -> ParamId {
        self.embedding
    }

    /// Parameters of the domain head, which sits behind gradient reversal.
    pub fn domain_head_params(&self) -> [ParamId; 2] {
        [self.dom_w, self.dom_b]
    }

    /// Truncates or pads `tokens` to `d_l`; `<pad>` positions are invalid.
    pub fn pad_document(&self, tokens: &[usize]) -> Result<(Vec<usize>, Vec<bool>)> {
        let d_l = self.config.d_l;
        let mut ids: Vec<usize> = tokens.iter().copied().take(d_l).collect();
        ids.resize(d_l, PAD_ID);
        let valid: Vec<bool> = ids.iter().map(|&t| t != PAD_ID).collect();
        if !valid.iter().any(|v| *v) {
            return Err(NetworkError::InvalidInput(
                "document has no tokens after padding".into(),
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.vocab_size) {
            return Err(NetworkError::InvalidInput(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.vocab_size
            )));
        }
        Ok((ids, valid))
    }

    /// Semantic context `C` (`d_l x d_h`), the validity mask and per-layer
    /// attention.
    pub fn encode_semantics(
        &self,
        g: &mut Graph,
        tokens: &[usize],
    ) -> Result<(Var, Vec<bool>, Vec<Vec<Var>>)> {
        let (ids, valid) = self.pad_document(tokens)?;
        let table = g.param(self.embedding);
        let emb = g.embedding_lookup(table, &ids)?;
        let pos = g.constant(self.positions.clone());
        let mut x = g.add(emb, pos)?;
        let n = ids.len();
        let mask = if valid.iter().all(|v| *v) {
            None
        } else {
            let row: Vec<f64> = valid
                .iter()
                .map(|&v| if v { 0.0 } else { f64::NEG_INFINITY })
                .collect();
            let data = row.iter().copied().cycle().take(n * n).collect();
            Some(g.constant(Tensor::matrix(n, n, data)?))
        };
        let mut trace = Vec::with_capacity(self.san.len());
        for layer in &self.san {
            let (y, attn) = layer.forward(g, x, mask, self.config.heads, self.config.dropout)?;
            x = y;
            trace.push(attn);
        }
        Ok((x, valid, trace))
    }

    /// Specific-word context `C_sp` (`d_sp x d_h`), without positions.
    pub fn encode_specific(
        &self,
        g: &mut Graph,
        specific: &[usize],
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        if !self.config.variant.uses_specific_words() {
            return Err(NetworkError::InvalidInput(
                "the semantics-only variant has no specific-word encoder".into(),
            ));
        }
        let ids: Vec<usize> = specific
            .iter()
            .copied()
            .take(self.config.d_sp_max)
            .collect();
        if ids.is_empty() {
            return Err(NetworkError::InvalidInput(
                "specific-word sequence is empty".into(),
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.vocab_size) {
            return Err(NetworkError::InvalidInput(format!(
                "specific-word id {bad} out of range for vocabulary of {}",
                self.vocab_size
            )));
        }
        let table = g.param(self.embedding);
        let mut x = g.embedding_lookup(table, &ids)?;
        let mut trace = Vec::with_capacity(self.dspwan.len());
        for layer in &self.dspwan {
            let (y, attn) = layer.forward(g, x, None, self.config.heads, self.config.dropout)?;
            x = y;
            trace.push(attn);
        }
        Ok((x, trace))
    }

    /// Pools both contexts, appends each summary as one extra row of the
    /// other context (or its own, with self wiring) and pools again.
    /// Returns `(h_s, h_sp)` and the four attention vectors in pooling order.
    pub fn interactive_connect(
        &self,
        g: &mut Graph,
        context: Var,
        valid: &[bool],
        specific_context: Var,
    ) -> Result<(Var, Var, [Var; 4])> {
        let (Some(spec_head), Some(aug_sem), Some(aug_spec)) = (
            &self.heads.specific,
            &self.heads.augmented_semantics,
            &self.heads.augmented_specific,
        ) else {
            return Err(NetworkError::InvalidInput(format!(
                "variant {} has no interactive connection",
                self.config.variant
            )));
        };
        let n_sp = g.value(specific_context).rows();
        let p_sem = self.heads.semantics.pool(g, context, valid)?;
        let p_sp = spec_head.pool(g, specific_context, &vec![true; n_sp])?;
        let (into_sem, into_sp) = match self.config.wiring {
            Wiring::Cross => (p_sp.h, p_sem.h),
            Wiring::SelfLoop => (p_sem.h, p_sp.h),
        };
        let c_aug = g.concat(&[context, into_sem], 0)?;
        let sp_aug = g.concat(&[specific_context, into_sp], 0)?;
        let mut valid_aug = valid.to_vec();
        valid_aug.push(true);
        let h_s = aug_sem.pool(g, c_aug, &valid_aug)?;
        let h_sp = aug_spec.pool(g, sp_aug, &vec![true; n_sp + 1])?;
        Ok((
            h_s.h,
            h_sp.h,
            [p_sem.alpha, p_sp.alpha, h_s.alpha, h_sp.alpha],
        ))
    }

    /// `h_f = relu(W_f [h_s; h_sp] + b_f)` and sentiment logits
    /// `W_c h_f + b_c`. Without `h_sp` only `h_s` is fused.
    pub fn fuse_and_classify(
        &self,
        g: &mut Graph,
        h_s: Var,
        h_sp: Option<Var>,
    ) -> Result<(Var, Var)> {
        let joined = match h_sp {
            Some(h_sp) => g.concat(&[h_s, h_sp], 1)?,
            None => h_s,
        };
        let pre = linear(g, joined, self.fusion_w, self.fusion_b)?;
        let h_f = g.relu(pre);
        let logits = linear(g, h_f, self.cls_w, self.cls_b)?;
        Ok((logits, h_f))
    }

    /// Domain logits `W_d R_lambda(h_f) + b_d`, with `R_lambda` the gradient
    /// reversal layer.
    pub fn domain_classify(&self, g: &mut Graph, h_f: Var, lambda: f64) -> Result<Var> {
        let reversed = g.gradient_reversal(h_f, lambda)?;
        linear(g, reversed, self.dom_w, self.dom_b)
    }

    pub fn forward(&self, g: &mut Graph, doc: DocumentInput<'_>, lambda: f64) -> Result<Forward> {
        let (context, valid, san_trace) = self.encode_semantics(g, doc.tokens)?;
        let mut attention = AttentionVars {
            san: san_trace,
            ..AttentionVars::default()
        };
        let (h_s, h_sp) = match self.config.variant {
            Variant::TdanMinus => {
                let p = self.heads.semantics.pool(g, context, &valid)?;
                attention.semantics = Some(p.alpha);
                (p.h, None)
            }
            Variant::TdanF => {
                let (spec_ctx, sp_trace) = self.encode_specific(g, doc.specific)?;
                attention.dspwan = sp_trace;
                let n_sp = g.value(spec_ctx).rows();
                let p = self.heads.semantics.pool(g, context, &valid)?;
                let q = self
                    .heads
                    .specific
                    .as_ref()
                    .expect("built for two-branch variants")
                    .pool(g, spec_ctx, &vec![true; n_sp])?;
                attention.semantics = Some(p.alpha);
                attention.specific = Some(q.alpha);
                (p.h, Some(q.h))
            }
            Variant::Tdan => {
                let (spec_ctx, sp_trace) = self.encode_specific(g, doc.specific)?;
                attention.dspwan = sp_trace;
                let (h_s, h_sp, alphas) = self.interactive_connect(g, context, &valid, spec_ctx)?;
                attention.semantics = Some(alphas[0]);
                attention.specific = Some(alphas[1]);
                attention.augmented = alphas[2..].to_vec();
                (h_s, Some(h_sp))
            }
        };
        let (sentiment_logits, h_f) = self.fuse_and_classify(g, h_s, h_sp)?;
        let domain_logits = self.domain_classify(g, h_f, lambda)?;
        Ok(Forward {
            sentiment_logits,
            domain_logits,
            h_s,
            h_sp,
            h_f,
            attention,
            valid,
        })
    }

    /// Eval-mode forward pass of one document.
    pub fn infer(&self, doc: DocumentInput<'_>) -> Result<Inference> {
        let mut g = Graph::new(&self.store, Mode::Eval);
        let f = self.forward(&mut g, doc, 0.0)?;
        let probs = |g: &mut Graph, v: Var| -> Result<[f64; 2]> {
            let p = g.softmax(v, 1)?;
            let d = g.value(p).data();
            Ok([d[0], d[1]])
        };
        Ok(Inference {
            sentiment: probs(&mut g, f.sentiment_logits)?,
            domain: probs(&mut g, f.domain_logits)?,
            h_s: g.value(f.h_s).data().to_vec(),
            h_sp: f.h_sp.map(|v| g.value(v).data().to_vec()),
            h_f: g.value(f.h_f).data().to_vec(),
        })
    }

    /// [`TdanModel::infer`] over many documents in parallel.
    pub fn infer_batch(&self, docs: &[DocumentInput<'_>]) -> Result<Vec<Inference>> {
        docs.par_iter().map(|d| self.infer(*d)).collect()
    }

    /// Attention distributions of one document in eval mode.
    pub fn attention_trace(&self, doc: DocumentInput<'_>) -> Result<AttentionTrace> {
        let mut g = Graph::new(&self.store, Mode::Eval);
        let f = self.forward(&mut g, doc, 0.0)?;
        let values = |vars: &[Vec<Var>]| -> Vec<Vec<Tensor>> {
            vars.iter()
                .map(|heads| heads.iter().map(|&v| g.value(v).clone()).collect())
                .collect()
        };
        let column = |v: Option<Var>| v.map(|v| g.value(v).data().to_vec());
        Ok(AttentionTrace {
            san: values(&f.attention.san),
            dspwan: values(&f.attention.dspwan),
            semantics: column(f.attention.semantics).unwrap_or_default(),
            specific: column(f.attention.specific),
            augmented: f
                .attention
                .augmented
                .iter()
                .map(|&v| g.value(v).data().to_vec())
                .collect(),
            valid: f.valid,
        })
    }

    /// Exportable attention over the document's real tokens and its
    /// specific words.
    pub fn export_attention(
        &self,
        doc_id: &str,
        doc: DocumentInput<'_>,
        vocab: &Vocabulary,
    ) -> Result<AttentionExport> {
        let trace = self.attention_trace(doc)?;
        let (ids, _) = self.pad_document(doc.tokens)?;
        let (tokens, alpha_semantics): (Vec<usize>, Vec<f64>) = ids
            .iter()
            .zip(&trace.semantics)
            .zip(&trace.valid)
            .filter(|(_, v)| **v)
            .map(|((&t, &a), _)| (t, a))
            .unzip();
        let specific: Vec<usize> = doc
            .specific
            .iter()
            .copied()
            .take(self.config.d_sp_max)
            .collect();
        Ok(AttentionExport {
            doc_id: doc_id.to_string(),
            tokens: vocab.decode(&tokens),
            alpha_semantics,
            specific_words: trace.specific.as_ref().map(|_| vocab.decode(&specific)),
            alpha_specific: trace.specific,
        })
    }

    /// Writes `{version, config, vocab_size, vocab_hash, params}` as JSON.
    pub fn save(&self, path: impl AsRef<Path>, vocab_hash: &str) -> Result<()> {
        let artifact = ModelArtifact {
            version: MODEL_ARTIFACT_VERSION,
            config: self.config.clone(),
            vocab_size: self.vocab_size,
            vocab_hash: vocab_hash.to_string(),
            params: Checkpoint::from_store(&self.store),
        };
        std::fs::write(path, serde_json::to_string(&artifact)?)?;
        Ok(())
    }

    /// Rebuilds the architecture from the stored config and restores every
    /// parameter. Returns the model and the vocabulary hash it was saved with.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let artifact: ModelArtifact = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if artifact.version != MODEL_ARTIFACT_VERSION {
            return Err(NetworkError::Artifact(format!(
                "unsupported version {} (expected {MODEL_ARTIFACT_VERSION})",
                artifact.version
            )));
        }
        let mut model = Self::new(artifact.config, artifact.vocab_size, 0)?;
        artifact.params.restore_into(&mut model.store)?;
        Ok((model, artifact.vocab_hash))
    }

    /// Copies every parameter value from a snapshot of this architecture.
    pub fn restore(&mut self, snapshot: &Checkpoint) -> Result<()> {
        snapshot.restore_into(&mut self.store)?;
        Ok(())
    }

    pub fn snapshot(&self) -> Checkpoint {
        Checkpoint::from_store(&self.store)
    }
}

/// Eval-mode outputs of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub sentiment: [f64; 2],
    pub domain: [f64; 2],
    pub h_s: Vec<f64>,
    pub h_sp: Option<Vec<f64>>,
    pub h_f: Vec<f64>,
}

/// Attention values of one eval-mode forward pass.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub san: Vec<Vec<Tensor>>,
    pub dspwan: Vec<Vec<Tensor>>,
    /// First pooling over all `d_l` positions; padding gets zero.
    pub semantics: Vec<f64>,
    pub specific: Option<Vec<f64>>,
    pub augmented: Vec<Vec<f64>>,
    pub valid: Vec<bool>,
}

impl AttentionTrace {
    /// Every attention distribution of the pass, as flat probability vectors.
    pub fn distributions(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for t in self.san.iter().chain(&self.dspwan).flatten() {
            out.extend((0..t.rows()).map(|r| t.row_slice(r).to_vec()));
        }
        out.push(self.semantics.clone());
        out.extend(self.specific.clone());
        out.extend(self.augmented.iter().cloned());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub alpha_semantics: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub specific_words: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha_specific: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelArtifact {
    version: u32,
    config: ModelConfig,
    vocab_size: usize,
    vocab_hash: String,
    params: Checkpoint,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SPECIFIC_ID;

    fn model(variant: Variant) -> TdanModel {
        let config = ModelConfig {
            variant,
            ..ModelConfig::tiny()
        };
        TdanModel::new(config, 12, 3).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let odd = ModelConfig {
            heads: 3,
            ..ModelConfig::tiny()
        };
        assert!(matches!(
            odd.validate(),
            Err(NetworkError::InvalidConfig(_))
        ));
        let json = r#"{"d_h": 8, "heads": 2, "colour": 1}"#;
        assert!(serde_json::from_str::<ModelConfig>(json).is_err());
        let parsed: ModelConfig =
            serde_json::from_str(r#"{"variant": "tdan-f", "wiring": "self"}"#).unwrap();
        assert_eq!(parsed.variant, Variant::TdanF);
        assert_eq!(parsed.wiring, Wiring::SelfLoop);
    }

    #[test]
    fn parameter_shapes() {
        let m = model(Variant::Tdan);
        let shape = |n: &str| m.store.value(m.store.id(n).unwrap()).dims();
        assert_eq!(shape("fusion.w"), (8, 16));
        assert_eq!(shape("sentiment.w"), (2, 8));
        assert_eq!(shape("domain.w"), (2, 8));
        assert_eq!(shape("pool.semantics.w"), (1, 8));
        assert_eq!(shape("pool.specific_aug.w1"), (8, 8));
        let minus = model(Variant::TdanMinus);
        assert_eq!(
            minus
                .store
                .value(minus.store.id("fusion.w").unwrap())
                .dims(),
            (8, 8)
        );
        assert!(minus.store.id("dspwan.0.wq").is_none());
        let f = model(Variant::TdanF);
        assert!(f.store.id("pool.semantics_aug.q").is_none());
    }

    #[test]
    fn shapes_and_ranges() {
        let m = model(Variant::Tdan);
        let mut g = Graph::new(&m.store, Mode::Eval);
        let (c, valid, _) = m.encode_semantics(&mut g, &[4, 5, 6]).unwrap();
        assert_eq!(g.value(c).dims(), (6, 8));
        assert_eq!(valid, vec![true, true, true, false, false, false]);
        let (csp, _) = m.encode_specific(&mut g, &[SPECIFIC_ID]).unwrap();
        assert_eq!(g.value(csp).dims(), (1, 8));
        let f = m
            .forward(
                &mut g,
                DocumentInput {
                    tokens: &[4, 5, 6],
                    specific: &[SPECIFIC_ID, 7],
                },
                0.1,
            )
            .unwrap();
        assert!(g.value(f.h_f).data().iter().all(|v| *v >= 0.0));
        assert_eq!(g.value(f.h_s).dims(), (1, 8));
        assert_eq!(g.value(f.h_sp.unwrap()).dims(), (1, 8));
        assert!(m.encode_semantics(&mut g, &[]).is_err());
        assert!(m.encode_semantics(&mut g, &[PAD_ID, PAD_ID]).is_err());
    }

    #[test]
    fn singleton_and_identical_contexts() {
        let m = model(Variant::Tdan);
        let mut g = Graph::new(&m.store, Mode::Eval);
        let row = g.input(Tensor::row(vec![0.3, -0.2, 0.5, 0.1, 0.0, 0.9, -1.0, 0.4]));
        let p = m.heads.semantics.pool(&mut g, row, &[true]).unwrap();
        assert_eq!(g.value(p.alpha).data(), &[1.0]);
        assert_eq!(g.value(p.h).data(), g.value(row).data());
        let twice = g.concat(&[row, row], 0).unwrap();
        let p = m
            .heads
            .semantics
            .pool(&mut g, twice, &[true, true])
            .unwrap();
        assert_eq!(g.value(p.alpha).data(), &[0.5, 0.5]);
        assert!(m
            .heads
            .semantics
            .pool(&mut g, twice, &[false, false])
            .is_err());
    }

    #[test]
    fn domain_forward_ignores_lambda() {
        let m = model(Variant::Tdan);
        let doc = DocumentInput {
            tokens: &[4, 5, 6, 7],
            specific: &[SPECIFIC_ID, 4],
        };
        let logits = |lambda| {
            let mut g = Graph::new(&m.store, Mode::Eval);
            let f = m.forward(&mut g, doc, lambda).unwrap();
            g.value(f.domain_logits).data().to_vec()
        };
        assert_eq!(logits(0.0), logits(1.0));
        let inf = m.infer(doc).unwrap();
        assert!((inf.domain.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((inf.sentiment.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn artifact_round_trip() {
        let m = model(Variant::TdanF);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p, "abc").unwrap();
        let (back, hash) = TdanModel::load(&p).unwrap();
        assert_eq!(hash, "abc");
        let doc = DocumentInput {
            tokens: &[4, 9],
            specific: &[SPECIFIC_ID],
        };
        assert_eq!(m.infer(doc).unwrap(), back.infer(doc).unwrap());
    }

    #[test]
    fn variant_names() {
        for v in [Variant::Tdan, Variant::TdanF, Variant::TdanMinus] {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{v}\""));
        }
        assert!("tdan+".parse::<Variant>().is_err());
    }
}
