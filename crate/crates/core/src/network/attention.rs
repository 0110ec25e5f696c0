//! Additive attention pooling with a learned query.

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};

use super::{NetworkError, Result};

/// `f(c_j, q) = w . tanh(W1 c_j + W2 q)`, `alpha = softmax(f)`,
/// `h = sum_j alpha_j c_j`. `q` and `w` are `1 x d_h` rows.
#[derive(Debug, Clone)]
pub struct MlpAttentionHead {
    pub q: ParamId,
    pub w: ParamId,
    pub w1: ParamId,
    pub w2: ParamId,
}

/// Pooled vector (`1 x d_h`) and attention weights (`n x 1`).
#[derive(Debug, Clone, Copy)]
pub struct Pooled {
    pub h: Var,
    pub alpha: Var,
}

impl MlpAttentionHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_h: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            q: store.xavier(format!("{prefix}.q"), 1, d_h, rng)?,
            w: store.xavier(format!("{prefix}.w"), 1, d_h, rng)?,
            w1: store.xavier(format!("{prefix}.w1"), d_h, d_h, rng)?,
            w2: store.xavier(format!("{prefix}.w2"), d_h, d_h, rng)?,
        })
    }

    /// Pools the rows of `context` (`n x d_h`). `valid[j] == false` excludes
    /// row `j`; at least one row must be valid.
    pub fn pool(&self, g: &mut Graph, context: Var, valid: &[bool]) -> Result<Pooled> {
        let n = g.value(context).rows();
        if valid.len() != n {
            return Err(NetworkError::InvalidInput(format!(
                "mask of {} entries for a context of {n} rows",
                valid.len()
            )));
        }
        if !valid.iter().any(|v| *v) {
            return Err(NetworkError::InvalidInput(
                "attention context is fully masked".into(),
            ));
        }
        let (q, w, w1, w2) = (
            g.param(self.q),
            g.param(self.w),
            g.param(self.w1),
            g.param(self.w2),
        );
        let keys = g.matmul_nt(context, w1)?;
        let query = g.matmul_nt(q, w2)?;
        let pre = g.add_row(keys, query)?;
        let act = g.tanh(pre)?;
        let mut scores = g.matmul_nt(act, w)?;
        if valid.iter().any(|v| !v) {
            let mask: Vec<f64> = valid
                .iter()
                .map(|&v| if v { 0.0 } else { f64::NEG_INFINITY })
                .collect();
            let mask = g.constant(Tensor::matrix(n, 1, mask)?);
            scores = g.add(scores, mask)?;
        }
        let alpha = g.softmax(scores, 0)?;
        let at = g.transpose(alpha);
        let h = g.matmul(at, context)?;
        Ok(Pooled { h, alpha })
    }
}
