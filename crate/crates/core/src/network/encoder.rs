//! Post-norm transformer encoder layers and sinusoidal positions.

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};

use super::Result;

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// `PE[pos][2l] = sin(pos / 10000^(2l/d_h))`, `PE[pos][2l+1] = cos(...)`.
///
/// ```
/// let pe = tdan_core::network::positional_encoding(4, 6);
/// assert_eq!(pe.row_slice(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
/// assert!((pe.get(1, 0) - 1f64.sin()).abs() < 1e-12);
/// ```
pub fn positional_encoding(d_l: usize, d_h: usize) -> Tensor {
    let mut data = vec![0.0; d_l * d_h];
    for pos in 0..d_l {
        for l in 0..d_h.div_ceil(2) {
            let angle = pos as f64 / 10000f64.powf(2.0 * l as f64 / d_h as f64);
            data[pos * d_h + 2 * l] = angle.sin();
            if 2 * l + 1 < d_h {
                data[pos * d_h + 2 * l + 1] = angle.cos();
            }
        }
    }
    Tensor::matrix(d_l, d_h, data).expect("sized from dims")
}

/// Learnable pieces of one encoder layer. Weights are `(out, in)`.
#[derive(Debug, Clone)]
pub(crate) struct EncoderLayer {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

impl EncoderLayer {
    pub(crate) fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_h: usize,
        ffn: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut w = |name: &str, r: usize, c: usize, rng: &mut R| {
            store.xavier(format!("{prefix}.{name}"), r, c, rng)
        };
        let wq = w("wq", d_h, d_h, rng)?;
        let wk = w("wk", d_h, d_h, rng)?;
        let wv = w("wv", d_h, d_h, rng)?;
        let wo = w("wo", d_h, d_h, rng)?;
        let ff1_w = w("ff1.w", ffn, d_h, rng)?;
        let ff2_w = w("ff2.w", d_h, ffn, rng)?;
        let mut fill = |name: &str, n: usize, v: f64| {
            store.insert(format!("{prefix}.{name}"), Tensor::filled(1, n, v))
        };
        Ok(Self {
            wq,
            bq: fill("bq", d_h, 0.0)?,
            wk,
            bk: fill("bk", d_h, 0.0)?,
            wv,
            bv: fill("bv", d_h, 0.0)?,
            wo,
            bo: fill("bo", d_h, 0.0)?,
            ln1_g: fill("ln1.gamma", d_h, 1.0)?,
            ln1_b: fill("ln1.beta", d_h, 0.0)?,
            ff1_w,
            ff1_b: fill("ff1.b", ffn, 0.0)?,
            ff2_w,
            ff2_b: fill("ff2.b", d_h, 0.0)?,
            ln2_g: fill("ln2.gamma", d_h, 1.0)?,
            ln2_b: fill("ln2.beta", d_h, 0.0)?,
        })
    }

    /// One layer over `x` (`n x d_h`). `key_mask` is an `n x n` additive
    /// mask (0 or `-inf` per key column) or `None` when every key is real.
    /// Returns the output and the post-softmax attention of each head.
    pub(crate) fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        key_mask: Option<Var>,
        heads: usize,
        dropout: f64,
    ) -> Result<(Var, Vec<Var>)> {
        let d_h = g.value(x).cols();
        let d_k = d_h / heads;
        let q = linear(g, x, self.wq, self.bq)?;
        let k = linear(g, x, self.wk, self.bk)?;
        let v = linear(g, x, self.wv, self.bv)?;
        let mut outs = Vec::with_capacity(heads);
        let mut attns = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * d_k, d_k)?;
            let kh = g.slice_cols(k, h * d_k, d_k)?;
            let vh = g.slice_cols(v, h * d_k, d_k)?;
            let raw = g.matmul_nt(qh, kh)?;
            let mut scores = g.scale(raw, 1.0 / (d_k as f64).sqrt());
            if let Some(mask) = key_mask {
                scores = g.add(scores, mask)?;
            }
            let attn = g.softmax(scores, 1)?;
            attns.push(attn);
            let dropped = g.dropout(attn, dropout)?;
            outs.push(g.matmul(dropped, vh)?);
        }
        let joined = g.concat(&outs, 1)?;
        let projected = linear(g, joined, self.wo, self.bo)?;
        let res1 = g.add(x, projected)?;
        let (g1, b1) = (g.param(self.ln1_g), g.param(self.ln1_b));
        let y = g.layer_norm(res1, g1, b1, LAYER_NORM_EPS)?;

        let hidden = linear(g, y, self.ff1_w, self.ff1_b)?;
        let hidden = g.relu(hidden);
        let ff = linear(g, hidden, self.ff2_w, self.ff2_b)?;
        let ff = g.dropout(ff, dropout)?;
        let res2 = g.add(y, ff)?;
        let (g2, b2) = (g.param(self.ln2_g), g.param(self.ln2_b));
        Ok((g.layer_norm(res2, g2, b2, LAYER_NORM_EPS)?, attns))
    }
}

/// `x * W^T + b` for `(out, in)` weights and a `1 x out` bias.
pub(crate) fn linear(g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let wv = g.param(w);
    let bv = g.param(b);
    let y = g.matmul_nt(x, wv)?;
    Ok(g.add_row(y, bv)?)
}
