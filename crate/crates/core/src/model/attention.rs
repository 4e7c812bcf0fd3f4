//! Multi-head cross-attention: `softmax(Q K^T / sqrt(d_k)) V` per head.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::optim::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Glorot-uniform `[fan_in, fan_out]` matrix.
pub(crate) fn glorot<T: Scalar, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    Tensor::uniform(&[fan_in, fan_out], (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub dim: usize,
    pub n_heads: usize,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

/// Result of one attention call.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// `[Lq, dim]`
    pub out: Var,
    /// Scaled pre-softmax scores per head, `[Lq, Lkv]`.
    pub scores: Vec<Var>,
    /// Attention weights per head (before dropout), `[Lq, Lkv]`.
    pub weights: Vec<Var>,
}

/// One attention head.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    pub out: Var,
    pub scores: Var,
    pub weights: Var,
}

/// `softmax(q k^T / sqrt(d_k)) v` for `q` `[Lq, d_k]`, `k` `[Lkv, d_k]` and
/// `v` `[Lkv, d_v]`. Dropout on the weights applies only when `rng` is given.
pub fn cross_attention<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    dropout: f64,
    rng: Option<&mut (dyn RngCore + 'static)>,
) -> Result<HeadOutput> {
    let dk = tape.shape(q)[1];
    let kt = tape.transpose(k)?;
    let raw = tape.matmul(q, kt)?;
    let scores = tape.scale(raw, T::lit(1.0 / (dk as f64).sqrt()));
    let weights = tape.softmax_lastdim(scores)?;
    let used = match rng {
        Some(r) => tape.dropout(weights, dropout, r)?,
        None => weights,
    };
    let out = tape.matmul(used, v)?;
    Ok(HeadOutput { out, scores, weights })
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(prefix: &str, dim: usize, n_heads: usize, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        if n_heads == 0 || dim % n_heads != 0 {
            return Err(Error::Config(format!("dim {dim} not divisible by {n_heads} heads")));
        }
        let mut mat = |name: &str, rng: &mut R| store.add(format!("{prefix}.{name}"), glorot(dim, dim, rng));
        let (wq, wk, wv, wo) = (mat("wq", rng), mat("wk", rng), mat("wv", rng), mat("wo", rng));
        let mut bias = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::zeros(&[dim]));
        let (bq, bk, bv, bo) = (bias("bq"), bias("bk"), bias("bv"), bias("bo"));
        Ok(Self { dim, n_heads, wq, bq, wk, bk, wv, bv, wo, bo })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }

    /// Queries from `q_in` `[Lq, dim]`, keys and values from `kv_in`
    /// `[Lkv, dim]`. Dropout on the attention weights applies only when `rng`
    /// is given.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        pv: &[Var],
        q_in: Var,
        kv_in: Var,
        dropout: f64,
        mut rng: Option<&mut (dyn RngCore + 'static)>,
    ) -> Result<AttentionOutput> {
        for v in [q_in, kv_in] {
            let s = tape.shape(v);
            if s.len() != 2 || s[1] != self.dim {
                return Err(Error::Dimension { op: "cross_attention", lhs: s.to_vec(), rhs: vec![0, self.dim] });
            }
        }
        let q = tape.dense(q_in, pv[self.wq.0], pv[self.bq.0])?;
        let k = tape.dense(kv_in, pv[self.wk.0], pv[self.bk.0])?;
        let v = tape.dense(kv_in, pv[self.wv.0], pv[self.bv.0])?;
        let dk = self.head_dim();
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut scores = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (qh, kh, vh) = if self.n_heads == 1 {
                (q, k, v)
            } else {
                (tape.slice_cols(q, h * dk, dk)?, tape.slice_cols(k, h * dk, dk)?, tape.slice_cols(v, h * dk, dk)?)
            };
            let head = cross_attention(tape, qh, kh, vh, dropout, rng.as_deref_mut())?;
            heads.push(head.out);
            scores.push(head.scores);
            weights.push(head.weights);
        }
        let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        let out = tape.dense(cat, pv[self.wo.0], pv[self.bo.0])?;
        Ok(AttentionOutput { out, scores, weights })
    }
}
