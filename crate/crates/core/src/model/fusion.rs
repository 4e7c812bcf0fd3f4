//! Pre-norm cross-attention transformer with a mean-pool readout.
//!
//! ```text
//! h  = q_tokens (+ PE)            kv = kv_tokens (+ PE), fixed
//! per layer:  h += MHA(LN1(h), kv)
//!             h += W2 relu(W1 LN2(h))
//! logits = W_head mean_rows(LN_f(h)) + b_head          -> [1, 2]
//! ```

use rand::{Rng, RngCore};

use super::attention::{glorot, AttentionOutput, MultiHeadAttention};
use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::optim::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Number of logits: valence, arousal.
pub const N_OUTPUTS: usize = 2;

/// `pe[p, 2i] = sin(p / 10000^(2i/d))`, `pe[p, 2i+1] = cos(...)`.
pub fn sinusoidal_encoding<T: Scalar>(len: usize, dim: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * dim);
    for p in 0..len {
        for j in 0..dim {
            let freq = 10000f64.powf(-((j - j % 2) as f64) / dim as f64);
            let angle = p as f64 * freq;
            data.push(T::lit(if j % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(&[len, dim], data).expect("len * dim values")
}

#[derive(Clone, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn new<T: Scalar>(name: String, dim: usize, store: &mut ParamStore<T>) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[dim])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    fn apply<T: Scalar>(&self, tape: &mut Tape<T>, pv: &[Var], x: Var) -> Result<Var> {
        tape.layer_norm(x, pv[self.gamma.0], pv[self.beta.0])
    }
}

#[derive(Clone, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new<T: Scalar, R: Rng + ?Sized>(name: String, fan_in: usize, fan_out: usize, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        Self {
            w: store.add(format!("{name}.w"), glorot(fan_in, fan_out, rng)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[fan_out])),
        }
    }

    fn apply<T: Scalar>(&self, tape: &mut Tape<T>, pv: &[Var], x: Var) -> Result<Var> {
        tape.dense(x, pv[self.w.0], pv[self.b.0])
    }
}

#[derive(Clone, Debug)]
struct FusionLayer {
    ln1: Norm,
    attn: MultiHeadAttention,
    ln2: Norm,
    ffn1: Linear,
    ffn2: Linear,
}

#[derive(Clone, Debug)]
pub struct FusionTransformer {
    pub cfg: ModelConfig,
    layers: Vec<FusionLayer>,
    final_ln: Norm,
    head: Linear,
}

/// Logits plus the attention record of every layer.
#[derive(Clone, Debug)]
pub struct FusionOutput {
    /// `[1, 2]`
    pub logits: Var,
    pub attention: Vec<AttentionOutput>,
}

impl FusionTransformer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(prefix: &str, cfg: ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("{prefix}.layer{l}");
                Ok(FusionLayer {
                    ln1: Norm::new(format!("{p}.ln1"), d, store),
                    attn: MultiHeadAttention::new(&format!("{p}.attn"), d, cfg.n_heads, store, rng)?,
                    ln2: Norm::new(format!("{p}.ln2"), d, store),
                    ffn1: Linear::new(format!("{p}.ffn1"), d, cfg.ffn_dim, store, rng),
                    ffn2: Linear::new(format!("{p}.ffn2"), cfg.ffn_dim, d, store, rng),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let final_ln = Norm::new(format!("{prefix}.final_ln"), d, store);
        let head = Linear::new(format!("{prefix}.head"), d, N_OUTPUTS, store, rng);
        Ok(Self { cfg, layers, final_ln, head })
    }

    /// Attention module of layer `l`.
    pub fn attention(&self, l: usize) -> &MultiHeadAttention {
        &self.layers[l].attn
    }

    /// Parameter ids of the readout `(w [dim, 2], b [2])`.
    pub fn head_params(&self) -> (ParamId, ParamId) {
        (self.head.w, self.head.b)
    }

    /// `q_tokens` `[Lq, dim]` query the fixed `kv_tokens` `[Lkv, dim]`.
    /// Dropout is active only when `rng` is given.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        pv: &[Var],
        q_tokens: Var,
        kv_tokens: Var,
        mut rng: Option<&mut (dyn RngCore + 'static)>,
    ) -> Result<FusionOutput> {
        let d = self.cfg.model_dim;
        let add_pe = |tape: &mut Tape<T>, x: Var| -> Result<Var> {
            let s = tape.shape(x).to_vec();
            if s.len() != 2 || s[1] != d {
                return Err(Error::Dimension { op: "fusion input", lhs: s, rhs: vec![0, d] });
            }
            let pe = tape.constant(sinusoidal_encoding(s[0], d));
            tape.add(x, pe)
        };
        let (mut h, kv) = if self.cfg.use_positional_encoding {
            (add_pe(tape, q_tokens)?, add_pe(tape, kv_tokens)?)
        } else {
            (q_tokens, kv_tokens)
        };
        let p = self.cfg.dropout;
        let mut attention = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let n1 = layer.ln1.apply(tape, pv, h)?;
            let a = layer.attn.forward(tape, pv, n1, kv, p, rng.as_deref_mut())?;
            h = tape.add(h, a.out)?;
            attention.push(a);
            let n2 = layer.ln2.apply(tape, pv, h)?;
            let f = layer.ffn1.apply(tape, pv, n2)?;
            let f = tape.relu(f);
            let mut f = layer.ffn2.apply(tape, pv, f)?;
            if let Some(r) = rng.as_deref_mut() {
                f = tape.dropout(f, p, r)?;
            }
            h = tape.add(h, f)?;
            if !tape.value(h).all_finite() {
                return Err(Error::Numeric(format!("non-finite activations after fusion layer {l}")));
            }
        }
        let n = self.final_ln.apply(tape, pv, h)?;
        let pooled = tape.mean_rows(n)?;
        let logits = self.head.apply(tape, pv, pooled)?;
        Ok(FusionOutput { logits, attention })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(pe: bool) -> ModelConfig {
        ModelConfig { n_heads: 2, n_layers: 2, model_dim: 4, ffn_dim: 6, token_count: 5, use_positional_encoding: pe, dropout: 0.1 }
    }

    fn logits(f: &FusionTransformer, store: &ParamStore<f64>, q: &Tensor<f64>, kv: &Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::inference();
        let pv = store.register(&mut tape);
        let (qv, kvv) = (tape.constant(q.clone()), tape.constant(kv.clone()));
        let out = f.forward(&mut tape, &pv, qv, kvv, None).unwrap();
        tape.value(out.logits).clone()
    }

    #[test]
    fn encoding_values() {
        let pe = sinusoidal_encoding::<f64>(3, 4);
        assert_eq!(pe.at2(0, 0), 0.0);
        assert_eq!(pe.at2(0, 1), 1.0);
        assert!((pe.at2(2, 0) - 2f64.sin()).abs() < 1e-15);
        assert!((pe.at2(2, 2) - (2.0 / 100.0f64).sin()).abs() < 1e-15);
        assert!((pe.at2(2, 3) - (2.0 / 100.0f64).cos()).abs() < 1e-15);
    }

    #[test]
    fn zeroed_head_returns_its_bias() {
        let mut store = ParamStore::new();
        let f = FusionTransformer::new("f", cfg(true), &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (w, b) = f.head_params();
        *store.get_mut(w) = Tensor::zeros(&[4, 2]);
        *store.get_mut(b) = Tensor::from_f64(&[2], &[0.3, -1.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..3 {
            let y = logits(&f, &store, &Tensor::uniform(&[5, 4], 2.0, &mut rng), &Tensor::uniform(&[5, 4], 2.0, &mut rng));
            assert_eq!(y.data(), &[0.3, -1.2]);
        }
    }

    #[test]
    fn key_permutation_invariance_without_encoding() {
        let mut store = ParamStore::new();
        let f = FusionTransformer::new("f", cfg(false), &mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = Tensor::uniform(&[5, 4], 1.0, &mut rng);
        let kv = Tensor::<f64>::uniform(&[5, 4], 1.0, &mut rng);
        let perm = [2, 4, 0, 1, 3];
        let data: Vec<f64> = perm.iter().flat_map(|&r| kv.data()[r * 4..r * 4 + 4].to_vec()).collect();
        let kvp = Tensor::new(&[5, 4], data).unwrap();
        let (a, b) = (logits(&f, &store, &q, &kv), logits(&f, &store, &q, &kvp));
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-12);
    }

    #[test]
    fn encoding_breaks_permutation_invariance() {
        let mut store = ParamStore::new();
        let f = FusionTransformer::new("f", cfg(true), &mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = Tensor::uniform(&[5, 4], 1.0, &mut rng);
        let kv = Tensor::<f64>::uniform(&[5, 4], 1.0, &mut rng);
        let mut data = kv.data().to_vec();
        data.rotate_left(4);
        let kvp = Tensor::new(&[5, 4], data).unwrap();
        assert!(logits(&f, &store, &q, &kv).max_abs_diff(&logits(&f, &store, &q, &kvp)).unwrap() > 1e-9);
    }

    #[test]
    fn dropout_only_with_rng() {
        let mut store = ParamStore::new();
        let f = FusionTransformer::new("f", cfg(true), &mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = Tensor::<f64>::uniform(&[5, 4], 1.0, &mut rng);
        let kv = Tensor::<f64>::uniform(&[5, 4], 1.0, &mut rng);
        let base = logits(&f, &store, &q, &kv);
        assert_eq!(base, logits(&f, &store, &q, &kv));
        let mut tape = Tape::new();
        let pv = store.register(&mut tape);
        let (qv, kvv) = (tape.constant(q), tape.constant(kv));
        let mut drop_rng = ChaCha8Rng::seed_from_u64(9);
        let out = f.forward(&mut tape, &pv, qv, kvv, Some(&mut drop_rng)).unwrap();
        assert!(tape.value(out.logits).max_abs_diff(&base).unwrap() > 0.0);
    }
}
