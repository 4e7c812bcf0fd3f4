//! Modality encoders: a time-preserving 1D-CNN and a dense map from the
//! time axis to a fixed number of tokens, shared across feature channels.

use rand::Rng;

use super::config::BackboneConfig;
use crate::error::{Error, Result};
use crate::optim::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    convs: Vec<(ParamId, ParamId)>,
    reduce_w: ParamId,
    reduce_b: ParamId,
}

/// Outputs of every stage of one backbone pass.
#[derive(Clone, Debug)]
pub struct BackboneTrace {
    /// Post-ReLU activations of each convolution, `[T_max, C_out]`.
    pub conv: Vec<Var>,
    /// `[token_count, feature_dim]`
    pub tokens: Var,
}

impl Backbone {
    /// Registers parameters under `prefix`. Convolution kernels and the time
    /// map are uniform in `±1/sqrt(fan_in)`; all biases start at zero.
    pub fn new<T: Scalar, R: Rng + ?Sized>(prefix: &str, cfg: BackboneConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        cfg.validate(prefix)?;
        let mut c_in = cfg.input_channels;
        let mut convs = Vec::with_capacity(cfg.conv_layers.len());
        for (i, &(c_out, k)) in cfg.conv_layers.iter().enumerate() {
            let bound = 1.0 / ((c_in * k) as f64).sqrt();
            let w = store.add(format!("{prefix}.conv{i}.w"), Tensor::uniform(&[c_out, c_in, k], bound, rng));
            let b = store.add(format!("{prefix}.conv{i}.b"), Tensor::zeros(&[c_out]));
            convs.push((w, b));
            c_in = c_out;
        }
        let bound = 1.0 / (cfg.input_time_max as f64).sqrt();
        let reduce_w = store.add(format!("{prefix}.reduce.w"), Tensor::uniform(&[cfg.token_count, cfg.input_time_max], bound, rng));
        let reduce_b = store.add(format!("{prefix}.reduce.b"), Tensor::zeros(&[cfg.token_count]));
        Ok(Self { cfg, convs, reduce_w, reduce_b })
    }

    /// `[T_max, C_in] -> [token_count, feature_dim]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, pv: &[Var], x: Var) -> Result<Var> {
        Ok(self.forward_traced(tape, pv, x)?.tokens)
    }

    pub fn forward_traced<T: Scalar>(&self, tape: &mut Tape<T>, pv: &[Var], x: Var) -> Result<BackboneTrace> {
        let expect = [self.cfg.input_time_max, self.cfg.input_channels];
        if tape.shape(x) != expect {
            return Err(Error::Dimension { op: "backbone input", lhs: tape.shape(x).to_vec(), rhs: expect.to_vec() });
        }
        let t_len = self.cfg.input_time_max;
        let mut h = x;
        let mut conv = Vec::with_capacity(self.convs.len());
        for &(w, b) in &self.convs {
            let y = tape.conv1d(h, pv[w.0], pv[b.0])?;
            if tape.shape(y)[0] != t_len {
                return Err(Error::Contract(format!("convolution changed time length {t_len} -> {}", tape.shape(y)[0])));
            }
            h = tape.relu(y);
            conv.push(h);
        }
        let reduced = tape.matmul(pv[self.reduce_w.0], h)?;
        let tokens = tape.add_col(reduced, pv[self.reduce_b.0])?;
        Ok(BackboneTrace { conv, tokens })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> BackboneConfig {
        BackboneConfig { conv_layers: vec![(4, 3), (6, 5)], feature_dim: 6, token_count: 3, input_time_max: 11, input_channels: 2 }
    }

    fn build() -> (Backbone, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let bb = Backbone::new("b", small(), &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        (bb, store)
    }

    fn run(bb: &Backbone, store: &ParamStore<f64>, x: Tensor<f64>) -> Result<Tensor<f64>> {
        let mut tape = Tape::inference();
        let pv = store.register(&mut tape);
        let xv = tape.constant(x);
        let y = bb.forward(&mut tape, &pv, xv)?;
        Ok(tape.value(y).clone())
    }

    #[test]
    fn zero_input_gives_one_repeated_value() {
        let (bb, mut store) = build();
        let id = store.find("b.reduce.b").unwrap();
        *store.get_mut(id) = Tensor::full(&[3], 0.25);
        let y = run(&bb, &store, Tensor::zeros(&[11, 2])).unwrap();
        assert_eq!(y.shape(), &[3, 6]);
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn output_responds_to_an_input_frame() {
        let (bb, store) = build();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::uniform(&[11, 2], 1.0, &mut rng);
        let mut x2 = x.clone();
        x2.data_mut()[8] *= 2.0;
        x2.data_mut()[9] *= 2.0;
        let (a, b) = (run(&bb, &store, x).unwrap(), run(&bb, &store, x2).unwrap());
        assert!(a.max_abs_diff(&b).unwrap() > 1e-9);
    }

    #[test]
    fn wrong_width_is_a_dimension_error() {
        let (bb, store) = build();
        assert_eq!(run(&bb, &store, Tensor::zeros(&[11, 3])).unwrap_err().category(), "dimension");
        assert_eq!(run(&bb, &store, Tensor::zeros(&[10, 2])).unwrap_err().category(), "dimension");
    }

    #[test]
    fn every_stage_preserves_time() {
        let (bb, store) = build();
        let mut tape = Tape::<f64>::inference();
        let pv = store.register(&mut tape);
        let x = tape.constant(Tensor::ones(&[11, 2]));
        let trace = bb.forward_traced(&mut tape, &pv, x).unwrap();
        assert_eq!(tape.shape(trace.conv[0]), &[11, 4]);
        assert_eq!(tape.shape(trace.conv[1]), &[11, 6]);
    }

    #[test]
    fn time_map_is_shared_across_channels() {
        // Permuting feature channels before the time map permutes its output.
        let (bb, store) = build();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Tensor::<f64>::uniform(&[11, 6], 1.0, &mut rng);
        let perm = [3, 0, 5, 1, 4, 2];
        let mut hp = Tensor::<f64>::zeros(&[11, 6]);
        for t in 0..11 {
            for (j, &p) in perm.iter().enumerate() {
                hp.data_mut()[t * 6 + j] = h.at2(t, p);
            }
        }
        let map = |h: Tensor<f64>| {
            let mut tape = Tape::inference();
            let pv = store.register(&mut tape);
            let hv = tape.constant(h);
            let r = tape.matmul(pv[bb.reduce_w.0], hv).unwrap();
            let y = tape.add_col(r, pv[bb.reduce_b.0]).unwrap();
            tape.value(y).clone()
        };
        let (y, yp) = (map(h), map(hp));
        for tok in 0..3 {
            for (j, &p) in perm.iter().enumerate() {
                assert_eq!(yp.at2(tok, j), y.at2(tok, p));
            }
        }
    }
}
