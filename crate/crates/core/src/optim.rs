//! Named parameter storage and the Adam optimizer.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a differentiable leaf; the returned vector
    /// is indexed by [`ParamId`].
    pub fn register(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone().with_grad())).collect()
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = |t: &Tensor<T>| vec![T::zero(); t.len()];
        Self {
            cfg,
            step: 0,
            m: params.tensors.iter().map(zeros).collect(),
            v: params.tensors.iter().map(zeros).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` is the gradient of parameter `i`.
    ///
    /// Fails without touching any parameter if a gradient is non-finite or
    /// its shape disagrees with the parameter.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer has {} slots, store has {} parameters, got {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.tensors[i].shape() {
                return Err(Error::dim("adam_step", params.tensors[i].shape(), g.shape()));
            }
            if let Some(pos) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for parameter '{}' at index {pos}",
                    params.names[i]
                )));
            }
        }
        self.step += 1;
        let (b1, b2) = (T::lit(self.cfg.beta1), T::lit(self.cfg.beta2));
        let lr = T::lit(self.cfg.lr);
        let eps = T::lit(self.cfg.eps);
        let bc1 = T::one() - b1.powi(self.step as i32);
        let bc2 = T::one() - b2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params.tensors[i].data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
        let before = store.clone();
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..5 {
            adam.step(&mut store, &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(store, before);
    }

    #[test]
    fn one_step_descends_on_a_parabola() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", Tensor::scalar(1.0));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let mut tape = Tape::new();
        let vars = store.register(&mut tape);
        let sq = tape.mul(vars[0], vars[0]).unwrap();
        let loss = tape.sum(sq);
        let mut g = tape.backward(loss).unwrap();
        adam.step(&mut store, &[g.take(vars[0]).unwrap()]).unwrap();
        let x = store.get(id).data()[0];
        assert!(x * x < 1.0);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut store = ParamStore::<f64>::new();
        store.add("fusion.head.w", Tensor::zeros(&[2]));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let err = adam.step(&mut store, &[Tensor::from_f64(&[2], &[0.0, f64::NAN]).unwrap()]).unwrap_err();
        assert_eq!(err.category(), "numeric");
        assert!(err.to_string().contains("fusion.head.w"));
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut store = ParamStore::<f64>::new();
            store.add("w", Tensor::randn(&[4, 3], &mut rng));
            let target: Tensor<f64> = Tensor::randn(&[4, 3], &mut rng);
            let mut adam = Adam::new(AdamConfig { lr: 1e-2, ..Default::default() }, &store);
            for _ in 0..10 {
                let mut tape = Tape::new();
                let v = store.register(&mut tape);
                let t = tape.constant(target.clone());
                let neg = tape.scale(t, -1.0);
                let d = tape.add(v[0], neg).unwrap();
                let sq = tape.mul(d, d).unwrap();
                let loss = tape.sum(sq);
                let mut g = tape.backward(loss).unwrap();
                adam.step(&mut store, &[g.take(v[0]).unwrap()]).unwrap();
            }
            store
        };
        let a = run();
        let b = run();
        let bits = |s: &ParamStore<f64>| s.iter().flat_map(|(_, t)| t.data().iter().map(|x| x.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
