//! Central finite-difference checks of tape gradients.
//!
//! The numeric side perturbs raw input buffers and re-runs the forward
//! closure on fresh tapes; it shares no code with the reverse sweep.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::data::{PHYSIO_WIDTH, VIDEO_WIDTH};
use crate::model::{Mvp, MvpConfig};
use crate::tensor::{Tape, Tensor, Var};

/// Outcome of a gradient check.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_rel_err: f64,
    /// `(input name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport) {
        self.coordinates += other.coordinates;
        if other.max_rel_err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
            if other.worst.is_some() && other.max_rel_err >= self.max_rel_err {
                self.worst = other.worst;
            }
        }
    }
}

/// Options for [`check_gradients`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates sampled per input; `None` checks every coordinate.
    pub samples_per_input: Option<usize>,
    /// Denominator floor so vanishing gradients compare absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, samples_per_input: None, floor: 1e-6 }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar produced by `f` with
/// central differences over the named `inputs`.
pub fn check_gradients<F, R>(
    inputs: &[(&str, Tensor<f64>)],
    opts: GradCheckOptions,
    rng: &mut R,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.leaf(t.clone().with_grad())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let root = f(&mut tape, &vars)?;
        Ok(tape.value(root).data()[0])
    };

    let mut values: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut report = GradCheckReport::default();
    for (slot, ((name, input), var)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = grads
            .get(*var)
            .ok_or_else(|| Error::Contract(format!("no gradient recorded for input {name}")))?
            .clone();
        let coords: Vec<usize> = match opts.samples_per_input {
            Some(k) if k < input.len() => sample(rng, input.len(), k).into_vec(),
            _ => (0..input.len()).collect(),
        };
        for idx in coords {
            let orig = values[slot].data()[idx];
            values[slot].data_mut()[idx] = orig + opts.eps;
            let plus = eval(&values)?;
            values[slot].data_mut()[idx] = orig - opts.eps;
            let minus = eval(&values)?;
            values[slot].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.data()[idx];
            let err = relative_error(a, numeric, opts.floor);
            report.coordinates += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((name.to_string(), idx, a, numeric));
            }
        }
    }
    Ok(report)
}

type Forward = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn rnd(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, rng)
}

/// Checks every differentiable tape op on random inputs. Each op output is
/// reduced by a fixed random weighting so every element reaches the root.
pub fn op_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GradCheckOptions::default();
    let weights = rnd(&[64], &mut rng).into_data();
    let wsum = move |t: &mut Tape<f64>, v: Var| -> Result<Var> {
        let n = t.value(v).len();
        let shape = t.shape(v).to_vec();
        let w = t.constant(Tensor::new(&shape, weights[..n].to_vec())?);
        let p = t.mul(v, w)?;
        Ok(t.sum(p))
    };
    let cases: Vec<(&'static str, Vec<(&str, Tensor<f64>)>, Forward)> = vec![
        ("transpose", vec![("x", rnd(&[3, 2], &mut rng))], Box::new(|t, v| t.transpose(v[0]))),
        (
            "add",
            vec![("a", rnd(&[2, 3], &mut rng)), ("b", rnd(&[2, 3], &mut rng))],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        (
            "add_row",
            vec![("x", rnd(&[3, 4], &mut rng)), ("b", rnd(&[4], &mut rng))],
            Box::new(|t, v| t.add_row(v[0], v[1])),
        ),
        (
            "add_col",
            vec![("x", rnd(&[3, 4], &mut rng)), ("b", rnd(&[3], &mut rng))],
            Box::new(|t, v| t.add_col(v[0], v[1])),
        ),
        (
            "mul",
            vec![("a", rnd(&[2, 3], &mut rng)), ("b", rnd(&[2, 3], &mut rng))],
            Box::new(|t, v| t.mul(v[0], v[1])),
        ),
        ("scale", vec![("x", rnd(&[5], &mut rng))], Box::new(|t, v| Ok(t.scale(v[0], -1.7)))),
        ("relu", vec![("x", rnd(&[4, 4], &mut rng))], Box::new(|t, v| Ok(t.relu(v[0])))),
        ("softmax", vec![("x", rnd(&[3, 5], &mut rng))], Box::new(|t, v| t.softmax_lastdim(v[0]))),
        (
            "layer_norm",
            vec![("x", rnd(&[3, 6], &mut rng)), ("g", rnd(&[6], &mut rng)), ("b", rnd(&[6], &mut rng))],
            Box::new(|t, v| t.layer_norm(v[0], v[1], v[2])),
        ),
        (
            "conv1d",
            vec![("x", rnd(&[7, 2], &mut rng)), ("w", rnd(&[3, 2, 3], &mut rng)), ("b", rnd(&[3], &mut rng))],
            Box::new(|t, v| t.conv1d(v[0], v[1], v[2])),
        ),
        (
            "dense",
            vec![("x", rnd(&[4, 3], &mut rng)), ("w", rnd(&[3, 2], &mut rng)), ("b", rnd(&[2], &mut rng))],
            Box::new(|t, v| t.dense(v[0], v[1], v[2])),
        ),
        ("slice_cols", vec![("x", rnd(&[3, 5], &mut rng))], Box::new(|t, v| t.slice_cols(v[0], 1, 3))),
        (
            "concat_cols",
            vec![("a", rnd(&[3, 2], &mut rng)), ("b", rnd(&[3, 1], &mut rng))],
            Box::new(|t, v| t.concat_cols(&[v[0], v[1], v[0]])),
        ),
        (
            "concat_rows",
            vec![("a", rnd(&[1, 2], &mut rng)), ("b", rnd(&[2, 2], &mut rng))],
            Box::new(|t, v| t.concat_rows(&[v[0], v[1]])),
        ),
        ("mean_rows", vec![("x", rnd(&[4, 3], &mut rng))], Box::new(|t, v| t.mean_rows(v[0]))),
        ("reshape", vec![("x", rnd(&[2, 6], &mut rng))], Box::new(|t, v| t.reshape(v[0], &[3, 4]))),
    ];
    let mut out = Vec::with_capacity(cases.len() + 2);
    for (name, inputs, f) in cases {
        let r = check_gradients(&inputs, opts, &mut rng, |t, v| {
            let y = f(t, v)?;
            wsum(t, y)
        })?;
        out.push((name, r));
    }
    let a = rnd(&[3, 4], &mut rng);
    let b = rnd(&[4, 2], &mut rng);
    out.push(("matmul", check_gradients(&[("a", a), ("b", b)], opts, &mut rng, |t, v| {
        let c = t.matmul(v[0], v[1])?;
        wsum(t, c)
    })?));
    let targets = Tensor::from_f64(&[3, 2], &[1., 0., 0., 0., 1., 1.])?;
    out.push(("bce_with_logits", check_gradients(&[("z", rnd(&[3, 2], &mut rng))], opts, &mut rng, |t, v| {
        t.bce_with_logits(v[0], &targets)
    })?));
    Ok(out)
}

/// Gradient check of the whole tiny network (both backbones, one fusion
/// layer, BCE loss) over every parameter coordinate.
pub fn tiny_model_check(seed: u64) -> Result<GradCheckReport> {
    const TV: usize = 9;
    const TP: usize = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Mvp::<f64>::new(MvpConfig::tiny(TV, TP), seed)?;
    let video = rnd(&[TV, VIDEO_WIDTH], &mut rng);
    let physio = rnd(&[TP, PHYSIO_WIDTH], &mut rng);
    let target = Tensor::from_f64(&[1, 2], &[1.0, 0.0])?;
    // Zero-initialized biases would leave every ReLU kink at the origin of
    // the bias axis; start from small random values instead.
    let inputs: Vec<(&str, Tensor<f64>)> = model
        .params
        .iter()
        .map(|(name, p)| {
            let t = if p.data().iter().all(|&x| x == 0.0) { Tensor::randn(p.shape(), &mut rng).map(|x| 0.1 * x) } else { p.clone() };
            (name, t)
        })
        .collect();
    check_gradients(&inputs, GradCheckOptions::default(), &mut rng, |t, pv| {
        let v = t.constant(video.clone());
        let p = t.constant(physio.clone());
        let out = model.forward_trial(t, pv, v, p, None)?;
        t.bce_with_logits(out.logits, &target)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_matches_central_differences() {
        for (name, r) in op_suite(2).unwrap() {
            assert!(r.coordinates > 0, "{name}");
            assert!(r.max_rel_err <= 1e-4, "{name}: {r:?}");
        }
    }

    #[test]
    fn tiny_model_matches_central_differences() {
        let r = tiny_model_check(3).unwrap();
        assert!(r.max_rel_err <= 1e-3, "{r:?}");
    }
}
