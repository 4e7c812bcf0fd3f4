use mvp_core::model::{cross_attention, FusionMode, Mvp, MvpConfig};
use mvp_core::tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn conv_params(c_in: usize, layers: &[(usize, usize)]) -> usize {
    let mut c = c_in;
    let mut n = 0;
    for &(out, k) in layers {
        n += out * c * k + out;
        c = out;
    }
    n
}

#[test]
fn default_parameter_count() {
    let cfg = MvpConfig::full(2800, 19900);
    let d = cfg.model.model_dim;
    let f = cfg.model.ffn_dim;
    let tokens = cfg.model.token_count;
    let video = conv_params(42, &cfg.video.conv_layers) + tokens * 2800 + tokens;
    let physio = conv_params(2, &cfg.physio.conv_layers) + tokens * 19900 + tokens;
    let layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
    let fusion = cfg.model.n_layers * layer + 2 * d + (d * 2 + 2);
    let model = Mvp::<f32>::new(cfg, 0).unwrap();
    assert_eq!(model.params.numel(), video + physio + fusion);
    assert_eq!(model.params.numel(), 20_483_642);
}

#[test]
fn unimodal_parameter_counts_drop_the_other_backbone() {
    let mut cfg = MvpConfig::tiny(10, 30);
    let fused = Mvp::<f64>::new(cfg.clone(), 0).unwrap().params.numel();
    cfg.mode = FusionMode::VideoOnly;
    let video = Mvp::<f64>::new(cfg.clone(), 0).unwrap().params.numel();
    cfg.mode = FusionMode::PhysioOnly;
    let physio = Mvp::<f64>::new(cfg.clone(), 0).unwrap().params.numel();
    let backbone = |c_in: usize, t: usize| conv_params(c_in, &[(8, 3)]) + 4 * t + 4;
    assert_eq!(fused - video, backbone(2, 30));
    assert_eq!(fused - physio, backbone(42, 10));
}

fn scores(q: &[f64], k: &[f64], lq: usize, lk: usize, dk: usize) -> Vec<f64> {
    let mut tape = Tape::<f64>::inference();
    let qv = tape.constant(Tensor::new(&[lq, dk], q.to_vec()).unwrap());
    let kv = tape.constant(Tensor::new(&[lk, dk], k.to_vec()).unwrap());
    let vv = tape.constant(Tensor::ones(&[lk, 1]));
    let h = cross_attention(&mut tape, qv, kv, vv, 0.0, None).unwrap();
    tape.value(h.scores).data().to_vec()
}

/// Zero-extends each row so dot products are unchanged while d_k grows.
fn widen(x: &[f64], dk: usize, factor: usize) -> Vec<f64> {
    x.chunks_exact(dk).flat_map(|r| r.iter().copied().chain(std::iter::repeat(0.0).take(dk * (factor - 1)))).collect()
}

proptest! {
    // Equal raw dot products: scores scale with 1/sqrt(d_k), so doubling d_k
    // divides them by sqrt(2) and quadrupling halves them.
    #[test]
    fn score_scaling_with_head_width(seed in 0u64..1000, lq in 1usize..4, lk in 1usize..5, dk in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Tensor::<f64>::randn(&[lq, dk], &mut rng).into_data();
        let k = Tensor::<f64>::randn(&[lk, dk], &mut rng).into_data();
        let base = scores(&q, &k, lq, lk, dk);
        let doubled = scores(&widen(&q, dk, 2), &widen(&k, dk, 2), lq, lk, 2 * dk);
        let quadrupled = scores(&widen(&q, dk, 4), &widen(&k, dk, 4), lq, lk, 4 * dk);
        for i in 0..base.len() {
            prop_assert!((doubled[i] - base[i] / 2f64.sqrt()).abs() <= 1e-12 * (1.0 + base[i].abs()));
            prop_assert!((quadrupled[i] - base[i] / 2.0).abs() <= 1e-12 * (1.0 + base[i].abs()));
        }
    }

    #[test]
    fn conv1d_matches_direct_sum(seed in 0u64..1000, t in 1usize..12, c_in in 1usize..4, c_out in 1usize..4, half in 0usize..3) {
        let k = 2 * half + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::randn(&[t, c_in], &mut rng);
        let w = Tensor::<f64>::randn(&[c_out, c_in, k], &mut rng);
        let b = Tensor::<f64>::randn(&[c_out], &mut rng);
        let mut tape = Tape::inference();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = tape.conv1d(xv, wv, bv).unwrap();
        let y = tape.value(y);
        prop_assert_eq!(y.shape(), &[t, c_out]);
        for ti in 0..t {
            for co in 0..c_out {
                let mut s = b.data()[co];
                for j in 0..k {
                    let src = ti as isize + j as isize - half as isize;
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    for ci in 0..c_in {
                        s += x.at2(src as usize, ci) * w.data()[(co * c_in + ci) * k + j];
                    }
                }
                prop_assert!((y.at2(ti, co) - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_are_distributions_and_shift_invariant(seed in 0u64..1000, m in 1usize..5, n in 1usize..9, shift in -50.0f64..50.0, scale in 0.01f64..200.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::randn(&[m, n], &mut rng).map(|v| v * scale);
        let run = |x: Tensor<f64>| {
            let mut tape = Tape::inference();
            let v = tape.constant(x);
            let y = tape.softmax_lastdim(v).unwrap();
            tape.value(y).clone()
        };
        let y = run(x.clone());
        let z = run(x.map(|v| v + shift));
        for r in 0..m {
            let row = &y.data()[r * n..(r + 1) * n];
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        prop_assert!(y.max_abs_diff(&z).unwrap() <= 1e-9);
    }
}
