//! Training and evaluation of one cross-validation fold.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::Confusion;
use crate::checkpoint::Checkpoint;
use crate::data::{pad_batch, ChannelStats, Thresholds, Trial, TrialNormalizer};
use crate::error::{Error, Result};
use crate::model::{FusionMode, Mvp};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// Loss must fall below its first-epoch value within this many epochs, or a
/// warning is recorded.
pub const WARMUP_EPOCHS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_index: usize,
    pub mode: FusionMode,
    pub test_subjects: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub f1w_valence: f64,
    pub f1w_arousal: f64,
    pub confusion_valence: Confusion,
    pub confusion_arousal: Confusion,
    /// Mean training loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
    pub warnings: Vec<String>,
}

impl FoldReport {
    /// Test trials per class, `[valence, arousal]` x `[class 0, class 1]`.
    pub fn supports(&self) -> [[usize; 2]; 2] {
        [self.confusion_valence.support(), self.confusion_arousal.support()]
    }
}

pub struct FoldOutcome<T> {
    pub report: FoldReport,
    pub model: Mvp<T>,
    pub normalizer: TrialNormalizer,
    pub checkpoint: Checkpoint,
}

/// Test-set metrics of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_trials: usize,
    pub f1w_valence: f64,
    pub f1w_arousal: f64,
    pub confusion_valence: Confusion,
    pub confusion_arousal: Confusion,
}

/// Logits of already-normalized trials, in chunks of `batch_size`, on an
/// inference tape.
pub fn predict_logits<T: Scalar>(model: &Mvp<T>, trials: &[&Trial], batch_size: usize, th: Thresholds) -> Result<Vec<[f64; 2]>> {
    let (tv, tp) = (model.cfg.video.input_time_max, model.cfg.physio.input_time_max);
    let mut out = Vec::with_capacity(trials.len());
    for chunk in trials.chunks(batch_size.max(1)) {
        let batch = pad_batch::<T>(chunk, tv, tp, th)?;
        let y = model.predict(&batch)?;
        out.extend(y.data().chunks_exact(2).map(|r| [r[0].to_f64_lossy(), r[1].to_f64_lossy()]));
    }
    Ok(out)
}

/// Thresholds logits at zero and scores both axes.
pub fn evaluate<T: Scalar>(model: &Mvp<T>, trials: &[&Trial], batch_size: usize, th: Thresholds) -> Result<EvalReport> {
    let logits = predict_logits(model, trials, batch_size, th)?;
    let mut preds = [Vec::new(), Vec::new()];
    let mut targets = [Vec::new(), Vec::new()];
    for (t, z) in trials.iter().zip(&logits) {
        let y = th.labels(t)?;
        for axis in 0..2 {
            preds[axis].push((z[axis] > 0.0) as u8);
            targets[axis].push(y[axis]);
        }
    }
    let cv = Confusion::from_pairs(&preds[0], &targets[0])?;
    let ca = Confusion::from_pairs(&preds[1], &targets[1])?;
    Ok(EvalReport {
        n_trials: trials.len(),
        f1w_valence: cv.weighted_f1(),
        f1w_arousal: ca.weighted_f1(),
        confusion_valence: cv,
        confusion_arousal: ca,
    })
}

fn push_stats(ck: &mut Checkpoint, name: &str, s: &ChannelStats) {
    ck.push(format!("norm.{name}.mean"), &[s.mean().len()], s.mean().to_vec());
    ck.push(format!("norm.{name}.std"), &[s.std().len()], s.std().to_vec());
}

fn read_stats(ck: &Checkpoint, name: &str) -> Result<ChannelStats> {
    let get = |k: String| ck.array(&k).map(|a| a.data.clone()).ok_or_else(|| Error::Validation(format!("checkpoint lacks {k}")));
    ChannelStats::from_parts(get(format!("norm.{name}.mean"))?, get(format!("norm.{name}.std"))?)
}

/// Model, normalization statistics and run configuration of a checkpoint.
pub fn restore<T: Scalar>(ck: &Checkpoint) -> Result<(Mvp<T>, TrialNormalizer, RunConfig)> {
    let model = Mvp::from_checkpoint(ck)?;
    let norm = TrialNormalizer { video: read_stats(ck, "video")?, physio: read_stats(ck, "physio")? };
    let text = ck.meta.get("run_config").ok_or_else(|| Error::Validation("checkpoint lacks run_config".into()))?;
    Ok((model, norm, RunConfig::parse(text, &[])?))
}

/// Normalizes raw trials with the checkpoint's statistics and scores them.
pub fn evaluate_checkpoint(ck: &Checkpoint, trials: &[Trial]) -> Result<EvalReport> {
    let (model, norm, cfg) = restore::<f64>(ck)?;
    let normed = norm.transform_all(trials)?;
    let refs: Vec<&Trial> = normed.iter().collect();
    evaluate(&model, &refs, cfg.batch_size, cfg.thresholds)
}

/// Seeds derived from the run seed and fold index: `(init, shuffle, dropout)`.
fn fold_seeds(seed: u64, fold: usize) -> (u64, u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64 + 1);
    (rng.gen(), rng.gen(), rng.gen())
}

/// Trains one model on `train` and scores it on `test`.
///
/// Normalization statistics come from `train` alone. Batches are drawn by
/// shuffling the training set each epoch; training stops after `epochs` or
/// once the epoch loss has not improved by `min_delta` for `patience` epochs.
pub fn train_fold<T: Scalar>(
    fold_index: usize,
    train: &[&Trial],
    test: &[&Trial],
    caps: (usize, usize),
    cfg: &RunConfig,
) -> Result<FoldOutcome<T>> {
    let train_subjects: BTreeSet<&str> = train.iter().map(|t| t.subject_id.as_str()).collect();
    if let Some(t) = test.iter().find(|t| train_subjects.contains(t.subject_id.as_str())) {
        return Err(Error::Contract(format!("subject {} appears in both train and test of fold {fold_index}", t.subject_id)));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Validation(format!("fold {fold_index} has an empty split")));
    }
    let (init_seed, shuffle_seed, dropout_seed) = fold_seeds(cfg.seed, fold_index);
    let normalizer = TrialNormalizer::fit(train)?;
    let train_n: Vec<Trial> = train.iter().map(|t| normalizer.transform(t)).collect::<Result<_>>()?;
    let test_n: Vec<Trial> = test.iter().map(|t| normalizer.transform(t)).collect::<Result<_>>()?;

    let mut model = Mvp::<T>::new(cfg.mvp_config(caps.0, caps.1), init_seed)?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() }, &model.params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(dropout_seed);

    let mut order: Vec<usize> = (0..train_n.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&Trial> = chunk.iter().map(|&i| &train_n[i]).collect();
            let batch = pad_batch::<T>(&refs, caps.0, caps.1, cfg.thresholds)?;
            let mut tape = Tape::new();
            let pv = model.params.register(&mut tape);
            let logits = model.forward_batch(&mut tape, &pv, &batch, Some(&mut dropout_rng))?;
            let loss = tape.bce_with_logits(logits, &batch.labels)?;
            let value = tape.value(loss).data()[0].to_f64_lossy();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss at step {step} (fold {fold_index}, epoch {epoch})")));
            }
            let mut grads = tape.backward(loss)?;
            let g: Vec<Tensor<T>> = pv
                .iter()
                .enumerate()
                .map(|(i, &v)| grads.take(v).unwrap_or_else(|| Tensor::zeros(model.params.get(crate::optim::ParamId(i)).shape())))
                .collect();
            adam.step(&mut model.params, &g)?;
            total += value * chunk.len() as f64;
            step += 1;
        }
        let mean = total / train_n.len() as f64;
        log::debug!("fold {fold_index} epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
        if mean < best - cfg.min_delta {
            best = mean;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience && epoch + 1 < cfg.epochs {
                stopped_early = true;
                break;
            }
        }
    }
    let mut warnings = Vec::new();
    if epoch_losses.len() >= WARMUP_EPOCHS && epoch_losses[1..WARMUP_EPOCHS].iter().all(|&l| l >= epoch_losses[0]) {
        let w = format!("fold {fold_index}: training loss did not decrease over the first {WARMUP_EPOCHS} epochs");
        log::warn!("{w}");
        warnings.push(w);
    }

    let test_refs: Vec<&Trial> = test_n.iter().collect();
    let eval = evaluate(&model, &test_refs, cfg.batch_size, cfg.thresholds)?;
    let mut test_subjects: Vec<String> = test.iter().map(|t| t.subject_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    test_subjects.sort();
    let report = FoldReport {
        fold_index,
        mode: cfg.mode,
        test_subjects,
        n_train: train.len(),
        n_test: test.len(),
        f1w_valence: eval.f1w_valence,
        f1w_arousal: eval.f1w_arousal,
        confusion_valence: eval.confusion_valence,
        confusion_arousal: eval.confusion_arousal,
        epoch_losses,
        stopped_early,
        warnings,
    };
    let mut checkpoint = model.to_checkpoint()?;
    checkpoint.meta.insert("fold".into(), fold_index.to_string());
    checkpoint.meta.insert("run_config".into(), cfg.to_text());
    push_stats(&mut checkpoint, "video", &normalizer.video);
    push_stats(&mut checkpoint, "physio", &normalizer.physio);
    Ok(FoldOutcome { report, model, normalizer, checkpoint })
}
