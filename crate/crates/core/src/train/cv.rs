//! Subject-independent cross-validation, ablations and run output.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::fold::{train_fold, FoldOutcome, FoldReport};
use crate::checkpoint::Checkpoint;
use crate::data::{make_folds, scan_max_lengths, FoldPlan, Trial};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::model::FusionMode;
use crate::scalar::Scalar;

/// Environment variable capping the number of folds trained at once.
pub const THREADS_ENV: &str = "MVP_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisSummary {
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
    pub folds: Vec<f64>,
}

impl AxisSummary {
    pub fn from_scores(folds: Vec<f64>) -> Self {
        let n = folds.len() as f64;
        let mean = folds.iter().sum::<f64>() / n;
        let std = (folds.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self { mean, std, folds }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: FusionMode,
    pub n_folds: usize,
    pub valence: AxisSummary,
    pub arousal: AxisSummary,
}

impl Summary {
    pub fn from_reports(mode: FusionMode, reports: &[FoldReport]) -> Self {
        Self {
            mode,
            n_folds: reports.len(),
            valence: AxisSummary::from_scores(reports.iter().map(|r| r.f1w_valence).collect()),
            arousal: AxisSummary::from_scores(reports.iter().map(|r| r.f1w_arousal).collect()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Validation(format!("bad summary: {e}")))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("mode {}  folds {}\n", self.mode, self.n_folds);
        for (name, a) in [("valence", &self.valence), ("arousal", &self.arousal)] {
            let per: Vec<String> = a.folds.iter().map(|f| format!("{f:.4}")).collect();
            let _ = writeln!(s, "{name:<8} weighted F1 {:.4} +/- {:.4}  [{}]", a.mean, a.std, per.join(", "));
        }
        s
    }
}

pub struct CvOutcome<T> {
    pub plan: FoldPlan,
    pub caps: (usize, usize),
    pub folds: Vec<FoldOutcome<T>>,
    pub summary: Summary,
}

impl<T> CvOutcome<T> {
    pub fn reports(&self) -> Vec<&FoldReport> {
        self.folds.iter().map(|f| &f.report).collect()
    }
}

/// Time caps from the configuration, or from the longest trials present.
pub fn time_caps(trials: &[Trial], cfg: &RunConfig) -> Result<(usize, usize)> {
    let (tv, tp) = scan_max_lengths(trials);
    let caps = (cfg.tv_max.unwrap_or(tv), cfg.tp_max.unwrap_or(tp));
    if caps.0 < tv || caps.1 < tp {
        return Err(Error::Validation(format!("corpus needs caps ({tv}, {tp}) but configuration sets ({}, {})", caps.0, caps.1)));
    }
    Ok(caps)
}

fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0)
}

/// Trains and scores one model per fold. Folds run concurrently; results do
/// not depend on scheduling.
pub fn cross_validate<T: Scalar>(trials: &[Trial], cfg: &RunConfig) -> Result<CvOutcome<T>> {
    cfg.validate()?;
    if trials.is_empty() {
        return Err(Error::Validation("empty corpus".into()));
    }
    let caps = time_caps(trials, cfg)?;
    let mut subjects: Vec<String> = trials.iter().map(|t| t.subject_id.clone()).collect();
    subjects.sort();
    subjects.dedup();
    let plan = make_folds(&subjects, cfg.folds, cfg.seed)?;
    let run = |i: usize| -> Result<FoldOutcome<T>> {
        let (train, test) = plan.split(i, trials);
        train_fold(i, &train, &test, caps, cfg)
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Unsupported(format!("thread pool: {e}")))?;
    let folds: Vec<FoldOutcome<T>> = pool.install(|| (0..plan.k).into_par_iter().map(run).collect::<Result<_>>())?;
    let reports: Vec<FoldReport> = folds.iter().map(|f| f.report.clone()).collect();
    let summary = Summary::from_reports(cfg.mode, &reports);
    Ok(CvOutcome { plan, caps, folds, summary })
}

/// Cross-validation of each listed mode with otherwise identical settings.
pub fn ablation_modes<T: Scalar>(trials: &[Trial], cfg: &RunConfig, modes: &[FusionMode]) -> Result<Vec<CvOutcome<T>>> {
    modes
        .iter()
        .map(|&mode| {
            let mut c = cfg.clone();
            c.mode = mode;
            cross_validate(trials, &c)
        })
        .collect()
}

fn json<S: Serialize>(v: &S) -> Vec<u8> {
    serde_json::to_vec_pretty(v).expect("report serializes")
}

/// Writes `config.toml`, `summary.json`, `summary.txt` and per-fold
/// `fold<i>/report.json` and `fold<i>/model.ckpt` under `out`.
pub fn write_run<T>(out: &Path, cfg: &RunConfig, cv: &CvOutcome<T>) -> Result<()> {
    write_atomic(&out.join("config.toml"), cfg.to_text().as_bytes())?;
    write_atomic(&out.join("summary.json"), cv.summary.to_json().as_bytes())?;
    write_atomic(&out.join("summary.txt"), cv.summary.to_text().as_bytes())?;
    for f in &cv.folds {
        let dir = out.join(format!("fold{}", f.report.fold_index));
        write_atomic(&dir.join("report.json"), &json(&f.report))?;
        f.checkpoint.save(&dir.join("model.ckpt"))?;
    }
    Ok(())
}

/// Loads `fold<i>/model.ckpt` of a finished run.
pub fn load_fold_checkpoint(run: &Path, fold: usize) -> Result<Checkpoint> {
    Checkpoint::load(&run.join(format!("fold{fold}")).join("model.ckpt"))
}
