//! Training loop, cross-validation and evaluation.

pub mod config;
pub mod cv;
pub mod fold;
pub mod metrics;

pub use config::{parse_override, KeySpec, RunConfig, KEYS};
pub use cv::{ablation_modes, cross_validate, load_fold_checkpoint, time_caps, write_run, AxisSummary, CvOutcome, Summary, THREADS_ENV};
pub use fold::{evaluate, evaluate_checkpoint, predict_logits, restore, train_fold, EvalReport, FoldOutcome, FoldReport};
pub use metrics::{weighted_f1, Confusion};
