//! Trial ingestion, padding, normalization, folds and synthetic corpora.

pub mod au;
pub mod batch;
pub mod folds;
pub mod manifest;
pub mod normalize;
pub mod physio;
pub mod synth;
pub mod trial;

pub use au::{load_au_csv, read_au_csv, AuIngestStats};
pub use batch::{binarize_label, pad_batch, PaddedBatch, Thresholds};
pub use folds::{make_folds, FoldPlan};
pub use manifest::{load_corpus, write_corpus, ManifestRecord};
pub use normalize::{ChannelStats, TrialNormalizer};
pub use physio::{load_physio, PhysioRecording};
pub use synth::generate_synthetic;
pub use trial::{scan_max_lengths, FeatureMatrix, Trial, AMIGOS_TP_MAX, AMIGOS_TV_MAX, PHYSIO_WIDTH, VIDEO_WIDTH};
