//! Physiological signal conditioning: resampling, Butterworth and powerline
//! filtering, artifact trimming.

pub mod filter;
pub mod pipeline;
pub mod signal;

pub use filter::{design_butterworth, design_notch, Biquad, BiquadChain, FilterKind, FilterSpec, NOTCH_Q};
pub use pipeline::{preprocess_channel, PipelineTrace, Stage, ARTIFACT_TRIM_S, POWERLINE_HZ, TARGET_RATE_HZ};
pub use signal::{filter_forward_backward, resample_to, trim_head, Channel, RawSignal};
