use crate::dataset::DatasetTag;
use crate::error::Result;
use crate::scalar::Scalar;

use super::filter::{design_butterworth, design_notch, FilterSpec, NOTCH_Q};
use super::signal::{filter_forward_backward, resample_to, trim_head, Channel, RawSignal};

pub const TARGET_RATE_HZ: f64 = 128.0;
pub const POWERLINE_HZ: f64 = 50.0;
pub const ARTIFACT_TRIM_S: f64 = 1.0;

/// One applied processing step.
#[derive(Clone, Debug, PartialEq)]
pub enum Stage {
    Resample { from_hz: f64, to_hz: f64 },
    Notch { freq_hz: f64, q: f64 },
    Butterworth(FilterSpec),
    TrimHead { seconds: f64, samples: usize },
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Resample { .. } => "resample",
            Stage::Notch { .. } => "notch",
            Stage::Butterworth(_) => "butterworth",
            Stage::TrimHead { .. } => "trim",
        }
    }
}

/// Ordered record of what [`preprocess_channel`] did.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineTrace {
    pub channel: Channel,
    pub stages: Vec<Stage>,
}

impl PipelineTrace {
    pub fn stage_names(&self) -> Vec<&'static str> {
        self.stages.iter().map(Stage::name).collect()
    }
}

/// Per-channel Butterworth design at `fs`: ECG high-pass order 5 at 0.5 Hz,
/// PPG band-pass order 3 over [0.5, 8] Hz, EDA low-pass order 4 at 3 Hz.
pub fn butterworth_for(channel: Channel, fs: f64) -> FilterSpec {
    match channel {
        Channel::Ecg => FilterSpec::highpass(5, 0.5, fs),
        Channel::Ppg => FilterSpec::bandpass(3, 0.5, 8.0, fs),
        Channel::Eda => FilterSpec::lowpass(4, 3.0, fs),
    }
}

/// resample to 128 Hz -> 50 Hz notch -> channel Butterworth -> 1 s head
/// trim (AMIGOS only). Filters run zero-phase.
pub fn preprocess_channel<T: Scalar>(x: &RawSignal<T>, dataset: DatasetTag) -> Result<(RawSignal<T>, PipelineTrace)> {
    let mut stages = Vec::new();
    let mut y = x.clone();
    if y.sample_rate_hz != TARGET_RATE_HZ {
        stages.push(Stage::Resample { from_hz: y.sample_rate_hz, to_hz: TARGET_RATE_HZ });
        y = resample_to(&y, TARGET_RATE_HZ)?;
    }
    let notch = design_notch::<T>(POWERLINE_HZ, NOTCH_Q, TARGET_RATE_HZ)?;
    y = filter_forward_backward(&y, &notch)?;
    stages.push(Stage::Notch { freq_hz: POWERLINE_HZ, q: NOTCH_Q });

    let spec = butterworth_for(x.channel, TARGET_RATE_HZ);
    let chain = design_butterworth::<T>(&spec)?;
    y = filter_forward_backward(&y, &chain)?;
    stages.push(Stage::Butterworth(spec));

    if dataset.trims_head() {
        let samples = (ARTIFACT_TRIM_S * TARGET_RATE_HZ).floor() as usize;
        y = trim_head(&y, ARTIFACT_TRIM_S)?;
        stages.push(Stage::TrimHead { seconds: ARTIFACT_TRIM_S, samples });
    }
    Ok((y, PipelineTrace { channel: x.channel, stages }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal(channel: Channel, fs: f64, n: usize) -> RawSignal<f64> {
        let s = (0..n).map(|i| (i as f64 * 0.01).sin() + 0.3 * (i as f64 * 0.37).cos()).collect();
        RawSignal::new(s, fs, channel).unwrap()
    }

    #[test]
    fn stage_order_is_fixed() {
        let (y, trace) = preprocess_channel(&signal(Channel::Ppg, 512.0, 5120), DatasetTag::Deap).unwrap();
        assert_eq!(trace.stage_names(), ["resample", "notch", "butterworth"]);
        assert_eq!(y.len(), 1280);
        assert_eq!(y.sample_rate_hz, 128.0);
        assert_eq!(trace.stages[2], Stage::Butterworth(FilterSpec::bandpass(3, 0.5, 8.0, 128.0)));

        let (y, trace) = preprocess_channel(&signal(Channel::Eda, 128.0, 1280), DatasetTag::Amigos).unwrap();
        assert_eq!(trace.stage_names(), ["notch", "butterworth", "trim"]);
        assert_eq!(y.len(), 1152);
        assert_eq!(trace.stages.last(), Some(&Stage::TrimHead { seconds: 1.0, samples: 128 }));
    }

    #[test]
    fn per_channel_designs() {
        assert_eq!(butterworth_for(Channel::Ecg, 128.0), FilterSpec::highpass(5, 0.5, 128.0));
        assert_eq!(butterworth_for(Channel::Eda, 128.0), FilterSpec::lowpass(4, 3.0, 128.0));
    }
}
