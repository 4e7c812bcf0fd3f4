use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::filter::{design_butterworth, BiquadChain, FilterSpec};

/// Physiological channel kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Ecg,
    Ppg,
    Eda,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Ecg => "ecg",
            Channel::Ppg => "ppg",
            Channel::Eda => "eda",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ecg" => Some(Channel::Ecg),
            "ppg" => Some(Channel::Ppg),
            "eda" | "gsr" => Some(Channel::Eda),
            _ => None,
        }
    }

    pub fn is_cardiac(self) -> bool {
        matches!(self, Channel::Ecg | Channel::Ppg)
    }
}

/// A uniformly sampled single-channel recording.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSignal<T> {
    pub samples: Vec<T>,
    pub sample_rate_hz: f64,
    pub channel: Channel,
}

impl<T: Scalar> RawSignal<T> {
    pub fn new(samples: Vec<T>, sample_rate_hz: f64, channel: Channel) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Validation(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::Validation(format!("{} sample {i} is not finite", channel.name())));
        }
        Ok(Self { samples, sample_rate_hz, channel })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    fn with_samples(&self, samples: Vec<T>, sample_rate_hz: f64) -> Self {
        Self { samples, sample_rate_hz, channel: self.channel }
    }
}

/// Zero-phase filtering: the chain runs forward, then backward over the
/// reversed output.
///
/// Both ends are extended by odd reflection over `3 * warmup_len` samples
/// and each pass starts from the steady state of its first sample, so a
/// constant input passes through unchanged when the DC gain is one.
pub fn filter_forward_backward<T: Scalar>(x: &RawSignal<T>, chain: &BiquadChain<T>) -> Result<RawSignal<T>> {
    Ok(x.with_samples(filtfilt(&x.samples, chain)?, x.sample_rate_hz))
}

pub(crate) fn filtfilt<T: Scalar>(x: &[T], chain: &BiquadChain<T>) -> Result<Vec<T>> {
    let padlen = 3 * chain.warmup_len();
    if x.len() <= padlen {
        return Err(Error::Validation(format!(
            "signal of {} samples too short for zero-phase filtering (needs > {padlen})",
            x.len()
        )));
    }
    if chain.sections.is_empty() {
        return Ok(x.to_vec());
    }
    let n = x.len();
    let two = T::lit(2.0);
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    ext.extend((1..=padlen).rev().map(|i| two * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=padlen).map(|i| two * x[n - 1] - x[n - 1 - i]));

    let forward = chain.run(&ext, chain.steady_state(ext[0]));
    let mut rev: Vec<T> = forward.into_iter().rev().collect();
    let start = rev[0];
    rev = chain.run(&rev, chain.steady_state(start));
    rev.reverse();
    Ok(rev[padlen..padlen + n].to_vec())
}

/// Order and relative cutoff of the resampler's anti-alias filter.
pub const ANTI_ALIAS_ORDER: usize = 8;
pub const ANTI_ALIAS_FRACTION_OF_NYQUIST: f64 = 0.45;

/// Downsamples to `target_hz`.
///
/// A zero-phase Butterworth low-pass (order 8, cutoff at 0.45 of the target
/// Nyquist frequency) runs at the source rate; the result is then read at
/// the target instants `k * source/target` with linear interpolation, which
/// reduces to plain decimation for integer ratios. The output has
/// `round(len * target / source)` samples.
pub fn resample_to<T: Scalar>(x: &RawSignal<T>, target_hz: f64) -> Result<RawSignal<T>> {
    let source = x.sample_rate_hz;
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(Error::Validation(format!("target rate must be positive, got {target_hz}")));
    }
    if target_hz > source {
        return Err(Error::Unsupported(format!("upsampling {source} Hz -> {target_hz} Hz")));
    }
    if target_hz == source {
        return Ok(x.clone());
    }
    let ratio = source / target_hz;
    if !is_rational(ratio) {
        return Err(Error::Validation(format!("rate ratio {ratio} is not a small rational")));
    }
    let cutoff = ANTI_ALIAS_FRACTION_OF_NYQUIST * target_hz / 2.0;
    let chain = design_butterworth::<T>(&FilterSpec::lowpass(ANTI_ALIAS_ORDER, cutoff, source))?;
    let smooth = filtfilt(&x.samples, &chain)?;
    let out_len = (x.len() as f64 * target_hz / source).round() as usize;
    let last = smooth.len() - 1;
    let out = (0..out_len)
        .map(|k| {
            let pos = k as f64 * ratio;
            let i = (pos.floor() as usize).min(last);
            let frac = pos - i as f64;
            if frac <= 0.0 || i == last {
                smooth[i]
            } else {
                let f = T::lit(frac);
                smooth[i] * (T::one() - f) + smooth[i + 1] * f
            }
        })
        .collect();
    Ok(x.with_samples(out, target_hz))
}

fn is_rational(ratio: f64) -> bool {
    (1..=1000).any(|den| {
        let num = ratio * den as f64;
        (num - num.round()).abs() < 1e-9 * num.max(1.0)
    })
}

/// Drops the first `floor(seconds * rate)` samples.
pub fn trim_head<T: Scalar>(x: &RawSignal<T>, seconds: f64) -> Result<RawSignal<T>> {
    if !(seconds.is_finite() && seconds >= 0.0) {
        return Err(Error::Validation(format!("trim duration must be >= 0, got {seconds}")));
    }
    let drop = (seconds * x.sample_rate_hz).floor() as usize;
    if drop == 0 {
        return Ok(x.clone());
    }
    if x.len() <= drop {
        return Err(Error::Validation(format!(
            "signal of {} samples is shorter than the {seconds} s trim ({drop} samples)",
            x.len()
        )));
    }
    Ok(x.with_samples(x.samples[drop..].to_vec(), x.sample_rate_hz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::filter::{design_notch, NOTCH_Q};

    fn sine(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (std::f64::consts::TAU * freq * i as f64 / fs).sin()).collect()
    }

    /// Amplitude by least-squares projection onto sin/cos at `freq` over the
    /// central half of the signal.
    fn amplitude(x: &[f64], freq: f64, fs: f64) -> f64 {
        let (a, b) = (x.len() / 4, 3 * x.len() / 4);
        let (mut s, mut c) = (0.0, 0.0);
        for (i, &v) in x.iter().enumerate().take(b).skip(a) {
            let w = std::f64::consts::TAU * freq * i as f64 / fs;
            s += v * w.sin();
            c += v * w.cos();
        }
        2.0 * (s * s + c * c).sqrt() / (b - a) as f64
    }

    fn sig(samples: Vec<f64>, fs: f64) -> RawSignal<f64> {
        RawSignal::new(samples, fs, Channel::Eda).unwrap()
    }

    #[test]
    fn constant_through_lowpass_is_unchanged() {
        let chain = design_butterworth(&FilterSpec::lowpass(4, 3.0, 128.0)).unwrap();
        let y = filter_forward_backward(&sig(vec![2.5; 1000], 128.0), &chain).unwrap();
        assert_eq!(y.len(), 1000);
        assert!(y.samples.iter().all(|v| (v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn impulse_response_decays() {
        for spec in [FilterSpec::lowpass(4, 3.0, 128.0), FilterSpec::highpass(5, 0.5, 128.0), FilterSpec::bandpass(3, 0.5, 8.0, 128.0)] {
            let chain = design_butterworth::<f64>(&spec).unwrap();
            let mut x = vec![0.0; 20_000];
            x[0] = 1.0;
            let y = chain.lfilter(&x);
            let tail = y[15_000..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(tail < 1e-8, "{spec:?}: {tail}");
        }
    }

    #[test]
    fn double_pass_squares_the_magnitude() {
        let chain = design_butterworth(&FilterSpec::lowpass(4, 3.0, 128.0)).unwrap();
        for f in [1.0, 3.0, 4.0] {
            let x = sine(f, 128.0, 6000, 1.0);
            let y = filter_forward_backward(&sig(x, 128.0), &chain).unwrap();
            let want = chain.magnitude_at(f, 128.0).powi(2);
            let got = amplitude(&y.samples, f, 128.0);
            assert!((got - want).abs() / want < 0.02, "{f}: {got} vs {want}");
        }
    }

    #[test]
    fn zero_phase_keeps_passband_sines_aligned() {
        let chain = design_butterworth(&FilterSpec::lowpass(4, 3.0, 128.0)).unwrap();
        let x = sine(0.5, 128.0, 4000, 1.0);
        let y = filter_forward_backward(&sig(x.clone(), 128.0), &chain).unwrap();
        // Best-aligning lag must be within one sample.
        let corr = |lag: i64| -> f64 {
            (1000..3000).map(|i| x[i] * y.samples[(i as i64 + lag) as usize]).sum()
        };
        let best = (-10..=10).max_by(|&a, &b| corr(a).partial_cmp(&corr(b)).unwrap()).unwrap();
        assert!(best.abs() <= 1, "lag {best}");
        let energy = |v: &[f64]| v[1000..3000].iter().map(|s| s * s).sum::<f64>();
        assert!((energy(&y.samples) / energy(&x) - 1.0).abs() < 0.02);
    }

    #[test]
    fn too_short_signal_is_rejected() {
        let chain = design_butterworth(&FilterSpec::lowpass(4, 3.0, 128.0)).unwrap();
        let e = filter_forward_backward(&sig(vec![0.0; 15], 128.0), &chain).unwrap_err();
        assert_eq!(e.category(), "validation");
    }

    #[test]
    fn notch_harness() {
        let chain = design_notch(50.0, NOTCH_Q, 128.0).unwrap();
        let x = sine(50.0, 128.0, 8192, 1.0);
        let y = chain.lfilter(&x);
        // Discard the transient, then compare amplitude.
        let steady = &y[4096..];
        let amp_out = amplitude(steady, 50.0, 128.0);
        assert!(20.0 * amp_out.log10() <= -20.0, "{amp_out}");

        let x = sine(5.0, 128.0, 8192, 1.0);
        let y = chain.lfilter(&x);
        let amp_out = amplitude(&y[4096..], 5.0, 128.0);
        assert!((amp_out - 1.0).abs() <= 0.01);

        let z = chain.lfilter(&[0.0; 100]);
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resample_identity_lengths_and_amplitude() {
        let x = sig(sine(2.0, 128.0, 1000, 1.0), 128.0);
        assert_eq!(resample_to(&x, 128.0).unwrap(), x);

        let x = sig(sine(2.0, 512.0, 12_800, 1.0), 512.0);
        let y = resample_to(&x, 128.0).unwrap();
        assert_eq!(y.len(), 3_200);
        assert_eq!(y.sample_rate_hz, 128.0);
        let amp = amplitude(&y.samples, 2.0, 128.0);
        assert!((amp - 1.0).abs() < 0.02, "{amp}");

        assert_eq!(resample_to(&x, 1024.0).unwrap_err().category(), "unsupported");

        let x = sig(sine(2.0, 256.0, 1001, 1.0), 256.0);
        assert_eq!(resample_to(&x, 128.0).unwrap().len(), 501);
    }

    #[test]
    fn trim_cases() {
        let x = sig((0..1280).map(|i| i as f64).collect(), 128.0);
        let y = trim_head(&x, 1.0).unwrap();
        assert_eq!(y.len(), 1152);
        assert_eq!(y.samples[0], 128.0);
        assert_eq!(trim_head(&x, 0.0).unwrap(), x);
        assert!(trim_head(&sig(vec![0.0; 100], 128.0), 1.0).is_err());
    }
}
