//! IIR filter design (Butterworth, powerline notch) as cascaded biquads.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Response family of a digital filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    Lowpass,
    Highpass,
    Bandpass,
    Notch,
}

/// What to design.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: usize,
    /// One cutoff for low/high-pass and notch, `[low, high]` for band-pass.
    pub cutoff_hz: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl FilterSpec {
    pub fn lowpass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Self {
        Self { kind: FilterKind::Lowpass, order, cutoff_hz: vec![cutoff_hz], sample_rate_hz }
    }

    pub fn highpass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Self {
        Self { kind: FilterKind::Highpass, order, cutoff_hz: vec![cutoff_hz], sample_rate_hz }
    }

    pub fn bandpass(order: usize, low_hz: f64, high_hz: f64, sample_rate_hz: f64) -> Self {
        Self { kind: FilterKind::Bandpass, order, cutoff_hz: vec![low_hz, high_hz], sample_rate_hz }
    }

    pub fn validate(&self) -> Result<()> {
        let fs = self.sample_rate_hz;
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::Design(format!("sample rate must be positive, got {fs}")));
        }
        if self.order == 0 {
            return Err(Error::Design("filter order must be >= 1".into()));
        }
        let want = if self.kind == FilterKind::Bandpass { 2 } else { 1 };
        if self.cutoff_hz.len() != want {
            return Err(Error::Design(format!("{:?} needs {want} cutoff(s), got {:?}", self.kind, self.cutoff_hz)));
        }
        let nyquist = fs / 2.0;
        for &f in &self.cutoff_hz {
            if !(f > 0.0 && f < nyquist) {
                return Err(Error::Design(format!("cutoff {f} Hz outside (0, {nyquist}) Hz")));
            }
        }
        if self.kind == FilterKind::Bandpass && self.cutoff_hz[0] >= self.cutoff_hz[1] {
            return Err(Error::Design(format!("band-pass edges must satisfy low < high, got {:?}", self.cutoff_hz)));
        }
        Ok(())
    }
}

/// One second-order section, `a0` normalized to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad<T> {
    pub b0: T,
    pub b1: T,
    pub b2: T,
    pub a1: T,
    pub a2: T,
}

impl<T: Scalar> Biquad<T> {
    /// Complex response at `z`.
    pub fn response(&self, z: Complex<T>) -> Complex<T> {
        let zi = z.inv();
        let zi2 = zi * zi;
        let num = zi2 * self.b2 + zi * self.b1 + self.b0;
        let den = zi2 * self.a2 + zi * self.a1 + T::one();
        num / den
    }

    /// Pole moduli (roots of `z^2 + a1 z + a2`).
    pub fn pole_moduli(&self) -> [T; 2] {
        let two = T::lit(2.0);
        let disc = Complex::new(self.a1 * self.a1 - T::lit(4.0) * self.a2, T::zero()).sqrt();
        let p1 = (Complex::new(-self.a1, T::zero()) + disc) / two;
        let p2 = (Complex::new(-self.a1, T::zero()) - disc) / two;
        [p1.norm(), p2.norm()]
    }

    /// Steady-state direct-form-II-transposed state for a constant unit input.
    fn unit_step_state(&self) -> ([T; 2], T) {
        let gain = (self.b0 + self.b1 + self.b2) / (T::one() + self.a1 + self.a2);
        let s2 = self.b2 - self.a2 * gain;
        let s1 = self.b1 - self.a1 * gain + s2;
        ([s1, s2], gain)
    }
}

/// Cascade of second-order sections applied in order.
#[derive(Clone, Debug, PartialEq)]
pub struct BiquadChain<T> {
    pub sections: Vec<Biquad<T>>,
}

impl<T: Scalar> BiquadChain<T> {
    pub fn is_stable(&self, margin: T) -> bool {
        self.sections.iter().all(|s| s.pole_moduli().iter().all(|&r| r < T::one() - margin))
    }

    /// Complex response at normalized angular frequency `omega` (rad/sample).
    pub fn response_at(&self, omega: T) -> Complex<T> {
        let z = Complex::from_polar(T::one(), omega);
        self.sections.iter().fold(Complex::new(T::one(), T::zero()), |acc, s| acc * s.response(z))
    }

    /// `|H|` at `freq_hz` for a chain running at `sample_rate_hz`.
    pub fn magnitude_at(&self, freq_hz: T, sample_rate_hz: T) -> T {
        self.response_at(T::TAU() * freq_hz / sample_rate_hz).norm()
    }

    /// Number of taps of the equivalent single transfer function.
    pub fn warmup_len(&self) -> usize {
        2 * self.sections.len() + 1
    }

    /// Causal filtering starting from the given per-section state.
    pub(crate) fn run(&self, x: &[T], mut state: Vec<[T; 2]>) -> Vec<T> {
        let mut y = x.to_vec();
        for (s, st) in self.sections.iter().zip(state.iter_mut()) {
            let [mut s1, mut s2] = *st;
            for v in y.iter_mut() {
                let xin = *v;
                let out = s.b0 * xin + s1;
                s1 = s.b1 * xin - s.a1 * out + s2;
                s2 = s.b2 * xin - s.a2 * out;
                *v = out;
            }
        }
        y
    }

    /// Causal filtering from rest.
    pub fn lfilter(&self, x: &[T]) -> Vec<T> {
        self.run(x, vec![[T::zero(); 2]; self.sections.len()])
    }

    /// Section states that make a constant input `level` pass with no transient.
    pub(crate) fn steady_state(&self, level: T) -> Vec<[T; 2]> {
        let mut input = level;
        self.sections
            .iter()
            .map(|s| {
                let ([s1, s2], gain) = s.unit_step_state();
                let st = [s1 * input, s2 * input];
                input = input * gain;
                st
            })
            .collect()
    }
}

fn c<T: Scalar>(re: T) -> Complex<T> {
    Complex::new(re, T::zero())
}

/// Designs a digital Butterworth filter by bilinear transform of the analog
/// prototype with cutoff prewarping, realized as second-order sections.
///
/// A band-pass spec of order `n` yields a `2n`-pole filter.
pub fn design_butterworth<T: Scalar>(spec: &FilterSpec) -> Result<BiquadChain<T>> {
    spec.validate()?;
    if spec.kind == FilterKind::Notch {
        return Err(Error::Design("use design_notch for notch filters".into()));
    }
    let n = spec.order;
    let fs = T::lit(spec.sample_rate_hz);
    let fs2 = fs + fs;
    let prewarp = |f: f64| fs2 * (T::PI() * T::lit(f) / fs).tan();

    let proto: Vec<Complex<T>> = (0..n)
        .map(|k| {
            let theta = T::PI() * T::lit((2 * k + n + 1) as f64) / T::lit((2 * n) as f64);
            Complex::from_polar(T::one(), theta)
        })
        .collect();

    let (analog_poles, zero_pos, zero_neg, reference_omega): (Vec<Complex<T>>, usize, usize, T) = match spec.kind {
        FilterKind::Lowpass => {
            let w = prewarp(spec.cutoff_hz[0]);
            (proto.iter().map(|&p| p * w).collect(), 0, n, T::zero())
        }
        FilterKind::Highpass => {
            let w = prewarp(spec.cutoff_hz[0]);
            (proto.iter().map(|&p| c(w) / p).collect(), n, 0, T::PI())
        }
        FilterKind::Bandpass => {
            let (w1, w2) = (prewarp(spec.cutoff_hz[0]), prewarp(spec.cutoff_hz[1]));
            let bw = w2 - w1;
            let w0sq = w1 * w2;
            let mut poles = Vec::with_capacity(2 * n);
            for &p in &proto {
                let pb = p * bw;
                let disc = (pb * pb - c(T::lit(4.0) * w0sq)).sqrt();
                poles.push((pb + disc) / T::lit(2.0));
                poles.push((pb - disc) / T::lit(2.0));
            }
            // Analog center maps to digital 2*atan(w0 / 2fs).
            let center = T::lit(2.0) * (w0sq.sqrt() / fs2).atan();
            (poles, n, n, center)
        }
        FilterKind::Notch => unreachable!(),
    };

    let digital: Vec<Complex<T>> = analog_poles.iter().map(|&s| (c(fs2) + s) / (c(fs2) - s)).collect();
    let mut chain = BiquadChain { sections: pair_sections(&digital, zero_pos, zero_neg)? };

    let gain = chain.response_at(reference_omega).norm();
    if !(gain.is_finite() && gain > T::zero()) {
        return Err(Error::Design(format!("degenerate reference gain {gain}")));
    }
    let s0 = &mut chain.sections[0];
    s0.b0 = s0.b0 / gain;
    s0.b1 = s0.b1 / gain;
    s0.b2 = s0.b2 / gain;
    if !chain.is_stable(T::epsilon()) {
        return Err(Error::Design("designed filter is unstable at this precision".into()));
    }
    Ok(chain)
}

/// Groups z-plane poles into sections; zeros sit at `z = 1` (`zero_pos` of
/// them) and `z = -1` (`zero_neg`), handed out two per section.
fn pair_sections<T: Scalar>(poles: &[Complex<T>], zero_pos: usize, zero_neg: usize) -> Result<Vec<Biquad<T>>> {
    let tol = T::epsilon().sqrt() * T::lit(10.0);
    let mut complex: Vec<Complex<T>> = poles.iter().copied().filter(|p| p.im > tol).collect();
    let mut real: Vec<T> = poles.iter().filter(|p| p.im.abs() <= tol).map(|p| p.re).collect();
    let lower = poles.iter().filter(|p| p.im < -tol).count();
    if lower != complex.len() {
        return Err(Error::Design("poles are not in conjugate pairs".into()));
    }
    complex.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap_or(std::cmp::Ordering::Equal));
    real.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));

    let mut zeros: Vec<T> = std::iter::repeat_n(T::one(), zero_pos).chain(std::iter::repeat_n(-T::one(), zero_neg)).collect();
    // Interleave so a band-pass section gets one zero at each end.
    if zero_pos > 0 && zero_neg > 0 {
        let (pos, neg) = zeros.split_at(zero_pos);
        zeros = pos.iter().zip(neg).flat_map(|(&a, &b)| [a, b]).collect();
    }
    let mut zeros = zeros.into_iter();

    let mut sections = Vec::new();
    let mut take_zeros = |count: usize| -> (T, T) {
        // Returns (-(z1+z2), z1*z2) for up to two zeros.
        let z: Vec<T> = zeros.by_ref().take(count).collect();
        match z.as_slice() {
            [] => (T::zero(), T::zero()),
            [a] => (-*a, T::zero()),
            [a, b] => (-(*a + *b), *a * *b),
            _ => unreachable!(),
        }
    };
    for p in complex {
        let (b1, b2) = take_zeros(2);
        sections.push(Biquad { b0: T::one(), b1, b2, a1: -(p.re + p.re), a2: p.norm_sqr() });
    }
    let mut it = real.chunks(2);
    for pair in it.by_ref() {
        match *pair {
            [p1, p2] => {
                let (b1, b2) = take_zeros(2);
                sections.push(Biquad { b0: T::one(), b1, b2, a1: -(p1 + p2), a2: p1 * p2 });
            }
            [p] => {
                let (b1, b2) = take_zeros(1);
                sections.push(Biquad { b0: T::one(), b1, b2, a1: -p, a2: T::zero() });
            }
            _ => unreachable!(),
        }
    }
    Ok(sections)
}

/// Default quality factor of the powerline notch.
pub const NOTCH_Q: f64 = 30.0;

/// Second-order IIR notch at `freq_hz` with quality factor `q`.
pub fn design_notch<T: Scalar>(freq_hz: f64, q: f64, sample_rate_hz: f64) -> Result<BiquadChain<T>> {
    let spec = FilterSpec { kind: FilterKind::Notch, order: 2, cutoff_hz: vec![freq_hz], sample_rate_hz };
    spec.validate()?;
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::Design(format!("notch quality factor must be positive, got {q}")));
    }
    let w0 = T::lit(2.0 * freq_hz / sample_rate_hz);
    let bw = w0 / T::lit(q);
    let beta = (bw * T::PI() / T::lit(2.0)).tan();
    let gain = T::one() / (T::one() + beta);
    let cosw = (w0 * T::PI()).cos();
    let two = T::lit(2.0);
    let section = Biquad { b0: gain, b1: -two * gain * cosw, b2: gain, a1: -two * gain * cosw, a2: two * gain - T::one() };
    Ok(BiquadChain { sections: vec![section] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(x: f64) -> f64 {
        20.0 * x.log10()
    }

    #[test]
    fn lowpass_eda_cutoff_and_dc() {
        let chain: BiquadChain<f64> = design_butterworth(&FilterSpec::lowpass(4, 3.0, 128.0)).unwrap();
        assert_eq!(chain.sections.len(), 2);
        let h3 = chain.magnitude_at(3.0, 128.0);
        assert!((h3 - std::f64::consts::FRAC_1_SQRT_2).abs() / std::f64::consts::FRAC_1_SQRT_2 < 0.02, "{h3}");
        assert!((db(h3) + 3.0103).abs() < 0.2);
        assert!((chain.magnitude_at(0.0, 128.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn passband_is_monotone() {
        let chain: BiquadChain<f64> = design_butterworth(&FilterSpec::lowpass(4, 3.0, 128.0)).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..=300 {
            let m = chain.magnitude_at(i as f64 * 0.01, 128.0);
            assert!(m <= prev + 1e-12);
            prev = m;
        }
    }

    #[test]
    fn highpass_ecg_blocks_dc() {
        let chain: BiquadChain<f64> = design_butterworth(&FilterSpec::highpass(5, 0.5, 128.0)).unwrap();
        assert_eq!(chain.sections.len(), 3);
        assert!(chain.magnitude_at(0.0, 128.0) < 1e-12);
        assert!((db(chain.magnitude_at(0.5, 128.0)) + 3.0103).abs() < 0.2);
        assert!((chain.magnitude_at(64.0, 128.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bandpass_ppg_edges() {
        let chain: BiquadChain<f64> = design_butterworth(&FilterSpec::bandpass(3, 0.5, 8.0, 128.0)).unwrap();
        assert_eq!(chain.sections.len(), 3);
        for f in [0.5, 8.0] {
            assert!((db(chain.magnitude_at(f, 128.0)) + 3.0103).abs() < 0.2, "{f}");
        }
        assert!(chain.magnitude_at(0.0, 128.0) < 1e-12);
        assert!(chain.magnitude_at(64.0, 128.0) < 1e-12);
        assert!((chain.magnitude_at(2.0, 128.0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn designs_are_stable_in_f32_and_f64() {
        for spec in [
            FilterSpec::lowpass(4, 3.0, 128.0),
            FilterSpec::highpass(5, 0.5, 128.0),
            FilterSpec::bandpass(3, 0.5, 8.0, 128.0),
            FilterSpec::lowpass(8, 28.8, 512.0),
        ] {
            let c64: BiquadChain<f64> = design_butterworth(&spec).unwrap();
            assert!(c64.is_stable(1e-9), "{spec:?}");
            let c32: BiquadChain<f32> = design_butterworth(&spec).unwrap();
            assert!(c32.is_stable(0.0), "{spec:?}");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let e = design_butterworth::<f64>(&FilterSpec::lowpass(4, 64.0, 128.0)).unwrap_err();
        assert_eq!(e.category(), "design");
        assert!(design_butterworth::<f64>(&FilterSpec::lowpass(0, 3.0, 128.0)).is_err());
        assert!(design_butterworth::<f64>(&FilterSpec::bandpass(2, 8.0, 0.5, 128.0)).is_err());
        assert!(design_notch::<f64>(50.0, 30.0, 100.0).is_err());
    }

    #[test]
    fn notch_attenuation() {
        let chain: BiquadChain<f64> = design_notch(50.0, NOTCH_Q, 128.0).unwrap();
        assert!(db(chain.magnitude_at(50.0, 128.0)) <= -20.0);
        for f in [40.0, 60.0] {
            assert!(db(chain.magnitude_at(f, 128.0)).abs() <= 1.0, "{f}");
        }
        assert!(chain.is_stable(1e-9));
    }
}
