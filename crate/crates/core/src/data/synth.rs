//! Synthetic trials with planted, learnable structure.
//!
//! Latent binary labels drive the observables:
//!
//! * arousal: cardiac pulse period (0.6 s vs 1.0 s) and the rate of EDA
//!   skin-conductance responses (0.2/s vs 0.05/s, instant rise, 4 s decay);
//! * valence: +1.0 on the AU6 and AU12 intensity channels.
//!
//! Each subject carries its own random offsets on the pulse period, EDA level
//! and AU baselines. Video values are quantized like OpenFace output (two
//! decimals, three for gaze) so they survive a CSV round trip exactly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;

use super::au::{intensity_column, GAZE_OFFSET, INTENSITY_MAX, INTENSITY_OFFSET, PRESENCE_OFFSET};
use super::trial::{FeatureMatrix, Trial, PHYSIO_RATE_HZ, VIDEO_FPS, VIDEO_WIDTH};
use crate::dataset::DatasetTag;
use crate::error::{Error, Result};

pub const MIN_DURATION_S: f64 = 60.0;
pub const MAX_DURATION_S: f64 = 155.0;
pub const PULSE_PERIOD_HIGH_AROUSAL_S: f64 = 0.6;
pub const PULSE_PERIOD_LOW_AROUSAL_S: f64 = 1.0;
pub const SCR_RATE_HIGH_AROUSAL: f64 = 0.2;
pub const SCR_RATE_LOW_AROUSAL: f64 = 0.05;
pub const SCR_DECAY_S: f64 = 4.0;
pub const VALENCE_AU_SHIFT: f64 = 1.0;
/// Action units whose intensity carries the valence signal.
pub const VALENCE_AUS: [u8; 2] = [6, 12];

const PULSE_WIDTH_S: f64 = 0.03;
const PULSE_JITTER: f64 = 0.03;
const PERIOD_OFFSET_S: f64 = 0.05;
const CARDIAC_NOISE: f64 = 0.05;
const EDA_TONIC: f64 = 1.0;
const EDA_OFFSET: f64 = 0.1;
const EDA_NOISE: f64 = 0.01;
const AU_BASELINE: f64 = 1.0;
const AU_OFFSET: f64 = 0.25;
const AU_AR: f64 = 0.95;
const AU_NOISE: f64 = 0.3;
const GAZE_NOISE: f64 = 0.1;

struct SubjectProfile {
    period_offset: f64,
    eda_offset: f64,
    au_offset: [f64; 18],
}

impl SubjectProfile {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut au_offset = [0.0; 18];
        for o in &mut au_offset {
            *o = rng.gen_range(-AU_OFFSET..=AU_OFFSET);
        }
        Self {
            period_offset: rng.gen_range(-PERIOD_OFFSET_S..=PERIOD_OFFSET_S),
            eda_offset: rng.gen_range(-EDA_OFFSET..=EDA_OFFSET),
            au_offset,
        }
    }
}

fn quantize(x: f64, scale: f64) -> f64 {
    (x * scale).round() / scale
}

fn raw_label(latent: u8, rng: &mut ChaCha8Rng) -> f64 {
    // Binarizes back to `latent` under the 4.5 threshold.
    if latent == 1 {
        rng.gen_range(5.0..=9.0)
    } else {
        rng.gen_range(1.0..=4.5)
    }
}

fn cardiac(n: usize, period: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, CARDIAC_NOISE).expect("valid std");
    let jitter = Normal::new(0.0, PULSE_JITTER).expect("valid std");
    let mut x: Vec<f64> = (0..n).map(|_| noise.sample(rng)).collect();
    let duration = n as f64 / PHYSIO_RATE_HZ;
    let reach = (4.0 * PULSE_WIDTH_S * PHYSIO_RATE_HZ).ceil() as i64;
    let mut t = rng.gen_range(0.0..period);
    while t < duration {
        let centre = (t * PHYSIO_RATE_HZ).round() as i64;
        for i in (centre - reach).max(0)..(centre + reach + 1).min(n as i64) {
            let dt = i as f64 / PHYSIO_RATE_HZ - t;
            x[i as usize] += (-0.5 * (dt / PULSE_WIDTH_S).powi(2)).exp();
        }
        t += period * (1.0 + jitter.sample(rng)).max(0.5);
    }
    x
}

fn eda(n: usize, rate: f64, level: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, EDA_NOISE).expect("valid std");
    let gap = Exp::new(rate).expect("positive rate");
    let decay = (-1.0 / (PHYSIO_RATE_HZ * SCR_DECAY_S)).exp();
    let mut next = gap.sample(rng);
    let mut phasic = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / PHYSIO_RATE_HZ;
            phasic *= decay;
            while next <= t {
                phasic += rng.gen_range(0.5..=1.0);
                next += gap.sample(rng);
            }
            level + phasic + noise.sample(rng)
        })
        .collect()
}

fn video(n: usize, valence: u8, profile: &SubjectProfile, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let innovation = Normal::new(0.0, AU_NOISE * (1.0 - AU_AR * AU_AR).sqrt()).expect("valid std");
    let stationary = Normal::new(0.0, AU_NOISE).expect("valid std");
    let gaze = Normal::new(0.0, GAZE_NOISE).expect("valid std");
    let shifted: Vec<usize> = VALENCE_AUS.iter().filter_map(|&au| intensity_column(au)).collect();
    let mut state: Vec<f64> = (0..18).map(|_| stationary.sample(rng)).collect();
    let mut data = Vec::with_capacity(n * VIDEO_WIDTH);
    for _ in 0..n {
        let mut row = [0.0; VIDEO_WIDTH];
        for k in 0..18 {
            state[k] = AU_AR * state[k] + innovation.sample(rng);
            let col = INTENSITY_OFFSET + k;
            let shift = if valence == 1 && shifted.contains(&col) { VALENCE_AU_SHIFT } else { 0.0 };
            let v = quantize((AU_BASELINE + profile.au_offset[k] + shift + state[k]).clamp(0.0, INTENSITY_MAX), 100.0);
            row[col] = v;
            row[PRESENCE_OFFSET + k] = if v > 1.0 { 1.0 } else { 0.0 };
        }
        for g in &mut row[GAZE_OFFSET..] {
            *g = quantize(gaze.sample(rng), 1000.0);
        }
        data.extend_from_slice(&row);
    }
    FeatureMatrix::new(n, VIDEO_WIDTH, data).expect("row width")
}

/// Latent `(valence, arousal)` of each synthetic trial, recovered from the
/// raw labels.
pub fn latent_labels(t: &Trial) -> (u8, u8) {
    let th = DatasetTag::Synthetic.label_threshold();
    ((t.valence_raw > th) as u8, (t.arousal_raw > th) as u8)
}

/// Generates `n_subjects * trials_per_subject` trials, deterministic in `seed`.
///
/// Each subject cycles through the four label combinations in shuffled
/// order, so every axis is balanced to within one trial per subject.
pub fn generate_synthetic(n_subjects: usize, trials_per_subject: usize, seed: u64) -> Result<Vec<Trial>> {
    if n_subjects < 5 {
        return Err(Error::Config(format!("synthetic corpus needs at least 5 subjects, got {n_subjects}")));
    }
    if trials_per_subject == 0 {
        return Err(Error::Config("trials_per_subject must be positive".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let subject_seeds: Vec<u64> = (0..n_subjects).map(|_| master.gen()).collect();
    let per_subject: Vec<Vec<Trial>> = subject_seeds
        .par_iter()
        .enumerate()
        .map(|(s, &sseed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(sseed);
            let profile = SubjectProfile::draw(&mut rng);
            let mut combos: Vec<(u8, u8)> = (0..trials_per_subject).map(|j| ((j % 2) as u8, ((j / 2) % 2) as u8)).collect();
            combos.shuffle(&mut rng);
            let subject_id = format!("S{:02}", s + 1);
            combos
                .into_iter()
                .enumerate()
                .map(|(j, (valence, arousal))| {
                    let duration = rng.gen_range(MIN_DURATION_S..=MAX_DURATION_S);
                    let tp = (duration * PHYSIO_RATE_HZ).floor() as usize;
                    let tv = (duration * VIDEO_FPS).floor() as usize;
                    let (period, rate) = if arousal == 1 {
                        (PULSE_PERIOD_HIGH_AROUSAL_S, SCR_RATE_HIGH_AROUSAL)
                    } else {
                        (PULSE_PERIOD_LOW_AROUSAL_S, SCR_RATE_LOW_AROUSAL)
                    };
                    let c = cardiac(tp, period + profile.period_offset, &mut rng);
                    let e = eda(tp, rate, EDA_TONIC + profile.eda_offset, &mut rng);
                    let v = video(tv, valence, &profile, &mut rng);
                    Trial {
                        subject_id: subject_id.clone(),
                        trial_id: format!("{subject_id}_T{:02}", j + 1),
                        video: v,
                        physio: FeatureMatrix::from_columns(&[c, e]).expect("equal lengths"),
                        valence_raw: raw_label(valence, &mut rng),
                        arousal_raw: raw_label(arousal, &mut rng),
                        dataset: DatasetTag::Synthetic,
                    }
                })
                .collect()
        })
        .collect();
    Ok(per_subject.into_iter().flatten().collect())
}
