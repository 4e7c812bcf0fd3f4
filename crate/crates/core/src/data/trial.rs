use crate::dataset::DatasetTag;
use crate::error::{Error, Result};

/// Number of per-frame video features (18 AU presence, 18 AU intensity, 6 gaze).
pub const VIDEO_WIDTH: usize = 42;
/// Physiological channels per trial: cardiac (ECG or PPG) and EDA.
pub const PHYSIO_WIDTH: usize = 2;
/// Physiological sample rate after preprocessing.
pub const PHYSIO_RATE_HZ: f64 = 128.0;
/// Video feature frame rate.
pub const VIDEO_FPS: f64 = 18.0;

/// Dense row-major `f64` matrix; zero rows are allowed.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 || rows * cols != data.len() {
            return Err(Error::Validation(format!("matrix {rows}x{cols} cannot hold {} values", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from equally long columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if cols == 0 || columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Validation("columns must be non-empty and equally long".into()));
        }
        let data = (0..rows).flat_map(|r| columns.iter().map(move |c| c[r])).collect();
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// First `rows` rows.
    pub fn head(&self, rows: usize) -> Self {
        let rows = rows.min(self.rows);
        Self { rows, cols: self.cols, data: self.data[..rows * self.cols].to_vec() }
    }
}

/// One subject-session recording with its self-reported labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub subject_id: String,
    pub trial_id: String,
    /// `[TV, 42]` per-frame AU and gaze features.
    pub video: FeatureMatrix,
    /// `[TP, 2]` cardiac and EDA samples at 128 Hz.
    pub physio: FeatureMatrix,
    pub valence_raw: f64,
    pub arousal_raw: f64,
    pub dataset: DatasetTag,
}

pub const LABEL_MIN: f64 = 1.0;
pub const LABEL_MAX: f64 = 9.0;

impl Trial {
    /// Checks widths, label range, finiteness and non-emptiness.
    pub fn validate(&self) -> Result<()> {
        let id = &self.trial_id;
        if self.video.cols() != VIDEO_WIDTH {
            return Err(Error::Validation(format!("trial {id}: video width {} != {VIDEO_WIDTH}", self.video.cols())));
        }
        if self.physio.cols() != PHYSIO_WIDTH {
            return Err(Error::Validation(format!("trial {id}: physio width {} != {PHYSIO_WIDTH}", self.physio.cols())));
        }
        if self.video.rows() == 0 || self.physio.rows() == 0 {
            return Err(Error::Validation(format!("trial {id} is empty")));
        }
        for (name, v) in [("valence", self.valence_raw), ("arousal", self.arousal_raw)] {
            if !(LABEL_MIN..=LABEL_MAX).contains(&v) {
                return Err(Error::Validation(format!("trial {id}: {name} {v} outside [1, 9]")));
            }
        }
        if !self.video.data().iter().chain(self.physio.data()).all(|x| x.is_finite()) {
            return Err(Error::Validation(format!("trial {id} contains non-finite features")));
        }
        Ok(())
    }
}

/// Longest video and physio sequence in `trials`.
pub fn scan_max_lengths(trials: &[Trial]) -> (usize, usize) {
    trials.iter().fold((0, 0), |(v, p), t| (v.max(t.video.rows()), p.max(t.physio.rows())))
}

/// Sequence caps of the AMIGOS corpus (155 s at 18 fps and 128 Hz).
pub const AMIGOS_TV_MAX: usize = 2_800;
pub const AMIGOS_TP_MAX: usize = 19_900;
