//! Per-channel standardization fitted on the training split.

use super::trial::{FeatureMatrix, Trial};
use crate::error::{Error, Result};

/// Channel means and standard deviations of one modality.
///
/// Only [`ChannelStats::fit`] creates statistics; applying them to held-out
/// data goes through [`ChannelStats::transform`], which never refits.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    mean: Vec<f64>,
    std: Vec<f64>,
    /// Channels whose variance was zero; their std was replaced by 1.
    pub zero_variance: Vec<usize>,
}

impl ChannelStats {
    /// Fits over the rows of every matrix (population variance).
    pub fn fit<'a, I>(matrices: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a FeatureMatrix>,
        I::IntoIter: Clone,
    {
        let iter = matrices.into_iter();
        let cols = iter.clone().next().map(FeatureMatrix::cols).ok_or_else(|| Error::Validation("no data to fit".into()))?;
        let mut count = 0usize;
        let mut sum = vec![0.0; cols];
        for m in iter.clone() {
            if m.cols() != cols {
                return Err(Error::Validation(format!("width {} != {cols} while fitting", m.cols())));
            }
            for r in 0..m.rows() {
                for (s, &v) in sum.iter_mut().zip(m.row(r)) {
                    *s += v;
                }
            }
            count += m.rows();
        }
        if count == 0 {
            return Err(Error::Validation("no rows to fit normalization on".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; cols];
        for m in iter {
            for r in 0..m.rows() {
                for ((s, &v), &mu) in sq.iter_mut().zip(m.row(r)).zip(&mean) {
                    *s += (v - mu) * (v - mu);
                }
            }
        }
        let mut zero_variance = Vec::new();
        let std = sq
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let sd = (s / count as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    zero_variance.push(c);
                    1.0
                }
            })
            .collect();
        if !zero_variance.is_empty() {
            log::warn!("zero-variance channels {zero_variance:?}; std replaced by 1");
        }
        Ok(Self { mean, std, zero_variance })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn from_parts(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Validation("normalization stats must pair positive stds with means".into()));
        }
        Ok(Self { mean, std, zero_variance: Vec::new() })
    }

    pub fn transform(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if m.cols() != self.mean.len() {
            return Err(Error::Validation(format!("width {} != fitted width {}", m.cols(), self.mean.len())));
        }
        let cols = m.cols();
        let data = m
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i % cols;
                (v - self.mean[c]) / self.std[c]
            })
            .collect();
        FeatureMatrix::new(m.rows(), cols, data)
    }
}

/// Statistics for both modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialNormalizer {
    pub video: ChannelStats,
    pub physio: ChannelStats,
}

impl TrialNormalizer {
    pub fn fit(train: &[&Trial]) -> Result<Self> {
        Ok(Self {
            video: ChannelStats::fit(train.iter().map(|t| &t.video))?,
            physio: ChannelStats::fit(train.iter().map(|t| &t.physio))?,
        })
    }

    pub fn transform(&self, t: &Trial) -> Result<Trial> {
        Ok(Trial { video: self.video.transform(&t.video)?, physio: self.physio.transform(&t.physio)?, ..t.clone() })
    }

    pub fn transform_all(&self, trials: &[Trial]) -> Result<Vec<Trial>> {
        trials.iter().map(|t| self.transform(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(values: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn constant_channel_becomes_zero() {
        let m = col(&[3.0, 3.0, 3.0]);
        let s = ChannelStats::fit([&m]).unwrap();
        assert_eq!(s.zero_variance, vec![0]);
        assert_eq!(s.transform(&m).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_point_channel() {
        let m = col(&[1.0, 3.0]);
        let s = ChannelStats::fit([&m]).unwrap();
        assert_eq!(s.transform(&m).unwrap().data(), &[-1.0, 1.0]);
    }

    #[test]
    fn fitted_split_is_standardized_and_held_out_is_not() {
        let train_a = FeatureMatrix::new(4, 2, vec![1., 10., 2., 20., 3., 30., 4., 40.]).unwrap();
        let train_b = FeatureMatrix::new(2, 2, vec![5., 50., 6., 60.]).unwrap();
        let s = ChannelStats::fit([&train_a, &train_b]).unwrap();
        let ta = s.transform(&train_a).unwrap();
        let tb = s.transform(&train_b).unwrap();
        for c in 0..2 {
            let all: Vec<f64> = ta.column(c).into_iter().chain(tb.column(c)).collect();
            let mean = all.iter().sum::<f64>() / all.len() as f64;
            let std = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
            assert!(mean.abs() <= 1e-8);
            assert!((std - 1.0).abs() <= 1e-6);
        }
        let shifted = FeatureMatrix::new(2, 2, vec![10., 0., 12., 5.]).unwrap();
        let t = s.transform(&shifted).unwrap();
        let mean0 = t.column(0).iter().sum::<f64>() / 2.0;
        assert!(mean0.abs() > 0.5);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let s = ChannelStats::fit([&col(&[1.0, 2.0])]).unwrap();
        assert!(s.transform(&FeatureMatrix::zeros(2, 3)).is_err());
        assert!(ChannelStats::fit(std::iter::empty::<&FeatureMatrix>()).is_err());
    }
}
