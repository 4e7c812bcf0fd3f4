use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary confusion counts, indexed `[target][prediction]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[usize; 2]; 2],
}

impl Confusion {
    pub fn from_pairs(preds: &[u8], targets: &[u8]) -> Result<Self> {
        if preds.len() != targets.len() {
            return Err(Error::Validation(format!("{} predictions for {} targets", preds.len(), targets.len())));
        }
        if preds.is_empty() {
            return Err(Error::Validation("weighted F1 of no samples".into()));
        }
        let mut c = Confusion::default();
        for (&p, &t) in preds.iter().zip(targets) {
            if p > 1 || t > 1 {
                return Err(Error::Validation(format!("non-binary pair ({p}, {t})")));
            }
            c.counts[t as usize][p as usize] += 1;
        }
        Ok(c)
    }

    pub fn support(&self) -> [usize; 2] {
        [self.counts[0][0] + self.counts[0][1], self.counts[1][0] + self.counts[1][1]]
    }

    pub fn total(&self) -> usize {
        self.support().iter().sum()
    }

    /// F1 of `class`; zero when it has no true and no predicted members.
    pub fn f1(&self, class: usize) -> f64 {
        let other = 1 - class;
        let tp = self.counts[class][class];
        let fp = self.counts[other][class];
        let fn_ = self.counts[class][other];
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    }

    /// Per-class F1 weighted by class support.
    pub fn weighted_f1(&self) -> f64 {
        let s = self.support();
        let n = self.total() as f64;
        (0..2).map(|c| s[c] as f64 / n * self.f1(c)).sum()
    }
}

/// Support-weighted mean of the per-class F1 scores.
pub fn weighted_f1(preds: &[u8], targets: &[u8]) -> Result<f64> {
    Ok(Confusion::from_pairs(preds, targets)?.weighted_f1())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        assert_eq!(weighted_f1(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 1.0);
        let f = weighted_f1(&[0, 0, 0, 0], &[0, 0, 0, 1]).unwrap();
        assert!((f - 0.75 * 6.0 / 7.0).abs() < 1e-15);
        assert_eq!(weighted_f1(&[1, 1, 1], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(weighted_f1(&[1, 1], &[0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert!(weighted_f1(&[], &[]).is_err());
        assert!(weighted_f1(&[0], &[0, 1]).is_err());
        assert!(weighted_f1(&[2], &[0]).is_err());
    }

    #[test]
    fn balanced_symmetric_case_equals_accuracy() {
        // 4 per class, one error in each direction.
        let targets = [0, 0, 0, 0, 1, 1, 1, 1];
        let preds = [0, 0, 0, 1, 1, 1, 1, 0];
        assert!((weighted_f1(&preds, &targets).unwrap() - 0.75).abs() < 1e-15);
    }
}
