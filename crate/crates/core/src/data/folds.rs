use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::trial::Trial;
use crate::error::{Error, Result};

/// Disjoint subject groups for k-fold cross-validation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Vec<String>>,
}

/// Shuffles the distinct subjects with `seed` and deals them round-robin
/// into `k` folds, so fold sizes differ by at most one.
pub fn make_folds(subjects: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut unique: Vec<String> = subjects.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if unique.len() < k {
        return Err(Error::Validation(format!("{} subjects cannot fill {k} folds", unique.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    unique.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, s) in unique.into_iter().enumerate() {
        folds[i % k].push(s);
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(FoldPlan { k, folds })
}

impl FoldPlan {
    /// Subjects held out in fold `i`.
    pub fn test_subjects(&self, i: usize) -> &[String] {
        &self.folds[i]
    }

    /// `(train, test)` trials of fold `i`.
    pub fn split<'a>(&self, i: usize, trials: &'a [Trial]) -> (Vec<&'a Trial>, Vec<&'a Trial>) {
        let test: BTreeSet<&str> = self.folds[i].iter().map(String::as_str).collect();
        trials.iter().partition(|t| !test.contains(t.subject_id.as_str()))
    }

    /// Checks disjointness, coverage and balance against a subject list.
    pub fn verify(&self, subjects: &[String]) -> Result<()> {
        let all: BTreeSet<&str> = subjects.iter().map(String::as_str).collect();
        let mut seen = BTreeSet::new();
        for f in &self.folds {
            for s in f {
                if !seen.insert(s.as_str()) {
                    return Err(Error::Validation(format!("subject {s} appears in two folds")));
                }
            }
        }
        if seen != all {
            return Err(Error::Validation("folds do not cover exactly the subject set".into()));
        }
        let sizes: Vec<usize> = self.folds.iter().map(Vec::len).collect();
        let (lo, hi) = (sizes.iter().min().copied().unwrap_or(0), sizes.iter().max().copied().unwrap_or(0));
        if hi - lo > 1 {
            return Err(Error::Validation(format!("unbalanced folds {sizes:?}")));
        }
        Ok(())
    }
}
