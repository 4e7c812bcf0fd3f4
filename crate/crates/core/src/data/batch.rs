use super::trial::{FeatureMatrix, Trial, LABEL_MAX, LABEL_MIN, PHYSIO_WIDTH, VIDEO_WIDTH};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `raw <= threshold -> 0`, otherwise `1`.
pub fn binarize_label(raw: f64, threshold: f64) -> Result<u8> {
    if !(LABEL_MIN..=LABEL_MAX).contains(&raw) {
        return Err(Error::Validation(format!("label {raw} outside [{LABEL_MIN}, {LABEL_MAX}]")));
    }
    Ok(if raw <= threshold { 0 } else { 1 })
}

/// Valence and arousal thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub valence: f64,
    pub arousal: f64,
}

impl Thresholds {
    pub fn uniform(t: f64) -> Self {
        Self { valence: t, arousal: t }
    }

    /// `[valence, arousal]` binary labels of a trial.
    pub fn labels(&self, t: &Trial) -> Result<[u8; 2]> {
        Ok([binarize_label(t.valence_raw, self.valence)?, binarize_label(t.arousal_raw, self.arousal)?])
    }
}

/// Zero-padded inputs and binary labels of several trials.
#[derive(Clone, Debug)]
pub struct PaddedBatch<T> {
    /// `[B, TV_max, 42]`
    pub video: Tensor<T>,
    /// `[B, TP_max, 2]`
    pub physio: Tensor<T>,
    /// `[B, 2]`, columns (valence, arousal).
    pub labels: Tensor<T>,
    /// Un-padded `(TV, TP)` per trial.
    pub true_lengths: Vec<(usize, usize)>,
    pub trial_ids: Vec<String>,
}

impl<T: Scalar> PaddedBatch<T> {
    pub fn len(&self) -> usize {
        self.true_lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_lengths.is_empty()
    }

    pub fn tv_max(&self) -> usize {
        self.video.shape()[1]
    }

    pub fn tp_max(&self) -> usize {
        self.physio.shape()[1]
    }

    /// `[TV_max, 42]` video input of trial `i`.
    pub fn video_of(&self, i: usize) -> Result<Tensor<T>> {
        self.video.index_axis0(i)
    }

    /// `[TP_max, 2]` physio input of trial `i`.
    pub fn physio_of(&self, i: usize) -> Result<Tensor<T>> {
        self.physio.index_axis0(i)
    }

    /// Recovers the un-padded matrices.
    pub fn unpad(&self) -> Vec<(FeatureMatrix, FeatureMatrix)> {
        let (tv, tp) = (self.tv_max(), self.tp_max());
        let v = self.video.data();
        let p = self.physio.data();
        self.true_lengths
            .iter()
            .enumerate()
            .map(|(i, &(lv, lp))| {
                let vid = v[i * tv * VIDEO_WIDTH..(i * tv + lv) * VIDEO_WIDTH].iter().map(|x| x.to_f64_lossy()).collect();
                let phy = p[i * tp * PHYSIO_WIDTH..(i * tp + lp) * PHYSIO_WIDTH].iter().map(|x| x.to_f64_lossy()).collect();
                (
                    FeatureMatrix::new(lv, VIDEO_WIDTH, vid).expect("sizes from batch"),
                    FeatureMatrix::new(lp, PHYSIO_WIDTH, phy).expect("sizes from batch"),
                )
            })
            .collect()
    }
}

/// Pads every trial with trailing zero rows to `tv_max` / `tp_max` and
/// binarizes its labels.
pub fn pad_batch<T: Scalar>(trials: &[&Trial], tv_max: usize, tp_max: usize, thresholds: Thresholds) -> Result<PaddedBatch<T>> {
    if trials.is_empty() {
        return Err(Error::Validation("cannot pad an empty batch".into()));
    }
    let b = trials.len();
    let mut video = vec![T::zero(); b * tv_max * VIDEO_WIDTH];
    let mut physio = vec![T::zero(); b * tp_max * PHYSIO_WIDTH];
    let mut labels = Vec::with_capacity(2 * b);
    let mut true_lengths = Vec::with_capacity(b);
    for (i, t) in trials.iter().enumerate() {
        t.validate()?;
        let (lv, lp) = (t.video.rows(), t.physio.rows());
        if lv > tv_max || lp > tp_max {
            return Err(Error::Validation(format!(
                "trial {} has lengths ({lv}, {lp}) beyond the padding caps ({tv_max}, {tp_max})",
                t.trial_id
            )));
        }
        let vo = i * tv_max * VIDEO_WIDTH;
        for (dst, &src) in video[vo..vo + lv * VIDEO_WIDTH].iter_mut().zip(t.video.data()) {
            *dst = T::lit(src);
        }
        let po = i * tp_max * PHYSIO_WIDTH;
        for (dst, &src) in physio[po..po + lp * PHYSIO_WIDTH].iter_mut().zip(t.physio.data()) {
            *dst = T::lit(src);
        }
        let [v, a] = thresholds.labels(t)?;
        labels.push(T::lit(v as f64));
        labels.push(T::lit(a as f64));
        true_lengths.push((lv, lp));
    }
    Ok(PaddedBatch {
        video: Tensor::new(&[b, tv_max, VIDEO_WIDTH], video)?,
        physio: Tensor::new(&[b, tp_max, PHYSIO_WIDTH], physio)?,
        labels: Tensor::new(&[b, 2], labels)?,
        true_lengths,
        trial_ids: trials.iter().map(|t| t.trial_id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetTag;
    use proptest::prelude::*;

    fn trial(id: &str, tv: usize, tp: usize, seed: f64) -> Trial {
        Trial {
            subject_id: "s".into(),
            trial_id: id.into(),
            video: FeatureMatrix::new(tv, 42, (0..tv * 42).map(|i| seed + i as f64 * 0.01).collect()).unwrap(),
            physio: FeatureMatrix::new(tp, 2, (0..tp * 2).map(|i| seed - i as f64 * 0.5).collect()).unwrap(),
            valence_raw: 4.5,
            arousal_raw: 7.0,
            dataset: DatasetTag::Amigos,
        }
    }

    #[test]
    fn binarization_boundaries() {
        assert_eq!(binarize_label(4.5, 4.5).unwrap(), 0);
        assert_eq!(binarize_label(4.500001, 4.5).unwrap(), 1);
        assert_eq!(binarize_label(9.0, 8.99).unwrap(), 1);
        assert_eq!(binarize_label(5.0, 5.0).unwrap(), 0);
        assert!(binarize_label(0.5, 4.5).is_err());
        assert!(binarize_label(9.5, 4.5).is_err());
    }

    #[test]
    fn exact_length_is_not_padded() {
        let t = trial("a", 3, 5, 1.0);
        let b: PaddedBatch<f64> = pad_batch(&[&t], 3, 5, Thresholds::uniform(4.5)).unwrap();
        assert_eq!(b.video.data(), t.video.data());
        assert_eq!(b.physio.data(), t.physio.data());
        assert_eq!(b.labels.data(), &[0.0, 1.0]);
    }

    #[test]
    fn tail_rows_are_zero() {
        let t = trial("a", 10, 19_000, 2.0);
        let b: PaddedBatch<f64> = pad_batch(&[&t], 2_800, 19_900, Thresholds::uniform(4.5)).unwrap();
        assert_eq!(b.physio.shape(), &[1, 19_900, 2]);
        assert!(b.physio.data()[19_000 * 2..].iter().all(|&v| v == 0.0));
        assert!(b.physio.data()[19_000 * 2 - 1] != 0.0);
        assert_eq!(b.true_lengths, vec![(10, 19_000)]);
    }

    #[test]
    fn errors() {
        let e = pad_batch::<f64>(&[], 3, 3, Thresholds::uniform(4.5)).unwrap_err();
        assert_eq!(e.category(), "validation");
        let t = trial("too-long", 4, 2, 0.0);
        let e = pad_batch::<f64>(&[&t], 3, 3, Thresholds::uniform(4.5)).unwrap_err();
        assert!(e.to_string().contains("too-long"));
        let empty = trial("empty", 0, 2, 0.0);
        assert!(pad_batch::<f64>(&[&empty], 3, 3, Thresholds::uniform(4.5)).is_err());
    }

    proptest! {
        #[test]
        fn unpadding_recovers_inputs(lens in proptest::collection::vec((1usize..6, 1usize..9), 1..5)) {
            let trials: Vec<Trial> = lens.iter().enumerate().map(|(i, &(v, p))| trial(&i.to_string(), v, p, i as f64)).collect();
            let refs: Vec<&Trial> = trials.iter().collect();
            let b: PaddedBatch<f64> = pad_batch(&refs, 6, 9, Thresholds::uniform(4.5)).unwrap();
            for (t, (v, p)) in trials.iter().zip(b.unpad()) {
                prop_assert_eq!(&t.video, &v);
                prop_assert_eq!(&t.physio, &p);
            }
        }

        #[test]
        fn binarization_is_monotone(a in 1.0f64..=9.0, b in 1.0f64..=9.0, th in 1.0f64..9.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(binarize_label(lo, th).unwrap() <= binarize_label(hi, th).unwrap());
        }
    }
}
