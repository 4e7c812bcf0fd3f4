//! The complete network: modality backbones feeding the fusion transformer.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backbone::Backbone;
use super::config::{FusionMode, MvpConfig};
use super::fusion::{FusionOutput, FusionTransformer};
use crate::checkpoint::Checkpoint;
use crate::data::PaddedBatch;
use crate::error::{Error, Result};
use crate::optim::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

const PARAM_PREFIX: &str = "param.";
const CONFIG_META: &str = "model_config";

#[derive(Clone, Debug)]
pub struct Mvp<T> {
    pub cfg: MvpConfig,
    pub params: ParamStore<T>,
    video: Option<Backbone>,
    physio: Option<Backbone>,
    pub fusion: FusionTransformer,
}

impl<T: Scalar> Mvp<T> {
    /// Builds the network with weights drawn from `seed`. Backbones the mode
    /// does not use are not created.
    pub fn new(cfg: MvpConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let video = if cfg.mode.uses_video() {
            Some(Backbone::new("video", cfg.video.clone(), &mut params, &mut rng)?)
        } else {
            None
        };
        let physio = if cfg.mode.uses_physio() {
            Some(Backbone::new("physio", cfg.physio.clone(), &mut params, &mut rng)?)
        } else {
            None
        };
        let fusion = FusionTransformer::new("fusion", cfg.model.clone(), &mut params, &mut rng)?;
        Ok(Self { cfg, params, video, physio, fusion })
    }

    pub fn mode(&self) -> FusionMode {
        self.cfg.mode
    }

    pub fn video_backbone(&self) -> Option<&Backbone> {
        self.video.as_ref()
    }

    pub fn physio_backbone(&self) -> Option<&Backbone> {
        self.physio.as_ref()
    }

    /// One trial: `video` `[TV_max, 42]`, `physio` `[TP_max, 2]` -> logits `[1, 2]`.
    pub fn forward_trial(
        &self,
        tape: &mut Tape<T>,
        pv: &[Var],
        video: Var,
        physio: Var,
        rng: Option<&mut (dyn RngCore + 'static)>,
    ) -> Result<FusionOutput> {
        let tokens = |bb: &Option<Backbone>, tape: &mut Tape<T>, x: Var| -> Result<Var> {
            bb.as_ref().expect("backbone exists for the active mode").forward(tape, pv, x)
        };
        let (q, kv) = match self.cfg.mode {
            FusionMode::Fused => {
                let v = tokens(&self.video, tape, video)?;
                (tokens(&self.physio, tape, physio)?, v)
            }
            FusionMode::VideoOnly => {
                let v = tokens(&self.video, tape, video)?;
                (v, v)
            }
            FusionMode::PhysioOnly => {
                let p = tokens(&self.physio, tape, physio)?;
                (p, p)
            }
        };
        self.fusion.forward(tape, pv, q, kv, rng)
    }

    /// Logits `[B, 2]` for a padded batch, trial by trial.
    pub fn forward_batch(&self, tape: &mut Tape<T>, pv: &[Var], batch: &PaddedBatch<T>, mut rng: Option<&mut (dyn RngCore + 'static)>) -> Result<Var> {
        let mut rows = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let v = if self.cfg.mode.uses_video() { batch.video_of(i)? } else { Tensor::zeros(&[1, 1]) };
            let p = if self.cfg.mode.uses_physio() { batch.physio_of(i)? } else { Tensor::zeros(&[1, 1]) };
            let (v, p) = (tape.constant(v), tape.constant(p));
            rows.push(self.forward_trial(tape, pv, v, p, rng.as_deref_mut())?.logits);
        }
        tape.concat_rows(&rows)
    }

    /// Inference-mode logits `[B, 2]`.
    pub fn predict(&self, batch: &PaddedBatch<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let pv = self.params.register(&mut tape);
        let y = self.forward_batch(&mut tape, &pv, batch, None)?;
        Ok(tape.value(y).clone())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::default();
        ck.meta.insert(CONFIG_META.into(), serde_json::to_string(&self.cfg).map_err(|e| Error::Validation(e.to_string()))?);
        ck.push_params(PARAM_PREFIX, &self.params);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let text = ck.meta.get(CONFIG_META).ok_or_else(|| Error::Validation(format!("checkpoint lacks meta {CONFIG_META}")))?;
        let cfg: MvpConfig = serde_json::from_str(text).map_err(|e| Error::Validation(format!("bad model config: {e}")))?;
        let mut model = Self::new(cfg, 0)?;
        ck.load_params(PARAM_PREFIX, &mut model.params)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, pad_batch, scan_max_lengths, Thresholds, Trial};

    fn tiny_batch(n: usize) -> (Vec<Trial>, usize, usize) {
        let trials: Vec<Trial> = generate_synthetic(5, 1, 3).unwrap().into_iter().take(n).collect();
        let short: Vec<Trial> = trials
            .into_iter()
            .map(|mut t| {
                t.video = t.video.head(20);
                t.physio = t.physio.head(60);
                t
            })
            .collect();
        let (tv, tp) = scan_max_lengths(&short);
        (short, tv, tp)
    }

    #[test]
    fn batch_of_eight_gives_eight_rows() {
        let trials: Vec<Trial> = generate_synthetic(8, 1, 1)
            .unwrap()
            .into_iter()
            .map(|mut t| {
                t.video = t.video.head(12);
                t.physio = t.physio.head(30);
                t
            })
            .collect();
        let refs: Vec<&Trial> = trials.iter().collect();
        let batch = pad_batch::<f64>(&refs, 12, 30, Thresholds::uniform(4.5)).unwrap();
        let model = Mvp::<f64>::new(MvpConfig::tiny(12, 30), 0).unwrap();
        assert_eq!(model.predict(&batch).unwrap().shape(), &[8, 2]);
    }

    #[test]
    fn identical_trials_give_identical_rows() {
        let (trials, tv, tp) = tiny_batch(1);
        let batch = pad_batch::<f64>(&[&trials[0], &trials[0]], tv, tp, Thresholds::uniform(4.5)).unwrap();
        let y = Mvp::<f64>::new(MvpConfig::tiny(tv, tp), 5).unwrap().predict(&batch).unwrap();
        assert_eq!(y.data()[0..2], y.data()[2..4]);
    }

    #[test]
    fn unimodal_models_skip_the_other_backbone() {
        let mut cfg = MvpConfig::tiny(20, 60);
        cfg.mode = FusionMode::VideoOnly;
        let m = Mvp::<f64>::new(cfg.clone(), 0).unwrap();
        assert!(m.physio_backbone().is_none());
        assert!(m.params.iter().all(|(n, _)| !n.starts_with("physio.")));
        cfg.mode = FusionMode::PhysioOnly;
        assert!(Mvp::<f64>::new(cfg, 0).unwrap().video_backbone().is_none());
    }

    #[test]
    fn checkpoint_restores_predictions() {
        let (trials, tv, tp) = tiny_batch(3);
        let refs: Vec<&Trial> = trials.iter().collect();
        let batch = pad_batch::<f64>(&refs, tv, tp, Thresholds::uniform(4.5)).unwrap();
        let m = Mvp::<f64>::new(MvpConfig::tiny(tv, tp), 9).unwrap();
        let ck = Checkpoint::from_bytes(&m.to_checkpoint().unwrap().to_bytes().unwrap()).unwrap();
        let back = Mvp::<f64>::from_checkpoint(&ck).unwrap();
        assert_eq!(back.predict(&batch).unwrap(), m.predict(&batch).unwrap());
    }

    #[test]
    fn works_in_f32() {
        let (trials, tv, tp) = tiny_batch(2);
        let refs: Vec<&Trial> = trials.iter().collect();
        let b64 = pad_batch::<f64>(&refs, tv, tp, Thresholds::uniform(4.5)).unwrap();
        let b32 = pad_batch::<f32>(&refs, tv, tp, Thresholds::uniform(4.5)).unwrap();
        let y64 = Mvp::<f64>::new(MvpConfig::tiny(tv, tp), 4).unwrap().predict(&b64).unwrap();
        let y32 = Mvp::<f32>::new(MvpConfig::tiny(tv, tp), 4).unwrap().predict(&b32).unwrap();
        for (a, b) in y64.data().iter().zip(y32.data()) {
            assert!((a - *b as f64).abs() < 1e-3);
        }
    }
}
