use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mse_pitch_loss, PitchPredictor, PredictorBatch, PredictorConfig};
use crate::analysis::{shift_envelope, PitchCurve, SpectralEnvelope};
use crate::error::{Error, Result};
use crate::history::LossHistory;
use crate::nn::{clip_grad_norm, AdamW, AdamWConfig, Binder, Graph};
use crate::notes::NoteSequence;

/// A training clip before augmentation: full-band envelope, reference notes
/// and the analysed pitch curve that serves as target.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorExample {
    pub notes: Vec<Option<u8>>,
    pub envelope: SpectralEnvelope,
    pub pitch: PitchCurve,
}

impl PredictorExample {
    pub fn new(
        notes: &NoteSequence,
        envelope: SpectralEnvelope,
        pitch: PitchCurve,
    ) -> Result<Self> {
        if envelope.n_frames() != pitch.len() {
            return Err(Error::InvalidInput(format!(
                "envelope has {} frames, pitch curve {}",
                envelope.n_frames(),
                pitch.len()
            )));
        }
        Ok(Self {
            notes: notes.frame_notes(pitch.len()),
            envelope,
            pitch,
        })
    }

    pub fn frames(&self) -> usize {
        self.pitch.len()
    }

    /// Shifts the envelope by `shift_bins`, then crops it to the model band.
    pub fn batch(
        &self,
        cfg: &PredictorConfig,
        shift_bins: i32,
        max_shift: usize,
    ) -> Result<PredictorBatch> {
        let env = if shift_bins == 0 {
            self.envelope.clone()
        } else {
            shift_envelope(&self.envelope, shift_bins, max_shift)?
        };
        PredictorBatch::new(
            cfg,
            &self.notes,
            &env,
            self.pitch.f0_midi.clone(),
            self.pitch.voiced.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPredictorConfig {
    pub steps: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Random envelope shifting; off only for ablations.
    pub augment: bool,
    pub max_shift_bins: usize,
    pub clip_grad_norm: Option<f64>,
    /// Anneal the learning rate from `optimizer.lr` to zero along a half
    /// cosine over `steps`.
    pub cosine_decay: bool,
}

impl Default for TrainPredictorConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            optimizer: AdamWConfig {
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.98,
                ..AdamWConfig::default()
            },
            seed: 0,
            augment: true,
            max_shift_bins: 24,
            clip_grad_norm: Some(10.0),
            cosine_decay: true,
        }
    }
}

#[derive(Debug)]
pub struct TrainedPredictor {
    pub model: PitchPredictor,
    pub optimizer: AdamW,
    /// Column `loss`, one row per step.
    pub history: LossHistory,
}

/// One clip per step, drawn uniformly; each draw gets a fresh envelope shift
/// when augmentation is on.
pub fn train_predictor(
    data: &[PredictorExample],
    model_cfg: PredictorConfig,
    cfg: &TrainPredictorConfig,
) -> Result<TrainedPredictor> {
    if data.is_empty() {
        return Err(Error::InvalidInput(
            "predictor training set is empty".into(),
        ));
    }
    let model = PitchPredictor::new(model_cfg, cfg.seed)?;
    continue_training(model, None, data, cfg)
}

/// Resumes from an existing model (and optimizer state, if any).
pub fn continue_training(
    mut model: PitchPredictor,
    optimizer: Option<AdamW>,
    data: &[PredictorExample],
    cfg: &TrainPredictorConfig,
) -> Result<TrainedPredictor> {
    if data.is_empty() {
        return Err(Error::InvalidInput(
            "predictor training set is empty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut opt = optimizer.unwrap_or_else(|| AdamW::new(cfg.optimizer, &model.store));
    let mut history = LossHistory::new(&["loss"]);
    let max = cfg.max_shift_bins as i32;
    for step in 0..cfg.steps {
        let ex = &data[rng.gen_range(0..data.len())];
        let shift = if cfg.augment && max > 0 {
            rng.gen_range(-max..=max)
        } else {
            0
        };
        let batch = ex.batch(&model.config, shift, cfg.max_shift_bins)?;
        let (grads, loss) = {
            let g = Graph::new();
            let pred = model.forward(
                &Binder::train(&model.store),
                &g,
                &batch.notes,
                &batch.env,
                Some(&mut rng),
            )?;
            let loss = mse_pitch_loss(pred, &batch.target_f0_midi, &batch.voiced_mask)?;
            (g.backward(loss)?, loss.item())
        };
        model.store.zero_grad();
        grads.accumulate(&mut model.store);
        if let Some(max_norm) = cfg.clip_grad_norm {
            clip_grad_norm(&mut model.store, max_norm);
        }
        if cfg.cosine_decay {
            let progress = step as f64 / cfg.steps as f64;
            opt.config.lr =
                cfg.optimizer.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        }
        opt.step(&mut model.store)?;
        history.push(vec![loss]);
        if (step + 1) % 100 == 0 {
            log::debug!("predictor step {} loss {loss:.5}", step + 1);
        }
    }
    Ok(TrainedPredictor {
        model,
        optimizer: opt,
        history,
    })
}

/// Mean masked MSE of `model` over `data`, each clip's envelope shifted by
/// `shift_bins` (no dropout).
pub fn evaluate_predictor(
    model: &PitchPredictor,
    data: &[PredictorExample],
    shift_bins: i32,
    max_shift: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("evaluation set is empty".into()));
    }
    let mut total = 0.0;
    for ex in data {
        let batch = ex.batch(&model.config, shift_bins, max_shift)?;
        let g = Graph::new();
        let pred = model.forward(
            &Binder::frozen(&model.store),
            &g,
            &batch.notes,
            &batch.env,
            None,
        )?;
        total += mse_pitch_loss(pred, &batch.target_f0_midi, &batch.voiced_mask)?.item();
    }
    Ok(total / data.len() as f64)
}
