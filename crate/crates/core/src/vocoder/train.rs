use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{discriminator_loss, generator_loss, Discriminators, SfVocoder, VocoderConfig};
use crate::analysis::{PitchCurve, SpectralEnvelope};
use crate::error::{Error, Result};
use crate::history::LossHistory;
use crate::nn::{clip_grad_norm, AdamW, AdamWConfig, Binder, Graph, Tensor};
use crate::signal::Waveform;

/// Recording plus its analysis, frame-aligned with the generator hop.
#[derive(Debug, Clone)]
pub struct VocoderExample {
    pub waveform: Waveform,
    pub bins: Vec<usize>,
    pub envelope: Vec<Vec<f64>>,
}

impl VocoderExample {
    /// Unvoiced frames are mapped to the unvoiced bin. The waveform is zero
    /// padded or truncated to `frames * hop`.
    pub fn new(
        model: &SfVocoder,
        waveform: &Waveform,
        pitch: &PitchCurve,
        sp: &SpectralEnvelope,
    ) -> Result<Self> {
        if pitch.len() != sp.n_frames() || pitch.is_empty() {
            return Err(Error::InvalidInput(format!(
                "pitch ({}) and envelope ({}) frame counts differ or are zero",
                pitch.len(),
                sp.n_frames()
            )));
        }
        if waveform.sample_rate != model.config.sample_rate {
            return Err(Error::InvalidInput(format!(
                "waveform at {} Hz, vocoder expects {} Hz",
                waveform.sample_rate, model.config.sample_rate
            )));
        }
        let mut samples = waveform.samples.clone();
        samples.resize(pitch.len() * model.config.hop(), 0.0);
        Ok(Self {
            waveform: Waveform::new(samples, waveform.sample_rate),
            bins: model.binning.bins_masked(&pitch.f0_midi, &pitch.voiced),
            envelope: sp.env.clone(),
        })
    }

    pub fn frames(&self) -> usize {
        self.bins.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainVocoderConfig {
    pub steps: usize,
    pub generator_optimizer: AdamWConfig,
    pub discriminator_optimizer: AdamWConfig,
    pub seed: u64,
    /// Random crop length; whole clips are used when they are shorter.
    pub segment_frames: usize,
    pub clip_grad_norm: Option<f64>,
    /// Stop once the STFT loss falls to this value.
    pub target_stft_loss: Option<f64>,
    /// Wall-clock limit in seconds.
    pub time_limit_secs: Option<f64>,
}

impl Default for TrainVocoderConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            generator_optimizer: AdamWConfig::default(),
            discriminator_optimizer: AdamWConfig::default(),
            seed: 0,
            segment_frames: 32,
            clip_grad_norm: None,
            target_stft_loss: None,
            time_limit_secs: None,
        }
    }
}

#[derive(Debug)]
pub struct TrainedVocoder {
    pub model: SfVocoder,
    pub discriminators: Discriminators,
    pub generator_optimizer: AdamW,
    pub discriminator_optimizer: AdamW,
    /// Columns `d_loss, g_loss, adversarial, feature_matching, stft`.
    pub history: LossHistory,
}

pub const HISTORY_COLUMNS: [&str; 5] = [
    "d_loss",
    "g_loss",
    "adversarial",
    "feature_matching",
    "stft",
];

/// Alternating adversarial training. Each step runs the generator once; the
/// discriminators update on the detached output, then the generator updates
/// against the refreshed, frozen discriminators.
pub fn train_vocoder(
    data: &[VocoderExample],
    model_cfg: VocoderConfig,
    cfg: &TrainVocoderConfig,
) -> Result<TrainedVocoder> {
    if data.is_empty() {
        return Err(Error::InvalidInput("vocoder training set is empty".into()));
    }
    if cfg.segment_frames == 0 {
        return Err(Error::Config("segment_frames must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = SfVocoder::new(model_cfg, cfg.seed)?;
    let mut disc = Discriminators::new(&model.config, &mut rng)?;
    let mut g_opt = AdamW::new(cfg.generator_optimizer, &model.store);
    let mut d_opt = AdamW::new(cfg.discriminator_optimizer, &disc.store);
    let mut history = LossHistory::new(&HISTORY_COLUMNS);
    let hop = model.config.hop();
    let started = Instant::now();

    for step in 0..cfg.steps {
        let ex = &data[rng.gen_range(0..data.len())];
        let n = cfg.segment_frames.min(ex.frames());
        let start = rng.gen_range(0..=ex.frames() - n);
        let bins = &ex.bins[start..start + n];
        let env = &ex.envelope[start..start + n];
        let target = ex.waveform.samples[start * hop..(start + n) * hop].to_vec();

        let g = Graph::new();
        let fake = model.forward(&Binder::train(&model.store), &g, bins, env)?;
        let real = g.constant(Tensor::new(&[1, 1, n * hop], target)?)?;

        let d_loss = {
            let p = Binder::train(&disc.store);
            let (real_out, _) = disc.forward(&p, real)?;
            let (fake_out, _) = disc.forward(&p, fake.detach()?)?;
            discriminator_loss(&real_out, &fake_out)?
        };
        let d_grads = g.backward(d_loss)?;
        disc.store.zero_grad();
        d_grads.accumulate(&mut disc.store);
        drop(d_grads);
        if let Some(max) = cfg.clip_grad_norm {
            clip_grad_norm(&mut disc.store, max);
        }
        d_opt.step(&mut disc.store)?;

        let parts = {
            let p = Binder::frozen(&disc.store);
            let (real_out, _) = disc.forward(&p, real)?;
            let (fake_out, _) = disc.forward(&p, fake)?;
            generator_loss(&real_out, &fake_out, real, fake, &model.config)?
        };
        let g_grads = g.backward(parts.total)?;
        model.store.zero_grad();
        g_grads.accumulate(&mut model.store);
        drop(g_grads);
        if let Some(max) = cfg.clip_grad_norm {
            clip_grad_norm(&mut model.store, max);
        }
        g_opt.step(&mut model.store)?;

        let stft = parts.stft.item();
        history.push(vec![
            d_loss.item(),
            parts.total.item(),
            parts.adversarial.item(),
            parts.feature_matching.item(),
            stft,
        ]);
        if (step + 1) % 50 == 0 {
            log::debug!(
                "vocoder step {} d {:.4} g {:.4} stft {stft:.4} ({:.1}s)",
                step + 1,
                d_loss.item(),
                parts.total.item(),
                started.elapsed().as_secs_f64()
            );
        }
        if cfg.target_stft_loss.is_some_and(|t| stft <= t) {
            log::info!("vocoder reached the target stft loss at step {}", step + 1);
            break;
        }
        if cfg
            .time_limit_secs
            .is_some_and(|t| started.elapsed().as_secs_f64() > t)
        {
            log::warn!(
                "vocoder training stopped by the time limit at step {}",
                step + 1
            );
            break;
        }
    }
    Ok(TrainedVocoder {
        model,
        discriminators: disc,
        generator_optimizer: g_opt,
        discriminator_optimizer: d_opt,
        history,
    })
}

/// STFT loss of the model's reconstruction of a whole clip, no training.
pub fn reconstruction_stft_loss(model: &SfVocoder, ex: &VocoderExample) -> Result<f64> {
    let g = Graph::new();
    let fake = model.forward(&Binder::frozen(&model.store), &g, &ex.bins, &ex.envelope)?;
    let real = g.constant(Tensor::new(
        &[1, 1, ex.waveform.len()],
        ex.waveform.samples.clone(),
    )?)?;
    Ok(super::stft_loss(real, fake, model.config.loss_stft)?.item())
}
