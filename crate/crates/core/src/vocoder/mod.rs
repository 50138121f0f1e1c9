//! Pitch-controllable neural vocoder: the source-filter block turns pitch and
//! spectral envelope into a hidden representation, a resolution-connected
//! generator upsamples it to audio, and period / scale discriminator banks
//! drive adversarial training.

mod discriminator;
mod generator;
mod loss;
mod sf_block;
mod train;

pub use discriminator::MIN_DISC_LEN;
pub use discriminator::{BankOutput, Discriminators, PeriodDiscriminator, ScaleDiscriminator};
pub use generator::{Generator, MrfResBlock};
pub use loss::{
    discriminator_loss, feature_matching_loss, feature_matching_per_bank, generator_loss,
    stft_loss, GeneratorLossParts,
};
pub use sf_block::{PitchBinning, SfBlock, SfResBlock};
pub use train::{
    reconstruction_stft_loss, train_vocoder, TrainVocoderConfig, TrainedVocoder, VocoderExample,
    HISTORY_COLUMNS,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{PitchCurve, SpectralEnvelope};
use crate::error::{Error, Result};
use crate::nn::{Binder, Checkpoint, Graph, ParamStore, Var};
use crate::signal::{StftConfig, Waveform};

pub const CHECKPOINT_KIND: &str = "sf-vocoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocoderConfig {
    pub sample_rate: u32,
    /// Envelope bins fed to the source-filter block (n_fft / 2 + 1).
    pub n_env_bins: usize,
    pub sf_kernel: usize,
    pub sf_dilations: Vec<usize>,
    /// Start every voiced pitch-embedding row as a harmonic comb over the
    /// envelope bins instead of small random values.
    pub harmonic_embedding: bool,
    pub upsample_rates: Vec<usize>,
    pub upsample_kernels: Vec<usize>,
    pub resblock_kernels: Vec<usize>,
    pub resblock_dilations: Vec<[usize; 2]>,
    pub base_channels: usize,
    /// Channel floor for the deepest stages, which would otherwise halve
    /// down to a single channel.
    pub min_channels: usize,
    pub top_k: usize,
    pub input_kernel: usize,
    pub output_kernel: usize,
    pub max_frames: usize,
    pub periods: Vec<usize>,
    pub scale_levels: usize,
    pub disc_channels: usize,
    pub lambda_fm: f64,
    pub lambda_stft: f64,
    pub loss_stft: StftConfig,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        Self {
            sample_rate: 32_000,
            n_env_bins: 1025,
            sf_kernel: 3,
            sf_dilations: vec![1, 2, 1, 2],
            harmonic_embedding: false,
            upsample_rates: vec![8, 4, 4, 2, 2],
            upsample_kernels: vec![16, 8, 8, 4, 4],
            resblock_kernels: vec![3, 7, 11],
            resblock_dilations: vec![[1, 1], [3, 1], [5, 1], [7, 1]],
            base_channels: 32,
            min_channels: 4,
            top_k: 3,
            input_kernel: 7,
            output_kernel: 7,
            max_frames: 2000,
            periods: vec![2, 3, 5, 7, 11],
            scale_levels: 3,
            disc_channels: 16,
            lambda_fm: 2.0,
            lambda_stft: 45.0,
            loss_stft: StftConfig::default(),
        }
    }
}

impl VocoderConfig {
    pub fn hop(&self) -> usize {
        self.upsample_rates.iter().product()
    }

    /// Channel count after upsampling stage `i`.
    pub fn stage_channels(&self, i: usize) -> usize {
        (self.base_channels >> (i + 1))
            .max(self.min_channels)
            .max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.upsample_rates.is_empty()
            || self.upsample_rates.len() != self.upsample_kernels.len()
        {
            return bad("upsample_rates and upsample_kernels must be non-empty and paired".into());
        }
        for (&u, &k) in self.upsample_rates.iter().zip(&self.upsample_kernels) {
            if u == 0 || k < u || (k - u) % 2 != 0 {
                return bad(format!(
                    "upsample kernel {k} cannot realise rate {u} exactly"
                ));
            }
        }
        if self.top_k == 0 || self.top_k > self.upsample_rates.len() {
            return bad(format!(
                "top_k {} must be in 1..={}",
                self.top_k,
                self.upsample_rates.len()
            ));
        }
        if self.resblock_kernels.iter().any(|k| k % 2 == 0) || self.sf_kernel.is_multiple_of(2) {
            return bad("resblock kernels must be odd".into());
        }
        if self.resblock_kernels.is_empty() || self.resblock_dilations.is_empty() {
            return bad("the multi-receptive-field module needs kernels and dilations".into());
        }
        if self.n_env_bins == 0 || self.base_channels == 0 {
            return bad("n_env_bins and base_channels must be positive".into());
        }
        if self.periods.is_empty() || self.periods.contains(&0) || self.scale_levels == 0 {
            return bad("discriminators need at least one period and one scale".into());
        }
        self.loss_stft.validate()
    }

    /// Full geometry with narrow discriminators, sized for single-core
    /// training runs of a few minutes.
    pub fn toy() -> Self {
        Self {
            disc_channels: 8,
            ..Self::default()
        }
    }
}

/// Source-filter block plus generator, sharing one parameter store.
#[derive(Debug)]
pub struct SfVocoder {
    pub config: VocoderConfig,
    pub binning: PitchBinning,
    pub store: ParamStore,
    pub sf: SfBlock,
    pub generator: Generator,
}

impl SfVocoder {
    pub fn new(config: VocoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let binning = PitchBinning::default();
        let sf = SfBlock::new(&mut store, &config, &binning, &mut rng)?;
        let generator = Generator::new(&mut store, &config, &mut rng)?;
        Ok(Self {
            config,
            binning,
            store,
            sf,
            generator,
        })
    }

    /// Waveform `[1, 1, frames * hop]` from per-frame pitch bins and envelope.
    pub fn forward<'g>(
        &self,
        p: &Binder,
        g: &'g Graph,
        bins: &[usize],
        env: &[Vec<f64>],
    ) -> Result<Var<'g>> {
        if bins.len() > self.config.max_frames {
            return Err(Error::InvalidInput(format!(
                "{} frames exceed the configured maximum of {}",
                bins.len(),
                self.config.max_frames
            )));
        }
        let r = self.sf.forward(p, g, bins, env)?;
        self.generator.forward(p, r)
    }

    /// Synthesis from a pitch curve; frames unvoiced in `voiced` use the
    /// unvoiced embedding whatever their pitch value.
    pub fn synthesize(
        &self,
        f0_midi: &[f64],
        voiced: &[bool],
        sp: &SpectralEnvelope,
    ) -> Result<Waveform> {
        if f0_midi.len() != sp.n_frames() || voiced.len() != sp.n_frames() {
            return Err(Error::InvalidInput(format!(
                "pitch ({}) and envelope ({}) frame counts differ",
                f0_midi.len(),
                sp.n_frames()
            )));
        }
        let bins = self.binning.bins_masked(f0_midi, voiced);
        let g = Graph::new();
        let y = self.forward(&Binder::frozen(&self.store), &g, &bins, &sp.env)?;
        let mut w = Waveform::new(y.to_vec(), self.config.sample_rate);
        w.clip();
        Ok(w)
    }

    pub fn synthesize_curve(&self, p: &PitchCurve, sp: &SpectralEnvelope) -> Result<Waveform> {
        self.synthesize(&p.f0_midi, &p.voiced, sp)
    }

    pub fn to_checkpoint(&self, optimizer: Option<&crate::nn::AdamW>) -> Result<Checkpoint> {
        let config = serde_json::to_string(&self.config)
            .map_err(|e| Error::Format(format!("vocoder config: {e}")))?;
        Ok(Checkpoint::capture(
            CHECKPOINT_KIND,
            config,
            &self.store,
            optimizer,
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Format(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found '{}'",
                ck.kind
            )));
        }
        let config: VocoderConfig = serde_json::from_str(&ck.config)
            .map_err(|e| Error::Format(format!("vocoder config in checkpoint: {e}")))?;
        let mut model = Self::new(config, 0)?;
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }
}
