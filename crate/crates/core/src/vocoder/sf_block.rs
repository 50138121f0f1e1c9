use rand::Rng;

use super::VocoderConfig;
use crate::error::{Error, Result};
use crate::nn::layers::{Conv1d, Embedding, LRELU_SLOPE};
use crate::nn::{Binder, ConvGeometry, Graph, ParamStore, Tensor, Var};
use crate::notes::{MIDI_MAX, MIDI_MIN};

/// Pitch quantisation for the embedding: 10-cent bins centred on
/// midi 33.0, 33.1, ..., 84.0, then one bin for unvoiced frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchBinning {
    pub midi_min: f64,
    pub midi_max: f64,
    pub bins_per_semitone: usize,
}

impl Default for PitchBinning {
    fn default() -> Self {
        Self {
            midi_min: MIDI_MIN as f64,
            midi_max: MIDI_MAX as f64,
            bins_per_semitone: 10,
        }
    }
}

impl PitchBinning {
    pub fn n_voiced_bins(&self) -> usize {
        ((self.midi_max - self.midi_min) * self.bins_per_semitone as f64).round() as usize + 1
    }

    /// Voiced bins plus the unvoiced bin.
    pub fn n_bins(&self) -> usize {
        self.n_voiced_bins() + 1
    }

    pub fn unvoiced_bin(&self) -> usize {
        self.n_voiced_bins()
    }

    /// Nearest bin; pitches outside the range saturate at the end bins.
    pub fn bin(&self, midi: f64) -> usize {
        let pos = ((midi - self.midi_min) * self.bins_per_semitone as f64).round();
        pos.clamp(0.0, (self.n_voiced_bins() - 1) as f64) as usize
    }

    pub fn bin_centre(&self, bin: usize) -> Option<f64> {
        (bin < self.n_voiced_bins())
            .then(|| self.midi_min + bin as f64 / self.bins_per_semitone as f64)
    }

    pub fn bins_masked(&self, f0_midi: &[f64], voiced: &[bool]) -> Vec<usize> {
        f0_midi
            .iter()
            .zip(voiced)
            .map(|(&m, &v)| if v { self.bin(m) } else { self.unvoiced_bin() })
            .collect()
    }
}

/// Dilated residual stack run along time, independently for every envelope
/// bin with weights shared across bins, followed by a 1x1 output projection.
#[derive(Debug, Clone)]
pub struct SfResBlock {
    pub convs: Vec<Conv1d>,
    pub proj: Conv1d,
}

impl SfResBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kernel: usize,
        dilations: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let convs = dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| Conv1d::same(store, &format!("{name}.conv{i}"), 1, 1, kernel, d, rng))
            .collect::<Result<Vec<_>>>()?;
        let proj = Conv1d::new(
            store,
            &format!("{name}.proj"),
            1,
            1,
            1,
            ConvGeometry::new(1, 1, 0),
            true,
            rng,
        )?;
        Ok(Self { convs, proj })
    }

    /// `[bins, 1, T]` → `[bins, 1, T]`.
    pub fn forward<'g>(&self, p: &Binder, x: Var<'g>) -> Result<Var<'g>> {
        let mut h = x;
        for conv in &self.convs {
            h = h.add(conv.forward(p, h.leaky_relu(LRELU_SLOPE)?)?)?;
        }
        self.proj.forward(p, h)
    }

    /// Frames of context on each side.
    pub fn reach(&self) -> usize {
        self.convs
            .iter()
            .map(|c| c.geom.dilation * (c.kernel - 1) / 2)
            .sum()
    }
}

/// Row per pitch bin with a unit Gaussian bump (one analysis bin wide) at
/// every harmonic of the bin centre below Nyquist. The unvoiced row is zero.
pub fn harmonic_table(binning: &PitchBinning, n_env_bins: usize, sample_rate: f64) -> Vec<f64> {
    let bin_hz = sample_rate / (2.0 * (n_env_bins.max(2) - 1) as f64);
    let nyquist = sample_rate / 2.0;
    let mut table = vec![0.0; binning.n_bins() * n_env_bins];
    for b in 0..binning.n_voiced_bins() {
        let midi = binning.bin_centre(b).expect("voiced bin");
        let f0 = 440.0 * 2f64.powf((midi - 69.0) / 12.0);
        let row = &mut table[b * n_env_bins..(b + 1) * n_env_bins];
        let mut h = f0;
        while h < nyquist {
            let centre = h / bin_hz;
            let lo = (centre - 4.0).floor().max(0.0) as usize;
            let hi = ((centre + 4.0).ceil() as usize).min(n_env_bins - 1);
            for (k, v) in row.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *v += (-0.5 * (k as f64 - centre).powi(2)).exp();
            }
            h += f0;
        }
    }
    table
}

/// `r = sigmoid(f1(sp)) * emb(pitch) * sp + f2(sp)`, element-wise over
/// frames x bins.
#[derive(Debug, Clone)]
pub struct SfBlock {
    pub embedding: Embedding,
    pub gate: SfResBlock,
    pub aperiodic: SfResBlock,
    pub n_env_bins: usize,
}

impl SfBlock {
    pub fn new(
        store: &mut ParamStore,
        cfg: &VocoderConfig,
        binning: &PitchBinning,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let embedding = Embedding::new(
            store,
            "sf.pitch_embedding",
            binning.n_bins(),
            cfg.n_env_bins,
            rng,
        )?;
        if cfg.harmonic_embedding {
            let table = harmonic_table(binning, cfg.n_env_bins, cfg.sample_rate as f64);
            store
                .value_mut(embedding.table)
                .data_mut()
                .copy_from_slice(&table);
        }
        Ok(Self {
            embedding,
            gate: SfResBlock::new(store, "sf.f1", cfg.sf_kernel, &cfg.sf_dilations, rng)?,
            aperiodic: SfResBlock::new(store, "sf.f2", cfg.sf_kernel, &cfg.sf_dilations, rng)?,
            n_env_bins: cfg.n_env_bins,
        })
    }

    /// Returns `r` as `[1, bins, T]`, i.e. envelope bins become channels.
    pub fn forward<'g>(
        &self,
        p: &Binder,
        g: &'g Graph,
        pitch_bins: &[usize],
        env: &[Vec<f64>],
    ) -> Result<Var<'g>> {
        let t = pitch_bins.len();
        let bins = self.n_env_bins;
        if t == 0 || env.len() != t {
            return Err(Error::Contract(format!(
                "source-filter block got {t} pitch frames and {} envelope frames",
                env.len()
            )));
        }
        let mut sp = vec![0.0; bins * t];
        for (ti, frame) in env.iter().enumerate() {
            if frame.len() != bins {
                return Err(Error::Contract(format!(
                    "envelope frame {ti} has {} bins, expected {bins}",
                    frame.len()
                )));
            }
            for (k, v) in frame.iter().enumerate() {
                sp[k * t + ti] = *v;
            }
        }
        self.forward_var(p, pitch_bins, g.constant(Tensor::new(&[bins, t], sp)?)?)
    }

    /// Same as [`SfBlock::forward`] with the envelope given as a `[bins, T]`
    /// variable, so gradients can flow into it.
    pub fn forward_var<'g>(
        &self,
        p: &Binder,
        pitch_bins: &[usize],
        sp: Var<'g>,
    ) -> Result<Var<'g>> {
        let (bins, t) = (self.n_env_bins, pitch_bins.len());
        if sp.shape() != [bins, t] {
            return Err(Error::Contract(format!(
                "envelope variable has shape {:?}, expected [{bins}, {t}]",
                sp.shape()
            )));
        }
        let g = sp.graph();
        let sp_seq = sp.reshape(&[bins, 1, t])?;
        let gate = self
            .gate
            .forward(p, sp_seq)?
            .reshape(&[bins, t])?
            .sigmoid()?;
        let emb = self.embedding.forward(p, g, pitch_bins)?.t()?;
        let aperiodic = self.aperiodic.forward(p, sp_seq)?.reshape(&[bins, t])?;
        gate.mul(emb)?
            .mul(sp)?
            .add(aperiodic)?
            .reshape(&[1, bins, t])
    }
}
