//! Deterministic signal primitives shared by every other module: the
//! [`Waveform`] carrier, STFT/ISTFT, the Haar wavelet transform and WAV I/O.

mod dwt;
mod resample;
mod stft;
mod wav;

pub use dwt::{haar_dwt, haar_idwt, haar_packet, HaarBands};
pub use resample::resample;
pub(crate) use stft::reflect_index;
pub use stft::{hann_window, istft, stft, ComplexSpectrogram, StftConfig};
pub use wav::{load_wav, save_wav};

use crate::error::{Error, Result};

/// Default pipeline sample rate in Hz.
pub const DEFAULT_SAMPLE_RATE: u32 = 32_000;

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Fails unless the waveform is non-empty and entirely finite.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidInput("empty waveform".into()));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(())
    }

    /// Clamps samples into [-1, 1] and returns how many were clipped.
    pub fn clip(&mut self) -> usize {
        let mut clipped = 0;
        for s in &mut self.samples {
            if *s > 1.0 || *s < -1.0 {
                *s = s.clamp(-1.0, 1.0);
                clipped += 1;
            }
        }
        if clipped > 0 {
            log::warn!("clipped {clipped} samples to [-1, 1]");
        }
        clipped
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

/// Ratio of signal power to error power in dB.
pub fn snr_db(reference: &[f64], estimate: &[f64]) -> f64 {
    let signal: f64 = reference.iter().map(|x| x * x).sum();
    let noise: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if noise == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (signal / noise).log10()
}
