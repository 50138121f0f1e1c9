//! Pitch curve and spectral envelope extraction, pitch unit conversion, and
//! the envelope augmentation helpers used by the predictor.

mod artifact;
mod augment;
mod envelope;
mod units;
mod yin;

pub use artifact::AnalysisArtifact;
pub use augment::{crop_high_bands, shift_envelope};
pub use envelope::spectral_envelope;
pub use units::{cents_between, hz_to_midi, midi_to_hz};
pub use yin::extract_pitch;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::StftConfig;

/// Knobs of the analysis front end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub stft: StftConfig,
    /// Absolute threshold on the cumulative mean normalized difference.
    pub yin_threshold: f64,
    /// YIN integration window in samples.
    pub yin_window: usize,
    /// Frames whose YIN aperiodicity is at or above this are unvoiced.
    pub max_voiced_aperiodicity: f64,
    /// Frames quieter than this (RMS, dBFS) are unvoiced.
    pub min_voiced_dbfs: f64,
    pub midi_min: f64,
    pub midi_max: f64,
    /// F0 assumed by the envelope estimator on unvoiced frames.
    pub unvoiced_f0_hz: f64,
    pub max_shift_bins: usize,
    pub keep_bins: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            yin_threshold: 0.15,
            yin_window: 1024,
            max_voiced_aperiodicity: 0.2,
            min_voiced_dbfs: -40.0,
            midi_min: 33.0,
            midi_max: 84.0,
            unvoiced_f0_hz: 160.0,
            max_shift_bins: 24,
            keep_bins: 256,
        }
    }
}

/// Per-frame fundamental frequency on the STFT frame grid.
///
/// Unvoiced frames hold values interpolated (in MIDI space) from their voiced
/// neighbours, so the curve is finite everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchCurve {
    pub f0_midi: Vec<f64>,
    pub voiced: Vec<bool>,
    /// YIN aperiodicity per frame, clamped to [0, 1].
    pub aperiodicity: Vec<f64>,
    pub hop: usize,
    pub sample_rate: u32,
}

impl PitchCurve {
    pub fn len(&self) -> usize {
        self.f0_midi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_midi.is_empty()
    }

    /// A fully voiced curve (aperiodicity 0) built from MIDI values.
    pub fn from_midi(f0_midi: Vec<f64>, hop: usize, sample_rate: u32) -> Self {
        let n = f0_midi.len();
        Self {
            f0_midi,
            voiced: vec![true; n],
            aperiodicity: vec![0.0; n],
            hop,
            sample_rate,
        }
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.voiced.is_empty() {
            return 0.0;
        }
        self.voiced.iter().filter(|&&v| v).count() as f64 / self.voiced.len() as f64
    }

    pub fn voiced_values(&self) -> Vec<f64> {
        self.f0_midi
            .iter()
            .zip(&self.voiced)
            .filter(|(_, &v)| v)
            .map(|(f, _)| *f)
            .collect()
    }

    /// Replaces unvoiced frames by linear interpolation between the nearest
    /// voiced frames; edges hold the nearest voiced value and a curve with no
    /// voiced frame becomes constant `fallback`.
    pub fn fill_unvoiced(&mut self, fallback: f64) {
        let voiced_idx: Vec<usize> = (0..self.len()).filter(|&i| self.voiced[i]).collect();
        if voiced_idx.is_empty() {
            self.f0_midi.iter_mut().for_each(|v| *v = fallback);
            return;
        }
        let first = voiced_idx[0];
        let last = *voiced_idx.last().unwrap();
        for i in 0..first {
            self.f0_midi[i] = self.f0_midi[first];
        }
        for i in last + 1..self.len() {
            self.f0_midi[i] = self.f0_midi[last];
        }
        for pair in voiced_idx.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b > a + 1 {
                let (va, vb) = (self.f0_midi[a], self.f0_midi[b]);
                for i in a + 1..b {
                    let t = (i - a) as f64 / (b - a) as f64;
                    self.f0_midi[i] = va + t * (vb - va);
                }
            }
        }
    }
}

/// Linear-power spectral envelope, frames x (n_fft/2 + 1) bins.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEnvelope {
    pub env: Vec<Vec<f64>>,
    pub sample_rate: u32,
    pub hop: usize,
}

impl SpectralEnvelope {
    pub fn n_frames(&self) -> usize {
        self.env.len()
    }

    pub fn n_bins(&self) -> usize {
        self.env.first().map_or(0, |f| f.len())
    }

    /// Mean over frames, per bin.
    pub fn time_average(&self) -> Vec<f64> {
        let n = self.n_bins();
        let mut avg = vec![0.0; n];
        for frame in &self.env {
            for (a, v) in avg.iter_mut().zip(frame) {
                *a += v;
            }
        }
        let frames = self.n_frames().max(1) as f64;
        avg.iter_mut().for_each(|a| *a /= frames);
        avg
    }

    pub(crate) fn check_aligned(&self, p: &PitchCurve) -> Result<()> {
        if self.n_frames() != p.len() {
            return Err(Error::InvalidInput(format!(
                "envelope has {} frames but pitch curve has {}",
                self.n_frames(),
                p.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_unvoiced_interpolates_and_holds_edges() {
        let mut p = PitchCurve::from_midi(vec![0.0, 60.0, 0.0, 0.0, 63.0, 0.0], 512, 32_000);
        p.voiced = vec![false, true, false, false, true, false];
        p.fill_unvoiced(50.0);
        assert_eq!(p.f0_midi, vec![60.0, 60.0, 61.0, 62.0, 63.0, 63.0]);
    }

    #[test]
    fn fill_unvoiced_without_voicing_uses_fallback() {
        let mut p = PitchCurve::from_midi(vec![0.0; 4], 512, 32_000);
        p.voiced = vec![false; 4];
        p.fill_unvoiced(51.5);
        assert!(p.f0_midi.iter().all(|&v| v == 51.5));
    }
}
