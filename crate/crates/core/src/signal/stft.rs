use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

/// Frame geometry of the short-time Fourier transform. The window is always a
/// periodic Hann window of length `n_fft`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 2048,
            hop: 512,
        }
    }
}

impl StftConfig {
    pub fn new(n_fft: usize, hop: usize) -> Result<Self> {
        let cfg = Self { n_fft, hop };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.hop == 0 {
            return Err(Error::Config(format!(
                "stft needs n_fft >= 2 and hop >= 1, got n_fft={} hop={}",
                self.n_fft, self.hop
            )));
        }
        if !self.n_fft.is_multiple_of(self.hop) {
            return Err(Error::Config(format!(
                "hop {} does not divide n_fft {}",
                self.hop, self.n_fft
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    /// True when the squared Hann window overlap-adds to a constant at this
    /// hop, which is what [`istft`] requires.
    pub fn satisfies_cola(&self) -> bool {
        if self.validate().is_err() {
            return false;
        }
        let w = hann_window(self.n_fft);
        let mut sums = vec![0.0; self.hop];
        for (n, wn) in w.iter().enumerate() {
            sums[n % self.hop] += wn * wn;
        }
        let max = sums.iter().cloned().fold(f64::MIN, f64::max);
        let min = sums.iter().cloned().fold(f64::MAX, f64::min);
        min > 0.0 && (max - min) <= 1e-9 * max
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Frames x bins complex spectrum; frame `t` is centred on sample `t * hop`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: Vec<Vec<Complex64>>,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn magnitudes(&self) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .map(|f| f.iter().map(|c| c.norm()).collect())
            .collect()
    }
}

/// Mirror an out-of-range index back into `0..n` (reflect padding without
/// repeating the edge sample).
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Reflect-pads `x` by `pad` samples on both ends.
pub(crate) fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    (0..n + 2 * pad)
        .map(|i| x[reflect_index(i as isize - pad as isize, n)])
        .collect()
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    if w.is_empty() {
        return Err(Error::InvalidInput("stft of an empty waveform".into()));
    }
    cfg.validate()?;
    let n_fft = cfg.n_fft;
    let padded = reflect_pad(&w.samples, n_fft / 2);
    let window = hann_window(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let n_frames = cfg.n_frames(w.len());
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let start = t * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(padded[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..cfg.n_bins()].to_vec());
    }
    Ok(ComplexSpectrogram {
        frames,
        config: *cfg,
        sample_rate: w.sample_rate,
    })
}

/// Weighted overlap-add inverse of [`stft`]. Output length is
/// `frames * hop`.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let cfg = s.config;
    if !cfg.satisfies_cola() {
        return Err(Error::Config(format!(
            "hann window with n_fft={} hop={} is not COLA",
            cfg.n_fft, cfg.hop
        )));
    }
    let n_fft = cfg.n_fft;
    let n_bins = cfg.n_bins();
    let window = hann_window(n_fft);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_fft);
    let n_frames = s.frames.len();
    let total = (n_frames.saturating_sub(1)) * cfg.hop + n_fft;
    let mut out = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for (t, frame) in s.frames.iter().enumerate() {
        if frame.len() != n_bins {
            return Err(Error::InvalidInput(format!(
                "frame {t} has {} bins, expected {n_bins}",
                frame.len()
            )));
        }
        buf[..n_bins].copy_from_slice(frame);
        for k in 1..n_fft - n_bins + 1 {
            buf[n_fft - k] = frame[k].conj();
        }
        buf[0].im = 0.0;
        if n_fft.is_multiple_of(2) {
            buf[n_fft / 2].im = 0.0;
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop;
        for i in 0..n_fft {
            out[start + i] += buf[i].re / n_fft as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let offset = n_fft / 2;
    let len = n_frames * cfg.hop;
    let samples = (0..len)
        .map(|i| {
            let j = offset + i;
            if j < total && norm[j] > 1e-10 {
                out[j] / norm[j]
            } else {
                0.0
            }
        })
        .collect();
    Ok(Waveform::new(samples, s.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::snr_db;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dc_maps_to_bin_zero() {
        let cfg = StftConfig::default();
        let w = Waveform::new(vec![1.0; 2048], 32_000);
        let s = stft(&w, &cfg).unwrap();
        let sum_w: f64 = hann_window(2048).iter().sum();
        let mags = s.magnitudes();
        for frame in &mags {
            assert!((frame[0] - sum_w).abs() < 1e-9 * sum_w);
            let rest: f64 = frame[2..].iter().cloned().fold(0.0, f64::max);
            assert!(rest < 1e-9 * sum_w);
        }
    }

    #[test]
    fn bin_centred_sine_peaks_at_its_bin() {
        let cfg = StftConfig::default();
        let sr = 32_000.0;
        let k = 37;
        let f = k as f64 * sr / 2048.0;
        let w = Waveform::new(
            (0..16_000)
                .map(|n| (2.0 * PI * f * n as f64 / sr).sin())
                .collect(),
            32_000,
        );
        let mags = stft(&w, &cfg).unwrap().magnitudes();
        for frame in &mags[4..mags.len() - 4] {
            let argmax = frame
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, k);
        }
    }

    #[test]
    fn frame_count_is_ceil_of_len_over_hop() {
        let cfg = StftConfig::default();
        for len in [1usize, 511, 512, 513, 5000] {
            let w = Waveform::new(vec![0.1; len], 32_000);
            assert_eq!(stft(&w, &cfg).unwrap().n_frames(), len.div_ceil(512));
        }
    }

    #[test]
    fn empty_waveform_is_rejected() {
        let w = Waveform::new(vec![], 32_000);
        assert!(matches!(
            stft(&w, &StftConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn zero_spectrogram_gives_zero_waveform() {
        let cfg = StftConfig::default();
        let s = ComplexSpectrogram {
            frames: vec![vec![Complex64::new(0.0, 0.0); cfg.n_bins()]; 5],
            config: cfg,
            sample_rate: 32_000,
        };
        let w = istft(&s).unwrap();
        assert_eq!(w.len(), 5 * 512);
        assert!(w.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn round_trip_snr_on_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..32_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = StftConfig::default();
        let y = istft(&stft(&Waveform::new(x.clone(), 32_000), &cfg).unwrap()).unwrap();
        assert_eq!(y.len(), x.len().div_ceil(512) * 512);
        let snr = snr_db(&x[2048..x.len() - 2048], &y.samples[2048..x.len() - 2048]);
        assert!(snr > 60.0, "snr {snr}");
    }

    #[test]
    fn single_frame_inverse_recovers_segment() {
        let cfg = StftConfig::default();
        let n_fft = cfg.n_fft;
        let seg: Vec<f64> = (0..n_fft).map(|n| (0.05 * n as f64).sin()).collect();
        let win = hann_window(n_fft);
        let mut buf: Vec<Complex64> = seg
            .iter()
            .zip(&win)
            .map(|(s, w)| Complex64::new(s * w, 0.0))
            .collect();
        FftPlanner::<f64>::new()
            .plan_fft_forward(n_fft)
            .process(&mut buf);
        let s = ComplexSpectrogram {
            frames: vec![buf[..cfg.n_bins()].to_vec()],
            config: cfg,
            sample_rate: 32_000,
        };
        let y = istft(&s).unwrap();
        assert_eq!(y.len(), cfg.hop);
        for (i, v) in y.samples.iter().enumerate() {
            assert!((v - seg[n_fft / 2 + i]).abs() < 1e-9);
        }
    }

    #[test]
    fn half_overlap_is_not_cola_for_squared_hann() {
        let cfg = StftConfig::new(1024, 512).unwrap();
        assert!(!cfg.satisfies_cola());
        let s = ComplexSpectrogram {
            frames: vec![vec![Complex64::new(0.0, 0.0); cfg.n_bins()]],
            config: cfg,
            sample_rate: 32_000,
        };
        assert!(matches!(istft(&s), Err(Error::Config(_))));
        assert!(StftConfig::default().satisfies_cola());
    }

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(12, 5), 4);
        assert_eq!(reflect_index(3, 1), 0);
    }
}
