use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use super::{midi_to_hz, AnalysisConfig, PitchCurve, SpectralEnvelope};
use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Lower bound on the floor-free envelope before taking logarithms.
pub(crate) const ENVELOPE_FLOOR: f64 = 1e-10;
/// Compensation lifter coefficient.
const Q1: f64 = -0.15;

/// Pitch-adaptive spectral envelope in the style of CheapTrick: a 3-period
/// Hann window, f0-dependent rectangular smoothing in frequency and cepstral
/// liftering. Unvoiced frames are analysed with `cfg.unvoiced_f0_hz`.
pub fn spectral_envelope(
    w: &Waveform,
    p: &PitchCurve,
    cfg: &AnalysisConfig,
) -> Result<SpectralEnvelope> {
    w.validate()?;
    let n_frames = cfg.stft.n_frames(w.len());
    if p.len() != n_frames || p.hop != cfg.stft.hop {
        return Err(Error::InvalidInput(format!(
            "pitch curve ({} frames, hop {}) is not on the waveform frame grid ({} frames, hop {})",
            p.len(),
            p.hop,
            n_frames,
            cfg.stft.hop
        )));
    }
    let mut est = CheapTrick::new(cfg.stft.n_fft, w.sample_rate as f64);
    let env = (0..n_frames)
        .map(|t| {
            let f0 = if p.voiced[t] {
                midi_to_hz(p.f0_midi[t])
            } else {
                cfg.unvoiced_f0_hz
            };
            est.frame(&w.samples, t * cfg.stft.hop, f0)
        })
        .collect();
    Ok(SpectralEnvelope {
        env,
        sample_rate: w.sample_rate,
        hop: cfg.stft.hop,
    })
}

struct CheapTrick {
    n_fft: usize,
    sr: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
}

impl CheapTrick {
    fn new(n_fft: usize, sr: f64) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            sr,
            fwd: planner.plan_fft_forward(n_fft),
            inv: planner.plan_fft_inverse(n_fft),
            buf: vec![Complex64::new(0.0, 0.0); n_fft],
        }
    }

    fn frame(&mut self, x: &[f64], centre: usize, f0: f64) -> Vec<f64> {
        let n_fft = self.n_fft;
        let n_bins = n_fft / 2 + 1;
        // The 3-period window must fit in the FFT.
        let f0 = f0.max(3.0 * self.sr / (n_fft as f64 - 3.0));

        let half = (1.5 * self.sr / f0).round() as isize;
        let win: Vec<f64> = (-half..=half)
            .map(|n| 0.5 * (PI * n as f64 / (1.5 * self.sr / f0)).cos() + 0.5)
            .collect();
        let norm = win.iter().map(|v| v * v).sum::<f64>().sqrt();
        let seg: Vec<f64> = (-half..=half)
            .zip(&win)
            .map(|(n, wv)| {
                let j = centre as isize + n;
                let s = if j >= 0 && (j as usize) < x.len() {
                    x[j as usize]
                } else {
                    0.0
                };
                s * wv / norm
            })
            .collect();
        // Remove the window-weighted mean so DC leakage does not dominate.
        let coef = seg.iter().sum::<f64>() / win.iter().map(|v| v / norm).sum::<f64>();

        self.buf
            .iter_mut()
            .for_each(|b| *b = Complex64::new(0.0, 0.0));
        for (i, (s, wv)) in seg.iter().zip(&win).enumerate() {
            self.buf[i].re = s - coef * wv / norm;
        }
        self.fwd.process(&mut self.buf);
        let mut power: Vec<f64> = self.buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();

        let df = self.sr / n_fft as f64;
        dc_correction(&mut power, f0, df);
        let smoothed = linear_smoothing(&power, 2.0 * f0 / 3.0, df);
        self.lifter(&smoothed, f0)
    }

    /// Smoothing plus compensation lifter applied to the log spectrum.
    fn lifter(&mut self, power: &[f64], f0: f64) -> Vec<f64> {
        let n_fft = self.n_fft;
        let n_bins = power.len();
        for k in 0..n_fft {
            let src = if k < n_bins { k } else { n_fft - k };
            self.buf[k] = Complex64::new(power[src].max(ENVELOPE_FLOOR).ln(), 0.0);
        }
        self.inv.process(&mut self.buf);
        for q in 0..n_fft {
            let qq = q.min(n_fft - q) as f64 / self.sr;
            let smoothing = if qq == 0.0 {
                1.0
            } else {
                (PI * f0 * qq).sin() / (PI * f0 * qq)
            };
            let compensation = (1.0 - 2.0 * Q1) + 2.0 * Q1 * (2.0 * PI * qq * f0).cos();
            let c = self.buf[q].re / n_fft as f64 * smoothing * compensation;
            self.buf[q] = Complex64::new(c, 0.0);
        }
        self.fwd.process(&mut self.buf);
        self.buf[..n_bins]
            .iter()
            .map(|c| c.re.exp().max(ENVELOPE_FLOOR))
            .collect()
    }
}

/// Folds the spectrum below f0 back onto itself (mirror around f0) so the
/// low-frequency region is not under-estimated.
fn dc_correction(power: &mut [f64], f0: f64, df: f64) {
    let orig = power.to_vec();
    let limit = (f0 / df).floor() as usize;
    for k in 0..=limit.min(power.len() - 1) {
        let mirror = (f0 - k as f64 * df) / df;
        power[k] += interp(&orig, mirror);
    }
}

fn interp(v: &[f64], pos: f64) -> f64 {
    if pos <= 0.0 {
        return v[0];
    }
    let i = pos.floor() as usize;
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    let t = pos - i as f64;
    v[i] * (1.0 - t) + v[i + 1] * t
}

/// Rectangular smoothing of width `width_hz`, computed from the running
/// integral of a mirror-extended spectrum.
fn linear_smoothing(power: &[f64], width_hz: f64, df: f64) -> Vec<f64> {
    let n = power.len();
    let ext = (width_hz / df).ceil() as usize + 2;
    // extended[i] corresponds to bin i - ext
    let extended: Vec<f64> = (0..n + 2 * ext)
        .map(|i| {
            let k = i as isize - ext as isize;
            let m = if k < 0 {
                (-k) as usize
            } else if k as usize >= n {
                2 * (n - 1) - k as usize
            } else {
                k as usize
            };
            power[m.min(n - 1)]
        })
        .collect();
    // Integral of the piecewise-constant spectrum; cumulative[i] covers bins
    // centred below i - 0.5 (in extended coordinates).
    let mut cumulative = Vec::with_capacity(extended.len() + 1);
    cumulative.push(0.0);
    for v in &extended {
        cumulative.push(cumulative.last().unwrap() + v);
    }
    let half = 0.5 * width_hz / df;
    (0..n)
        .map(|k| {
            let centre = k as f64 + ext as f64 + 0.5;
            let hi = interp(&cumulative, centre + half);
            let lo = interp(&cumulative, centre - half);
            (hi - lo) / (2.0 * half)
        })
        .collect()
}
