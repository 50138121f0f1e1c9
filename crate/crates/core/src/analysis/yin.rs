use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{hz_to_midi, midi_to_hz, AnalysisConfig, PitchCurve};
use crate::error::{Error, Result};
use crate::signal::Waveform;

struct FrameEstimate {
    f0_hz: Option<f64>,
    aperiodicity: f64,
    rms: f64,
}

/// Frame-wise YIN pitch tracking on the STFT hop grid.
///
/// A frame is voiced when its YIN aperiodicity is below
/// `max_voiced_aperiodicity`, its RMS exceeds `min_voiced_dbfs` and the
/// estimate lies within `[midi_min, midi_max]`.
pub fn extract_pitch(w: &Waveform, cfg: &AnalysisConfig) -> Result<PitchCurve> {
    w.validate()?;
    if w.sample_rate < 16_000 {
        return Err(Error::InvalidInput(format!(
            "pitch extraction needs at least 16 kHz, got {} Hz",
            w.sample_rate
        )));
    }
    let hop = cfg.stft.hop;
    let n_frames = cfg.stft.n_frames(w.len());
    if n_frames < 2 {
        return Err(Error::InvalidInput(format!(
            "clip of {} samples is shorter than two frames",
            w.len()
        )));
    }
    let sr = w.sample_rate as f64;
    let tau_min = ((sr / midi_to_hz(cfg.midi_max)).floor() as usize).max(2);
    let tau_max = (sr / midi_to_hz(cfg.midi_min)).ceil() as usize + 1;
    let mut tracker = Yin::new(cfg.yin_window, tau_min, tau_max, cfg.yin_threshold);

    let rms_gate = 10f64.powf(cfg.min_voiced_dbfs / 20.0);
    let mut f0_midi = vec![0.0; n_frames];
    let mut voiced = vec![false; n_frames];
    let mut aperiodicity = vec![1.0; n_frames];
    for t in 0..n_frames {
        let est = tracker.frame(&w.samples, t * hop, sr);
        aperiodicity[t] = est.aperiodicity.clamp(0.0, 1.0);
        if let Some(f0) = est.f0_hz {
            let m = hz_to_midi(f0)?;
            f0_midi[t] = m;
            voiced[t] = est.aperiodicity < cfg.max_voiced_aperiodicity
                && est.rms > rms_gate
                && (cfg.midi_min..=cfg.midi_max).contains(&m);
        }
    }
    let mut curve = PitchCurve {
        f0_midi,
        voiced,
        aperiodicity,
        hop,
        sample_rate: w.sample_rate,
    };
    curve.fill_unvoiced(hz_to_midi(cfg.unvoiced_f0_hz)?);
    Ok(curve)
}

struct Yin {
    window: usize,
    tau_min: usize,
    tau_max: usize,
    threshold: f64,
    fft_len: usize,
    planner: FftPlanner<f64>,
    seg: Vec<f64>,
}

impl Yin {
    fn new(window: usize, tau_min: usize, tau_max: usize, threshold: f64) -> Self {
        let fft_len = (window + tau_max + window).next_power_of_two();
        Self {
            window,
            tau_min,
            tau_max,
            threshold,
            fft_len,
            planner: FftPlanner::new(),
            seg: vec![0.0; window + tau_max],
        }
    }

    fn frame(&mut self, x: &[f64], centre: usize, sr: f64) -> FrameEstimate {
        let w = self.window;
        let start = centre as isize - (w / 2) as isize;
        for (i, s) in self.seg.iter_mut().enumerate() {
            let j = start + i as isize;
            *s = if j >= 0 && (j as usize) < x.len() {
                x[j as usize]
            } else {
                0.0
            };
        }
        let rms = (self.seg[..w].iter().map(|v| v * v).sum::<f64>() / w as f64).sqrt();
        let diff = self.difference();
        let cmnd = cumulative_mean_normalized(&diff);

        let hi = self.tau_max.min(cmnd.len() - 2);
        let mut best = None;
        let mut tau = self.tau_min;
        while tau <= hi {
            if cmnd[tau] < self.threshold {
                while tau < hi && cmnd[tau + 1] < cmnd[tau] {
                    tau += 1;
                }
                best = Some(tau);
                break;
            }
            tau += 1;
        }
        let tau = best.unwrap_or_else(|| {
            (self.tau_min..=hi)
                .min_by(|&a, &b| cmnd[a].partial_cmp(&cmnd[b]).unwrap())
                .unwrap_or(self.tau_min)
        });
        let aperiodicity = cmnd[tau];
        if rms == 0.0 {
            return FrameEstimate {
                f0_hz: None,
                aperiodicity: 1.0,
                rms,
            };
        }
        let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-12 {
            (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        FrameEstimate {
            f0_hz: Some(sr / (tau as f64 + shift)),
            aperiodicity,
            rms,
        }
    }

    /// d(tau) = sum_{j<W} (x_j - x_{j+tau})^2 for tau in 0..=tau_max, via
    /// energies plus an FFT cross-correlation.
    fn difference(&mut self) -> Vec<f64> {
        let w = self.window;
        let n = self.fft_len;
        let fwd = self.planner.plan_fft_forward(n);
        let inv = self.planner.plan_fft_inverse(n);
        let mut a: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(if i < w { self.seg[i] } else { 0.0 }, 0.0))
            .collect();
        let mut b: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(self.seg.get(i).copied().unwrap_or(0.0), 0.0))
            .collect();
        fwd.process(&mut a);
        fwd.process(&mut b);
        // r(tau) = sum_j a_j b_{j+tau}  <=>  IFFT(conj(A) B)
        for (x, y) in a.iter_mut().zip(&b) {
            *x = x.conj() * y;
        }
        inv.process(&mut a);

        let sq: Vec<f64> = self.seg.iter().map(|v| v * v).collect();
        let e0: f64 = sq[..w].iter().sum();
        let mut e_tau = e0;
        let mut d = Vec::with_capacity(self.tau_max + 1);
        for tau in 0..=self.tau_max {
            if tau > 0 {
                e_tau += sq[tau + w - 1] - sq[tau - 1];
            }
            let r = a[tau].re / n as f64;
            d.push((e0 + e_tau - 2.0 * r).max(0.0));
        }
        d
    }
}

fn cumulative_mean_normalized(d: &[f64]) -> Vec<f64> {
    let mut out = vec![1.0; d.len()];
    let mut running = 0.0;
    for tau in 1..d.len() {
        running += d[tau];
        out[tau] = if running > 0.0 {
            d[tau] * tau as f64 / running
        } else {
            1.0
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, secs: f64) -> Waveform {
        let sr = 32_000.0;
        Waveform::new(
            (0..(secs * sr) as usize)
                .map(|n| 0.5 * (2.0 * PI * freq * n as f64 / sr).sin())
                .collect(),
            32_000,
        )
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    }

    #[test]
    fn difference_matches_direct_sum() {
        let mut y = Yin::new(64, 2, 40, 0.15);
        for (i, s) in y.seg.iter_mut().enumerate() {
            *s = ((i * 7919) % 13) as f64 / 13.0 - 0.4;
        }
        let d = y.difference();
        for tau in 0..=40 {
            let direct: f64 = (0..64).map(|j| (y.seg[j] - y.seg[j + tau]).powi(2)).sum();
            assert!((d[tau] - direct).abs() < 1e-9, "tau {tau}");
        }
    }

    #[test]
    fn a440_is_midi_69() {
        let p = extract_pitch(&tone(440.0, 1.0), &AnalysisConfig::default()).unwrap();
        assert!(p.voiced_fraction() >= 0.95);
        assert!((median(p.voiced_values()) - 69.0).abs() <= 0.05);
    }

    #[test]
    fn known_tones_within_ten_cents() {
        for f in [110.0, 220.0, 440.0, 660.0] {
            let p = extract_pitch(&tone(f, 0.6), &AnalysisConfig::default()).unwrap();
            let err = median(p.voiced_values()) - hz_to_midi(f).unwrap();
            assert!(err.abs() <= 0.1, "{f} Hz off by {err} semitones");
        }
    }

    #[test]
    fn silence_is_unvoiced_and_constant() {
        let p = extract_pitch(
            &Waveform::silence(32_000, 32_000),
            &AnalysisConfig::default(),
        )
        .unwrap();
        assert_eq!(p.voiced_fraction(), 0.0);
        assert!(p.f0_midi.iter().all(|&v| v == p.f0_midi[0]));
    }

    #[test]
    fn glide_is_monotone() {
        let sr = 32_000.0;
        let mut phase = 0.0;
        let samples: Vec<f64> = (0..32_000)
            .map(|n| {
                let f = 220.0 * 2f64.powf(n as f64 / sr);
                phase += 2.0 * PI * f / sr;
                0.5 * phase.sin()
            })
            .collect();
        let p = extract_pitch(&Waveform::new(samples, 32_000), &AnalysisConfig::default()).unwrap();
        let v = p.voiced_values();
        assert!(v.len() > 50);
        for pair in v.windows(2) {
            assert!(pair[1] >= pair[0] - 0.1, "{pair:?}");
        }
    }

    #[test]
    fn too_short_clip_is_rejected() {
        let w = Waveform::new(vec![0.1; 300], 32_000);
        assert!(matches!(
            extract_pitch(&w, &AnalysisConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn low_sample_rate_is_rejected() {
        let w = Waveform::new(vec![0.1; 8000], 8000);
        assert!(extract_pitch(&w, &AnalysisConfig::default()).is_err());
    }
}
