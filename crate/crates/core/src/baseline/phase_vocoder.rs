use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::analysis::PitchCurve;
use crate::error::{Error, Result};
use crate::signal::{hann_window, Waveform};

const MIN_RATIO: f64 = 0.25;
const MAX_RATIO: f64 = 4.0;
const N_FFT: usize = 2048;
const SYNTH_HOP: usize = 512;
const INTERP_HALF_TAPS: f64 = 16.0;

/// Per-frame pitch ratio on the STFT frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftPlan {
    pub ratios: Vec<f64>,
    pub hop: usize,
}

impl ShiftPlan {
    /// Ratios outside [0.25, 4] are clamped with a warning.
    pub fn new(ratios: Vec<f64>, hop: usize) -> Result<Self> {
        if ratios.is_empty() || hop == 0 {
            return Err(Error::InvalidInput(
                "shift plan needs frames and a hop".into(),
            ));
        }
        let mut clamped = 0;
        let ratios = ratios
            .into_iter()
            .map(|r| {
                if !r.is_finite() || r <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "pitch ratio {r} is not positive"
                    )));
                }
                let c = r.clamp(MIN_RATIO, MAX_RATIO);
                if c != r {
                    clamped += 1;
                }
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        if clamped > 0 {
            log::warn!("clamped {clamped} pitch ratios to [{MIN_RATIO}, {MAX_RATIO}]");
        }
        Ok(Self { ratios, hop })
    }

    pub fn constant(ratio: f64, frames: usize, hop: usize) -> Result<Self> {
        Self::new(vec![ratio; frames], hop)
    }

    /// `2^((tuned - original) / 12)` frame by frame.
    pub fn from_curves(original: &PitchCurve, tuned: &PitchCurve) -> Result<Self> {
        if original.len() != tuned.len() {
            return Err(Error::InvalidInput(format!(
                "curves differ in length: {} vs {}",
                original.len(),
                tuned.len()
            )));
        }
        let ratios = original
            .f0_midi
            .iter()
            .zip(&tuned.f0_midi)
            .map(|(a, b)| 2f64.powf((b - a) / 12.0))
            .collect();
        Self::new(ratios, original.hop)
    }

    /// Ratio at sample `n`, interpolated in log space between frame centres.
    fn ratio_at(&self, n: f64) -> f64 {
        let pos = n / self.hop as f64;
        let last = self.ratios.len() - 1;
        if pos <= 0.0 {
            return self.ratios[0];
        }
        let i = pos.floor() as usize;
        if i >= last {
            return self.ratios[last];
        }
        let t = pos - i as f64;
        (self.ratios[i].ln() * (1.0 - t) + self.ratios[i + 1].ln() * t).exp()
    }
}

fn wrap(phase: f64) -> f64 {
    phase - 2.0 * PI * ((phase + PI) / (2.0 * PI)).floor()
}

/// Windowed-sinc read of `z` at fractional `pos`, low-passed at `cutoff`
/// (fraction of Nyquist).
fn sinc_read(z: &[f64], pos: f64, cutoff: f64) -> f64 {
    let support = INTERP_HALF_TAPS / cutoff;
    let lo = (pos - support).ceil().max(0.0) as usize;
    let hi = ((pos + support).floor() as usize).min(z.len().saturating_sub(1));
    let mut acc = 0.0;
    for (i, &v) in z.iter().enumerate().take(hi + 1).skip(lo) {
        let d = pos - i as f64;
        let arg = PI * d * cutoff;
        let sinc = if arg.abs() < 1e-12 {
            1.0
        } else {
            arg.sin() / arg
        };
        let win = 0.5 + 0.5 * (PI * d / support).cos();
        acc += v * cutoff * sinc * win;
    }
    acc
}

/// Spectral peaks: bins larger than their two neighbours on each side.
fn find_peaks(mag: &[f64]) -> Vec<usize> {
    let floor = mag.iter().cloned().fold(0.0, f64::max) * 1e-6;
    (0..mag.len())
        .filter(|&k| {
            let m = mag[k];
            m > floor
                && (k < 1 || m > mag[k - 1])
                && (k < 2 || m > mag[k - 2])
                && (k + 1 >= mag.len() || m >= mag[k + 1])
                && (k + 2 >= mag.len() || m >= mag[k + 2])
        })
        .collect()
}

/// Pitch shift by a per-frame ratio: a phase-locked time stretch by the
/// ratio followed by resampling back to the original duration.
pub fn phase_vocoder_shift(w: &Waveform, plan: &ShiftPlan) -> Result<Waveform> {
    w.validate()?;
    let n = w.len();
    let half = N_FFT / 2;
    let bins = half + 1;
    let mut padded = vec![0.0; half];
    padded.extend_from_slice(&w.samples);
    padded.extend(std::iter::repeat_n(0.0, N_FFT));
    let window = hann_window(N_FFT);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(N_FFT);
    let inv = planner.plan_fft_inverse(N_FFT);

    // Analysis frame starts (= centres in original coordinates).
    let mut starts = vec![0usize];
    let mut pos = 0.0f64;
    while *starts.last().unwrap() < n + SYNTH_HOP {
        pos += SYNTH_HOP as f64 / plan.ratio_at(pos);
        starts.push(pos.round() as usize);
    }
    let frames = starts.len();
    let z_len = (frames - 1) * SYNTH_HOP + N_FFT;
    let mut z = vec![0.0; z_len];
    let mut wsum = vec![0.0; z_len];
    let mut prev_phase = vec![0.0; bins];
    let mut synth_phase = vec![0.0; bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); N_FFT];
    for (j, &a) in starts.iter().enumerate() {
        for (i, b) in buf.iter_mut().enumerate() {
            let x = padded.get(a + i).copied().unwrap_or(0.0);
            *b = Complex64::new(x * window[i], 0.0);
        }
        fwd.process(&mut buf);
        let mag: Vec<f64> = buf[..bins].iter().map(|c| c.norm()).collect();
        let phase: Vec<f64> = buf[..bins].iter().map(|c| c.arg()).collect();
        if j == 0 {
            synth_phase.copy_from_slice(&phase);
        } else {
            let ha = (a - starts[j - 1]) as f64;
            let peaks = find_peaks(&mag);
            let advance = |k: usize, synth_prev: f64| {
                let omega = 2.0 * PI * k as f64 / N_FFT as f64;
                let dev = wrap(phase[k] - prev_phase[k] - omega * ha);
                synth_prev + SYNTH_HOP as f64 * (omega + dev / ha)
            };
            if peaks.is_empty() {
                for k in 0..bins {
                    synth_phase[k] = advance(k, synth_phase[k]);
                }
            } else {
                let mut next = synth_phase.clone();
                for &p in &peaks {
                    next[p] = advance(p, synth_phase[p]);
                }
                // Every other bin keeps its phase offset to the closest peak.
                let mut nearest = 0;
                for k in 0..bins {
                    while nearest + 1 < peaks.len()
                        && (peaks[nearest + 1] as isize - k as isize).abs()
                            <= (peaks[nearest] as isize - k as isize).abs()
                    {
                        nearest += 1;
                    }
                    let p = peaks[nearest];
                    if k != p {
                        next[k] = next[p] + phase[k] - phase[p];
                    }
                }
                synth_phase = next;
            }
        }
        prev_phase.copy_from_slice(&phase);
        for k in 0..bins {
            buf[k] = Complex64::from_polar(mag[k], synth_phase[k]);
        }
        for k in 1..half {
            buf[N_FFT - k] = buf[k].conj();
        }
        inv.process(&mut buf);
        let s = j * SYNTH_HOP;
        for i in 0..N_FFT {
            z[s + i] += window[i] * buf[i].re / N_FFT as f64;
            wsum[s + i] += window[i] * window[i];
        }
    }
    for (v, ws) in z.iter_mut().zip(&wsum) {
        if *ws > 1e-3 {
            *v /= ws;
        }
    }

    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for t in 0..n {
        while j + 2 < frames && starts[j + 1] <= t {
            j += 1;
        }
        let (a0, a1) = (starts[j] as f64, starts[j + 1] as f64);
        let rate = SYNTH_HOP as f64 / (a1 - a0);
        let s = j as f64 * SYNTH_HOP as f64 + (t as f64 - a0) * rate;
        let cutoff = (1.0 / rate).min(1.0) * 0.97;
        out.push(sinc_read(&z, s + half as f64, cutoff));
    }
    let mut y = Waveform::new(out, w.sample_rate);
    y.clip();
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_stays_in_range() {
        for p in [-10.0, -PI, 0.0, 3.0, 7.5, 100.0] {
            let w = wrap(p);
            assert!((-PI..PI).contains(&w));
            assert!(((p - w) / (2.0 * PI) - ((p - w) / (2.0 * PI)).round()).abs() < 1e-9);
        }
    }

    #[test]
    fn ratios_are_clamped() {
        let plan = ShiftPlan::new(vec![0.1, 1.0, 9.0], 512).unwrap();
        assert_eq!(plan.ratios, vec![0.25, 1.0, 4.0]);
        assert!(ShiftPlan::new(vec![-1.0], 512).is_err());
    }

    #[test]
    fn silence_stays_silent() {
        let w = Waveform::silence(8000, 32_000);
        let plan = ShiftPlan::constant(1.3, 16, 512).unwrap();
        let y = phase_vocoder_shift(&w, &plan).unwrap();
        assert_eq!(y.len(), w.len());
        assert!(y.samples.iter().all(|&s| s == 0.0));
    }
}
