use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::analysis::{midi_to_hz, PitchCurve, SpectralEnvelope};
use crate::error::{Error, Result};
use crate::signal::{hann_window, Waveform};

/// Excitation segment per frame; twice the hop so Hann windows sum to one.
const SEGMENT: usize = 1024;

/// Aperiodicity used for synthesis: the analysis value on voiced frames and
/// pure noise on unvoiced ones.
pub fn default_aperiodicity(p: &PitchCurve) -> Vec<f64> {
    p.voiced
        .iter()
        .zip(&p.aperiodicity)
        .map(|(&v, &a)| if v { a.clamp(0.0, 1.0) } else { 1.0 })
        .collect()
}

/// Minimum-phase spectrum whose squared magnitude is the power envelope
/// `power` (n_fft/2 + 1 bins), built by folding the real cepstrum.
pub fn minimum_phase_response(power: &[f64]) -> Vec<Complex64> {
    let bins = power.len();
    let n = 2 * (bins - 1);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = (0..n)
        .map(|k| {
            let k = if k < bins { k } else { n - k };
            Complex64::new(0.5 * power[k].max(1e-300).ln(), 0.0)
        })
        .collect();
    inv.process(&mut buf);
    let scale = 1.0 / n as f64;
    for (i, c) in buf.iter_mut().enumerate() {
        let fold = if i == 0 || i == n / 2 {
            1.0
        } else if i < n / 2 {
            2.0
        } else {
            0.0
        };
        *c = Complex64::new(c.re * scale * fold, 0.0);
    }
    fwd.process(&mut buf);
    buf.iter().map(|c| c.exp()).collect()
}

/// `sum_{h=1..H} cos(h * phase)` in closed form.
fn harmonic_sum(phase: f64, harmonics: usize) -> f64 {
    let h = harmonics as f64;
    let s = (phase / 2.0).sin();
    if s.abs() < 1e-9 {
        return h;
    }
    ((h + 0.5) * phase).sin() / (2.0 * s) - 0.5
}

/// Pulse-plus-noise source-filter synthesis: per frame the excitation
/// `(1 - ap) * pulses + ap * noise` is filtered by the minimum-phase
/// response of the envelope and overlap-added at the hop.
///
/// Both excitations have a flat unit power spectrum in the envelope's
/// convention, so a signal analysed back yields roughly the same envelope.
pub fn world_like_synthesize(
    p: &PitchCurve,
    sp: &SpectralEnvelope,
    ap: &[f64],
    seed: u64,
) -> Result<Waveform> {
    let frames = p.len();
    if frames == 0 || sp.n_frames() != frames || ap.len() != frames {
        return Err(Error::InvalidInput(format!(
            "synthesis inputs misaligned: pitch {frames}, envelope {}, aperiodicity {}",
            sp.n_frames(),
            ap.len()
        )));
    }
    let hop = p.hop;
    if 2 * hop != SEGMENT {
        return Err(Error::Config(format!(
            "synthesis expects hop {}, got {hop}",
            SEGMENT / 2
        )));
    }
    let bins = sp.n_bins();
    let n_fft = 2 * (bins - 1);
    if n_fft < 2 * SEGMENT {
        return Err(Error::Config(format!(
            "envelope with {bins} bins is too narrow"
        )));
    }
    let fs = p.sample_rate as f64;
    let len = frames * hop;

    // Per-sample f0 interpolated between frame centres, then integrated.
    let mut pulses = vec![0.0; len];
    let mut phase = 0.0;
    for (n, out) in pulses.iter_mut().enumerate() {
        let pos = n as f64 / hop as f64;
        let i = (pos.floor() as usize).min(frames - 1);
        let t = pos - i as f64;
        let midi = if i + 1 < frames {
            p.f0_midi[i] * (1.0 - t) + p.f0_midi[i + 1] * t
        } else {
            p.f0_midi[i]
        };
        let f0 = midi_to_hz(midi).min(fs / 2.0 - 1.0);
        let harmonics = ((fs / 2.0) / f0).floor().max(1.0) as usize;
        let amp = (2.0 * f0 / (fs / 2.0)).sqrt();
        *out = amp * harmonic_sum(phase, harmonics);
        phase = (phase + 2.0 * PI * f0 / fs) % (2.0 * PI);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();

    let window = hann_window(SEGMENT);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);
    // Room for the filter tail past the last frame.
    let mut out = vec![0.0; len + n_fft];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        let a = ap[t].clamp(0.0, 1.0);
        let start = t as isize * hop as isize - (SEGMENT / 2) as isize;
        buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for i in 0..SEGMENT {
            let n = start + i as isize;
            if n < 0 || n as usize >= len {
                continue;
            }
            let n = n as usize;
            let e = (1.0 - a) * pulses[n] + a * noise[n];
            buf[i] = Complex64::new(e * window[i], 0.0);
        }
        fwd.process(&mut buf);
        let h = minimum_phase_response(&sp.env[t]);
        for (b, hk) in buf.iter_mut().zip(&h) {
            *b *= hk;
        }
        inv.process(&mut buf);
        for (i, b) in buf.iter().enumerate() {
            let n = start + i as isize;
            if n >= 0 && (n as usize) < out.len() {
                out[n as usize] += b.re / n_fft as f64;
            }
        }
    }
    out.truncate(len);
    let mut w = Waveform::new(out, p.sample_rate);
    w.clip();
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_sum_matches_direct_sum() {
        for &phase in &[0.0, 0.3, 1.7, 3.1, 6.0] {
            let direct: f64 = (1..=12).map(|h| (h as f64 * phase).cos()).sum();
            assert!((harmonic_sum(phase, 12) - direct).abs() < 1e-6, "{phase}");
        }
    }

    #[test]
    fn minimum_phase_magnitude_matches_envelope() {
        let power: Vec<f64> = (0..1025)
            .map(|k| 1.0 + (k as f64 / 100.0).sin().powi(2) * 5.0)
            .collect();
        let h = minimum_phase_response(&power);
        for k in 0..1025 {
            assert!((h[k].norm_sqr() / power[k] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn floor_envelope_is_near_silent() {
        let frames = 30;
        let p = PitchCurve::from_midi(vec![60.0; frames], 512, 32_000);
        let sp = SpectralEnvelope {
            env: vec![vec![1e-10; 1025]; frames],
            sample_rate: 32_000,
            hop: 512,
        };
        let w = world_like_synthesize(&p, &sp, &vec![0.0; frames], 1).unwrap();
        assert_eq!(w.len(), frames * 512);
        let dbfs = 20.0 * w.rms().log10();
        assert!(dbfs < -60.0, "{dbfs}");
    }
}
