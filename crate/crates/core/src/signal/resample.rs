use std::f64::consts::PI;

use super::Waveform;

const HALF_TAPS: isize = 32;

/// Band-limited resampling with a Hann-windowed sinc kernel. The output has
/// `round(len * target / source)` samples.
pub fn resample(w: &Waveform, target_rate: u32) -> Waveform {
    if w.sample_rate == target_rate || w.is_empty() {
        return Waveform::new(w.samples.clone(), target_rate);
    }
    let ratio = target_rate as f64 / w.sample_rate as f64;
    let out_len = (w.len() as f64 * ratio).round() as usize;
    // Anti-aliasing cutoff relative to the input Nyquist frequency.
    let cutoff = ratio.min(1.0) * 0.97;
    let support = HALF_TAPS as f64 / cutoff;
    let x = &w.samples;
    let samples = (0..out_len)
        .map(|n| {
            let pos = n as f64 / ratio;
            let centre = pos.floor() as isize;
            let reach = support.ceil() as isize;
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for i in centre - reach..=centre + reach {
                if i < 0 || i as usize >= x.len() {
                    continue;
                }
                let d = pos - i as f64;
                if d.abs() >= support {
                    continue;
                }
                let arg = PI * d * cutoff;
                let sinc = if arg.abs() < 1e-12 {
                    1.0
                } else {
                    arg.sin() / arg
                };
                let win = 0.5 + 0.5 * (PI * d / support).cos();
                let k = cutoff * sinc * win;
                acc += k * x[i as usize];
                wsum += k;
            }
            if wsum.abs() > 1e-12 {
                acc / wsum
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(samples, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_length_contract() {
        let w = Waveform::new(vec![0.0; 44_100], 44_100);
        assert_eq!(resample(&w, 32_000).len(), 32_000);
        let w = Waveform::new(vec![0.0; 12_345], 44_100);
        assert_eq!(
            resample(&w, 32_000).len(),
            (12_345.0f64 * 32_000.0 / 44_100.0).round() as usize
        );
    }

    #[test]
    fn low_tone_survives_downsampling() {
        let sr = 44_100.0;
        let x: Vec<f64> = (0..44_100)
            .map(|n| (2.0 * PI * 440.0 * n as f64 / sr).sin())
            .collect();
        let y = resample(&Waveform::new(x, 44_100), 32_000);
        for n in 1000..31_000 {
            let expect = (2.0 * PI * 440.0 * n as f64 / 32_000.0).sin();
            assert!((y.samples[n] - expect).abs() < 1e-2);
        }
    }
}
