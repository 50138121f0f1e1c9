use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{resample, Waveform};
use crate::error::{Error, Result};

const I16_SCALE: f64 = 32_768.0;

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => Error::Format(format!(
            "{}: unsupported WAV codec (only PCM integer and IEEE float are read)",
            path.display()
        )),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads a WAV file, downmixing to mono. With `target_rate` set, audio at any
/// other rate is resampled.
pub fn load_wav(path: impl AsRef<Path>, target_rate: Option<u32>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / I16_SCALE))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (SampleFormat::Int, bits @ (24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            let codec = match fmt {
                SampleFormat::Int => format!("{bits}-bit integer PCM"),
                SampleFormat::Float => format!("{bits}-bit float PCM"),
            };
            return Err(Error::Format(format!("{}: {codec}", path.display())));
        }
    };
    let channels = spec.channels.max(1) as usize;
    let samples: Vec<f64> = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    let w = Waveform::new(samples, spec.sample_rate);
    if w.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} contains no samples",
            path.display()
        )));
    }
    match target_rate {
        Some(rate) if rate != spec.sample_rate => {
            log::info!(
                "resampling {} from {} Hz to {rate} Hz",
                path.display(),
                spec.sample_rate
            );
            Ok(resample(&w, rate))
        }
        _ => Ok(w),
    }
}

/// Writes 16-bit PCM mono. Out-of-range samples are clipped and counted.
pub fn save_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    let mut clipped = 0usize;
    for &s in &w.samples {
        if !(-1.0..=1.0).contains(&s) {
            clipped += 1;
        }
        let q = (s * I16_SCALE)
            .round()
            .clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(q).map_err(|e| map_hound(path, e))?;
    }
    if clipped > 0 {
        log::warn!("{}: clipped {clipped} samples", path.display());
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, secs: f64, sr: u32) -> Waveform {
        let n = (secs * sr as f64) as usize;
        Waveform::new(
            (0..n)
                .map(|i| 0.8 * (2.0 * PI * freq * i as f64 / sr as f64).sin())
                .collect(),
            sr,
        )
    }

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = sine(440.0, 0.5, 32_000);
        save_wav(&w, &path).unwrap();
        let r = load_wav(&path, None).unwrap();
        assert_eq!(r.sample_rate, 32_000);
        assert_eq!(r.len(), w.len());
        let max_err = w
            .samples
            .iter()
            .zip(&r.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 2f64.powi(-15));
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 32_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let w = sine(300.0, 0.1, 32_000);
        let mut wr = WavWriter::create(&path, spec).unwrap();
        for &s in &w.samples {
            let q = (s * I16_SCALE).round() as i16;
            wr.write_sample(q).unwrap();
            wr.write_sample(q).unwrap();
        }
        wr.finalize().unwrap();
        let r = load_wav(&path, None).unwrap();
        assert_eq!(r.len(), w.len());
        for (a, b) in w.samples.iter().zip(&r.samples) {
            assert!((a - b).abs() <= 2f64.powi(-15));
        }
    }

    #[test]
    fn float_wav_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 32_000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut wr = WavWriter::create(&path, spec).unwrap();
        for s in [0.25f32, -0.5, 0.75] {
            wr.write_sample(s).unwrap();
        }
        wr.finalize().unwrap();
        assert_eq!(
            load_wav(&path, None).unwrap().samples,
            vec![0.25, -0.5, 0.75]
        );
    }

    #[test]
    fn foreign_rate_is_resampled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.wav");
        let w = sine(440.0, 0.5, 44_100);
        save_wav(&w, &path).unwrap();
        let r = load_wav(&path, Some(32_000)).unwrap();
        assert_eq!(r.sample_rate, 32_000);
        assert_eq!(
            r.len(),
            (w.len() as f64 * 32_000.0 / 44_100.0).round() as usize
        );
    }

    #[test]
    fn unsupported_bit_depth_names_codec() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u8.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut wr = WavWriter::create(&path, spec).unwrap();
        wr.write_sample(3i8).unwrap();
        wr.finalize().unwrap();
        match load_wav(&path, None) {
            Err(Error::Format(msg)) => assert!(msg.contains("8-bit integer PCM")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
