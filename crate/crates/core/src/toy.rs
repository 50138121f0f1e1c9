//! Synthetic singing for tests, benchmarks and demos: melodies rendered
//! through the pulse-plus-noise synthesiser with their ground truth kept.

use std::f64::consts::PI;

use rand::Rng;

use crate::analysis::{midi_to_hz, PitchCurve, SpectralEnvelope};
use crate::baseline::world_like_synthesize;
use crate::error::{Error, Result};
use crate::notes::{Note, NoteSequence};
use crate::signal::Waveform;

pub const SAMPLE_RATE: u32 = 32_000;
pub const HOP: usize = 512;
pub const ENV_BINS: usize = 1025;

#[derive(Debug, Clone, PartialEq)]
pub struct MelodySpec {
    /// `(note, frames)`; `None` is a rest.
    pub notes: Vec<(Option<u8>, usize)>,
    /// Constant offset of the sung pitch from the written notes.
    pub detune_cents: f64,
    pub vibrato_cents: f64,
    pub vibrato_hz: f64,
    /// Frames of portamento at the start of a note that follows another.
    pub glide_frames: usize,
    /// Moves the formants with f0 so the envelope carries pitch information.
    pub formants_follow_pitch: bool,
}

impl Default for MelodySpec {
    fn default() -> Self {
        Self {
            notes: vec![
                (Some(57), 40),
                (Some(60), 40),
                (Some(64), 40),
                (None, 10),
                (Some(62), 40),
            ],
            detune_cents: 0.0,
            vibrato_cents: 0.0,
            vibrato_hz: 5.5,
            glide_frames: 0,
            formants_follow_pitch: false,
        }
    }
}

impl MelodySpec {
    pub fn frames(&self) -> usize {
        self.notes.iter().map(|(_, n)| n).sum()
    }

    pub fn note_sequence(&self) -> Result<NoteSequence> {
        let mut notes = Vec::new();
        let mut t = 0;
        for &(midi, len) in &self.notes {
            if let Some(m) = midi {
                notes.push(Note::new(m, t, t + len));
            }
            t += len;
        }
        NoteSequence::new(notes)
    }

    /// Sung pitch per frame; rests are unvoiced and hold the previous pitch.
    pub fn pitch_curve(&self) -> Result<PitchCurve> {
        if self.notes.iter().all(|(m, _)| m.is_none()) {
            return Err(Error::InvalidInput(
                "a melody needs at least one note".into(),
            ));
        }
        let frames = self.frames();
        let first = self.notes.iter().find_map(|(m, _)| *m).unwrap() as f64;
        let mut f0 = Vec::with_capacity(frames);
        let mut voiced = Vec::with_capacity(frames);
        let mut prev: Option<f64> = None;
        let mut held = first;
        for &(midi, len) in &self.notes {
            match midi {
                Some(m) => {
                    let target = m as f64 + self.detune_cents / 100.0;
                    for i in 0..len {
                        let t = f0.len() as f64 * HOP as f64 / SAMPLE_RATE as f64;
                        let vib =
                            self.vibrato_cents / 100.0 * (2.0 * PI * self.vibrato_hz * t).sin();
                        let base = match prev {
                            Some(p) if i < self.glide_frames => {
                                let a = (i + 1) as f64 / (self.glide_frames + 1) as f64;
                                p + (target - p) * a
                            }
                            _ => target,
                        };
                        f0.push(base + vib);
                        voiced.push(true);
                    }
                    prev = Some(target);
                    held = target;
                }
                None => {
                    f0.extend(std::iter::repeat_n(held, len));
                    voiced.extend(std::iter::repeat_n(false, len));
                    prev = None;
                }
            }
        }
        let mut p = PitchCurve::from_midi(f0, HOP, SAMPLE_RATE);
        p.voiced = voiced;
        p.aperiodicity = p
            .voiced
            .iter()
            .map(|&v| if v { 0.02 } else { 1.0 })
            .collect();
        Ok(p)
    }
}

/// Linear power envelope of a two-formant vowel. With `follow_pitch` the
/// formants scale with f0 (relative to 220 Hz).
pub fn vowel_envelope_frame(f0_hz: f64, follow_pitch: bool, gain: f64) -> Vec<f64> {
    let scale = if follow_pitch {
        (f0_hz / 220.0).powf(0.5)
    } else {
        1.0
    };
    let (f1, f2) = (700.0 * scale, 1200.0 * scale);
    (0..ENV_BINS)
        .map(|k| {
            let f = k as f64 * SAMPLE_RATE as f64 / (2.0 * (ENV_BINS - 1) as f64);
            let formant = |c: f64, bw: f64, g: f64| g * (-((f - c) / bw).powi(2)).exp();
            gain * 0.02 * (1.0 + formant(f1, 150.0, 30.0) + formant(f2, 200.0, 12.0))
                / (1.0 + f / 2000.0)
        })
        .collect()
}

/// A rendered melody with the curves it was rendered from.
#[derive(Debug, Clone)]
pub struct ToyClip {
    pub notes: NoteSequence,
    pub pitch: PitchCurve,
    pub envelope: SpectralEnvelope,
    pub aperiodicity: Vec<f64>,
    pub waveform: Waveform,
}

pub fn render(spec: &MelodySpec, seed: u64) -> Result<ToyClip> {
    let pitch = spec.pitch_curve()?;
    let env = pitch
        .f0_midi
        .iter()
        .zip(&pitch.voiced)
        .map(|(&m, &v)| {
            vowel_envelope_frame(
                midi_to_hz(m),
                spec.formants_follow_pitch,
                if v { 1.0 } else { 1e-3 },
            )
        })
        .collect();
    let envelope = SpectralEnvelope {
        env,
        sample_rate: SAMPLE_RATE,
        hop: HOP,
    };
    let aperiodicity = pitch.aperiodicity.clone();
    let waveform = world_like_synthesize(&pitch, &envelope, &aperiodicity, seed)?;
    Ok(ToyClip {
        notes: spec.note_sequence()?,
        pitch,
        envelope,
        aperiodicity,
        waveform,
    })
}

/// Random melody over `midi_lo..=midi_hi` with occasional rests.
pub fn random_melody(rng: &mut impl Rng, n_notes: usize, midi_lo: u8, midi_hi: u8) -> MelodySpec {
    let mut notes = Vec::with_capacity(n_notes + 2);
    for i in 0..n_notes {
        if i > 0 && rng.gen_bool(0.15) {
            notes.push((None, rng.gen_range(4..12)));
        }
        notes.push((
            Some(rng.gen_range(midi_lo..=midi_hi)),
            rng.gen_range(12..40),
        ));
    }
    MelodySpec {
        notes,
        vibrato_cents: rng.gen_range(10.0..30.0),
        vibrato_hz: rng.gen_range(4.5..6.5),
        glide_frames: 2,
        ..MelodySpec::default()
    }
}
