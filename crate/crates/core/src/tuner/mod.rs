//! Rule-based retuning: each reference note's slice of the pitch curve is
//! moved by a constant so its voiced mean lands on the note, which keeps
//! vibrato and bends intact. Optional cross-fades smooth the jumps between
//! neighbouring notes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analysis::PitchCurve;
use crate::error::{Error, Result};
use crate::notes::{Note, NoteSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerConfig {
    /// Shifts larger than this are folded to the nearest octave equivalent.
    pub octave_guard_semitones: f64,
    pub crossfade_frames: usize,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            octave_guard_semitones: 7.0,
            crossfade_frames: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoteShift {
    pub note: Note,
    pub voiced_frames: usize,
    pub mean_before: f64,
    pub shift_applied: f64,
    pub octave_folded: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TuneReport {
    pub shifts: Vec<NoteShift>,
    /// Notes without a single voiced frame; left untouched.
    pub skipped: Vec<Note>,
    pub rmse_cents_before: f64,
    pub rmse_cents_after: f64,
}

impl TuneReport {
    /// One `key=value` record per note, then a summary line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.shifts {
            let _ =
                writeln!(
                out,
                "note midi={} onset={} offset={} voiced_frames={} mean_before={:.4} shift={:+.4}{}",
                s.note.midi,
                s.note.onset,
                s.note.offset,
                s.voiced_frames,
                s.mean_before,
                s.shift_applied,
                if s.octave_folded { " octave_folded=true" } else { "" }
            );
        }
        for n in &self.skipped {
            let _ = writeln!(
                out,
                "skipped midi={} onset={} offset={} reason=no_voiced_frames",
                n.midi, n.onset, n.offset
            );
        }
        let _ = writeln!(
            out,
            "summary rmse_cents_before={:.3} rmse_cents_after={:.3}",
            self.rmse_cents_before, self.rmse_cents_after
        );
        out
    }
}

/// RMS distance in cents between the voiced frames of `p` and the notes
/// sounding at those frames. Frames outside every note are ignored.
pub fn cent_rmse(p: &PitchCurve, reference: &NoteSequence) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for n in &reference.notes {
        for t in n.onset..n.offset.min(p.len()) {
            if p.voiced[t] {
                let d = 100.0 * (p.f0_midi[t] - n.midi as f64);
                sum += d * d;
                count += 1;
            }
        }
    }
    (count > 0).then(|| (sum / count as f64).sqrt())
}

pub fn note_shift_tune(
    p: &PitchCurve,
    reference: &NoteSequence,
    cfg: &TunerConfig,
) -> Result<(PitchCurve, TuneReport)> {
    reference.validate()?;
    if reference.end_frame() > p.len() {
        return Err(Error::InvalidInput(format!(
            "reference notes reach frame {} but the curve has {} frames",
            reference.end_frame(),
            p.len()
        )));
    }
    let mut tuned = p.clone();
    let mut report = TuneReport::default();
    for n in &reference.notes {
        let voiced: Vec<f64> = n
            .frames()
            .filter(|&t| p.voiced[t])
            .map(|t| p.f0_midi[t])
            .collect();
        if voiced.is_empty() {
            report.skipped.push(*n);
            continue;
        }
        let mean = voiced.iter().sum::<f64>() / voiced.len() as f64;
        let raw = n.midi as f64 - mean;
        let (shift, folded) = if raw.abs() > cfg.octave_guard_semitones {
            (raw - 12.0 * (raw / 12.0).round(), true)
        } else {
            (raw, false)
        };
        for t in n.frames() {
            tuned.f0_midi[t] = p.f0_midi[t] + shift;
        }
        report.shifts.push(NoteShift {
            note: *n,
            voiced_frames: voiced.len(),
            mean_before: mean,
            shift_applied: shift,
            octave_folded: folded,
        });
    }
    report.rmse_cents_before = cent_rmse(p, reference).unwrap_or(0.0);
    report.rmse_cents_after = cent_rmse(&tuned, reference).unwrap_or(0.0);
    Ok((tuned, report))
}

/// Smooths the per-note shift (`tuned - original`) across every boundary
/// where two notes abut with different shifts: over the `2 * width` frames
/// around the boundary the shift ramps linearly from one value to the other.
pub fn crossfade_boundaries(
    original: &PitchCurve,
    tuned: &PitchCurve,
    reference: &NoteSequence,
    width: usize,
) -> Result<PitchCurve> {
    if original.len() != tuned.len() {
        return Err(Error::InvalidInput(format!(
            "original has {} frames, tuned has {}",
            original.len(),
            tuned.len()
        )));
    }
    let mut out = tuned.clone();
    if width == 0 {
        return Ok(out);
    }
    let shift = |t: usize| tuned.f0_midi[t] - original.f0_midi[t];
    for pair in reference.notes.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.offset != b.onset || a.offset > tuned.len() || b.offset > tuned.len() {
            continue;
        }
        let boundary = a.offset;
        let (sa, sb) = (shift(a.offset - 1), shift(b.onset));
        if (sa - sb).abs() < 1e-12 {
            continue;
        }
        let lo = boundary.saturating_sub(width).max(a.onset);
        let hi = (boundary + width).min(b.offset);
        for t in lo..hi {
            let lambda =
                (t as f64 - (boundary as f64 - width as f64) + 1.0) / (2 * width + 1) as f64;
            out.f0_midi[t] = original.f0_midi[t] + sa + lambda * (sb - sa);
        }
    }
    Ok(out)
}
