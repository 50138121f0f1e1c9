use std::fmt::Write as _;

use crate::analysis::PitchCurve;
use crate::error::{Error, Result};
use crate::notes::NoteSequence;
use crate::tuner::{cent_rmse, NoteShift};

/// Scores of one output, measured on the output audio itself.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    /// Output pitch vs. reference notes over voiced frames inside notes.
    pub cent_rmse: f64,
    /// Same measure on the input, when known.
    pub input_cent_rmse: Option<f64>,
    pub scored_frames: usize,
    /// Percentage of frames whose voicing matches the input analysis.
    pub vuv_agreement: Option<f64>,
    pub shifts: Vec<NoteShift>,
    /// Wall-clock seconds per stage. Kept out of [`MetricsReport::to_text`]
    /// so that reports are reproducible byte for byte.
    pub timings: Vec<(String, f64)>,
}

impl MetricsReport {
    /// Scores `measured` against `reference`; `input` adds the voicing
    /// agreement and the input RMSE.
    pub fn score(
        measured: &PitchCurve,
        reference: &NoteSequence,
        input: Option<&PitchCurve>,
    ) -> Result<Self> {
        if reference.is_empty() {
            return Err(Error::InvalidInput(
                "reference has no notes: nothing to score".into(),
            ));
        }
        let cent_rmse = cent_rmse(measured, reference).ok_or_else(|| {
            Error::InvalidInput("no voiced output frames fall inside the reference notes".into())
        })?;
        let scored_frames = reference
            .notes
            .iter()
            .flat_map(|n| n.onset..n.offset.min(measured.len()))
            .filter(|&t| measured.voiced[t])
            .count();
        let (input_cent_rmse, vuv_agreement) = match input {
            Some(p) => {
                let n = p.len().min(measured.len());
                let agree = (0..n)
                    .filter(|&t| p.voiced[t] == measured.voiced[t])
                    .count();
                (
                    crate::tuner::cent_rmse(p, reference),
                    (n > 0).then(|| 100.0 * agree as f64 / n as f64),
                )
            }
            None => (None, None),
        };
        Ok(Self {
            cent_rmse,
            input_cent_rmse,
            scored_frames,
            vuv_agreement,
            shifts: Vec::new(),
            timings: Vec::new(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "cent_rmse {:.3}", self.cent_rmse);
        if let Some(v) = self.input_cent_rmse {
            let _ = writeln!(out, "input_cent_rmse {v:.3}");
        }
        let _ = writeln!(out, "scored_frames {}", self.scored_frames);
        if let Some(v) = self.vuv_agreement {
            let _ = writeln!(out, "vuv_agreement_percent {v:.2}");
        }
        if !self.shifts.is_empty() {
            let _ = writeln!(
                out,
                "# midi onset offset voiced_frames mean_before shift_cents octave_folded"
            );
            for s in &self.shifts {
                let _ = writeln!(
                    out,
                    "shift {} {} {} {} {:.4} {:+.2} {}",
                    s.note.midi,
                    s.note.onset,
                    s.note.offset,
                    s.voiced_frames,
                    s.mean_before,
                    100.0 * s.shift_applied,
                    s.octave_folded
                );
            }
        }
        out
    }

    pub fn timings_text(&self) -> String {
        let mut out = String::new();
        for (stage, secs) in &self.timings {
            let _ = writeln!(out, "{stage} {secs:.3}");
        }
        out
    }
}
