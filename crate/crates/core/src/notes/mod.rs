//! Reference note sequences: HMM decoding from a pitch curve, plus the
//! Standard MIDI File and plain-text exchange formats.

mod decode;
mod io;
mod viterbi;

pub use decode::{decode_notes, NoteHmmParams};
pub use io::{read_midi, read_notes, read_notes_txt, write_midi, write_notes_txt};
pub use viterbi::viterbi;

use crate::error::{Error, Result};

pub const MIDI_MIN: u8 = 33;
pub const MIDI_MAX: u8 = 84;

/// One note on the analysis frame grid, covering frames `onset..offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Note {
    pub midi: u8,
    pub onset: usize,
    pub offset: usize,
}

impl Note {
    pub fn new(midi: u8, onset: usize, offset: usize) -> Self {
        Self {
            midi,
            onset,
            offset,
        }
    }

    pub fn frames(&self) -> std::ops::Range<usize> {
        self.onset..self.offset
    }

    pub fn len(&self) -> usize {
        self.offset - self.onset
    }

    pub fn is_empty(&self) -> bool {
        self.offset <= self.onset
    }
}

/// Monophonic notes, sorted by onset and non-overlapping. Gaps are rests.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NoteSequence {
    pub notes: Vec<Note>,
}

impl NoteSequence {
    pub fn new(notes: Vec<Note>) -> Result<Self> {
        let seq = Self { notes };
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.notes.iter().enumerate() {
            if !(MIDI_MIN..=MIDI_MAX).contains(&n.midi) {
                return Err(Error::InvalidInput(format!(
                    "note {i}: midi {} outside {MIDI_MIN}..={MIDI_MAX}",
                    n.midi
                )));
            }
            if n.onset >= n.offset {
                return Err(Error::InvalidInput(format!(
                    "note {i}: onset {} is not before offset {}",
                    n.onset, n.offset
                )));
            }
            if i > 0 && self.notes[i - 1].offset > n.onset {
                return Err(Error::InvalidInput(format!(
                    "note {i} overlaps or precedes note {}",
                    i - 1
                )));
            }
        }
        Ok(())
    }

    /// Last frame covered by any note.
    pub fn end_frame(&self) -> usize {
        self.notes.last().map_or(0, |n| n.offset)
    }

    /// Per-frame note number (`None` for rests) over `n_frames` frames.
    pub fn frame_notes(&self, n_frames: usize) -> Vec<Option<u8>> {
        let mut out = vec![None; n_frames];
        for n in &self.notes {
            for t in n.onset..n.offset.min(n_frames) {
                out[t] = Some(n.midi);
            }
        }
        out
    }

    pub fn transposed(&self, semitones: i32) -> Result<Self> {
        let notes = self
            .notes
            .iter()
            .map(|n| {
                let m = n.midi as i32 + semitones;
                Note::new(m.clamp(0, 127) as u8, n.onset, n.offset)
            })
            .collect();
        Self::new(notes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rules() {
        assert!(NoteSequence::new(vec![Note::new(60, 0, 10), Note::new(62, 10, 20)]).is_ok());
        assert!(NoteSequence::new(vec![Note::new(60, 0, 10), Note::new(62, 9, 20)]).is_err());
        assert!(NoteSequence::new(vec![Note::new(60, 5, 5)]).is_err());
        assert!(NoteSequence::new(vec![Note::new(20, 0, 5)]).is_err());
    }

    #[test]
    fn frame_expansion_marks_rests() {
        let seq = NoteSequence::new(vec![Note::new(60, 1, 3), Note::new(64, 4, 5)]).unwrap();
        assert_eq!(
            seq.frame_notes(6),
            vec![None, Some(60), Some(60), None, Some(64), None]
        );
    }
}
