use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{viterbi, Note, NoteSequence, MIDI_MAX, MIDI_MIN};
use crate::analysis::PitchCurve;
use crate::error::{Error, Result};

/// Parameters of the note-tracking HMM. State 0 is silence, state `i >= 1`
/// is MIDI note `MIDI_MIN + i - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoteHmmParams {
    pub self_loop_prob: f64,
    /// Switch mass to another pitch decays as `exp(-|interval| / decay)`.
    pub switch_decay_semitones: f64,
    /// Fraction of a note's switch mass that goes to silence.
    pub silence_switch_share: f64,
    pub emission_sigma_semitones: f64,
    pub min_note_frames: usize,
    /// Silence on a voiced frame scores like a pitch this many sigmas away.
    pub voiced_silence_sigmas: f64,
    /// Log-likelihood of any pitch state on an unvoiced frame (silence is 0).
    pub unvoiced_pitch_log_prob: f64,
}

impl Default for NoteHmmParams {
    fn default() -> Self {
        Self {
            self_loop_prob: 0.98,
            switch_decay_semitones: 5.0,
            silence_switch_share: 0.3,
            emission_sigma_semitones: 0.7,
            min_note_frames: 8,
            voiced_silence_sigmas: 3.0,
            unvoiced_pitch_log_prob: (0.01f64).ln(),
        }
    }
}

impl NoteHmmParams {
    pub fn n_states(&self) -> usize {
        1 + (MIDI_MAX - MIDI_MIN) as usize + 1
    }

    pub fn state_midi(state: usize) -> Option<u8> {
        (state > 0).then(|| MIDI_MIN + (state - 1) as u8)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.self_loop_prob)
            || !(0.0..=1.0).contains(&self.silence_switch_share)
            || self.emission_sigma_semitones <= 0.0
            || self.switch_decay_semitones <= 0.0
        {
            return Err(Error::Config(format!(
                "invalid note HMM parameters: {self:?}"
            )));
        }
        Ok(())
    }

    /// Row-stochastic transition matrix (probabilities, not logs).
    pub fn transition_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.n_states();
        let n_pitch = n - 1;
        let stay = self.self_loop_prob;
        let switch = 1.0 - stay;
        let mut m = vec![vec![0.0; n]; n];
        m[0][0] = stay;
        for j in 1..n {
            m[0][j] = switch / n_pitch as f64;
        }
        for i in 1..n {
            let weights: Vec<f64> = (1..n)
                .map(|j| {
                    if j == i {
                        0.0
                    } else {
                        (-((i as f64 - j as f64).abs()) / self.switch_decay_semitones).exp()
                    }
                })
                .collect();
            let total: f64 = weights.iter().sum();
            m[i][i] = stay;
            m[i][0] = switch * self.silence_switch_share;
            for j in 1..n {
                if j != i {
                    m[i][j] = switch * (1.0 - self.silence_switch_share) * weights[j - 1] / total;
                }
            }
        }
        m
    }

    fn log_emissions(&self, p: &PitchCurve) -> Vec<Vec<f64>> {
        let n = self.n_states();
        let sigma = self.emission_sigma_semitones;
        let norm = -(sigma * (2.0 * PI).sqrt()).ln();
        (0..p.len())
            .map(|t| {
                let mut row = vec![0.0; n];
                if p.voiced[t] {
                    let f = p.f0_midi[t];
                    row[0] = norm - 0.5 * self.voiced_silence_sigmas.powi(2);
                    for (s, r) in row.iter_mut().enumerate().skip(1) {
                        let m = (MIDI_MIN as usize + s - 1) as f64;
                        let z = (f - m) / sigma;
                        *r = norm - 0.5 * z * z;
                    }
                } else {
                    row[0] = 0.0;
                    for r in row.iter_mut().skip(1) {
                        *r = self.unvoiced_pitch_log_prob;
                    }
                }
                row
            })
            .collect()
    }
}

/// Decodes a note sequence from a pitch curve: Gaussian emissions around each
/// semitone on voiced frames, a silence state for unvoiced frames, Viterbi
/// decoding, then removal of notes shorter than `min_note_frames`.
pub fn decode_notes(p: &PitchCurve, params: &NoteHmmParams) -> Result<NoteSequence> {
    if p.is_empty() {
        return Err(Error::InvalidInput(
            "cannot decode notes from an empty curve".into(),
        ));
    }
    params.validate()?;
    let trans: Vec<Vec<f64>> = params
        .transition_matrix()
        .into_iter()
        .map(|r| r.into_iter().map(f64::ln).collect())
        .collect();
    let n = params.n_states();
    let init = vec![-(n as f64).ln(); n];
    let path = viterbi(&params.log_emissions(p), &trans, &init)?;
    let runs = absorb_short_runs(to_runs(&path), params.min_note_frames);
    let notes = runs
        .into_iter()
        .filter_map(|r| {
            NoteHmmParams::state_midi(r.state).map(|midi| Note::new(midi, r.start, r.end))
        })
        .collect();
    NoteSequence::new(notes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Run {
    state: usize,
    start: usize,
    end: usize,
}

fn to_runs(path: &[usize]) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    for (t, &s) in path.iter().enumerate() {
        match runs.last_mut() {
            Some(r) if r.state == s => r.end = t + 1,
            _ => runs.push(Run {
                state: s,
                start: t,
                end: t + 1,
            }),
        }
    }
    runs
}

fn merge_equal_neighbours(runs: Vec<Run>) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::with_capacity(runs.len());
    for r in runs {
        match out.last_mut() {
            Some(last) if last.state == r.state => last.end = r.end,
            _ => out.push(r),
        }
    }
    out
}

/// Repeatedly folds the first too-short note run into its preceding note,
/// else its following note, else turns it into silence.
fn absorb_short_runs(mut runs: Vec<Run>, min_frames: usize) -> Vec<Run> {
    loop {
        let Some(i) = runs
            .iter()
            .position(|r| r.state != 0 && r.end - r.start < min_frames)
        else {
            return runs;
        };
        if i > 0 && runs[i - 1].state != 0 {
            runs[i].state = runs[i - 1].state;
        } else if i + 1 < runs.len() && runs[i + 1].state != 0 {
            runs[i].state = runs[i + 1].state;
        } else {
            runs[i].state = 0;
        }
        runs = merge_equal_neighbours(runs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(values: Vec<f64>) -> PitchCurve {
        PitchCurve::from_midi(values, 512, 32_000)
    }

    #[test]
    fn transition_rows_are_stochastic() {
        for row in NoteHmmParams::default().transition_matrix() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn constant_curve_is_one_note() {
        let seq = decode_notes(&curve(vec![60.0; 100]), &NoteHmmParams::default()).unwrap();
        assert_eq!(seq.notes, vec![Note::new(60, 0, 100)]);
    }

    #[test]
    fn unvoiced_frames_become_rests() {
        let mut p = curve(vec![60.0; 60]);
        for t in 20..40 {
            p.voiced[t] = false;
        }
        let seq = decode_notes(&p, &NoteHmmParams::default()).unwrap();
        assert_eq!(seq.len(), 2);
        assert!(seq.notes.iter().all(|n| n.midi == 60));
        assert!(seq.notes[0].offset <= 21 && seq.notes[1].onset >= 19);
    }

    #[test]
    fn silent_curve_has_no_notes() {
        let mut p = curve(vec![50.0; 30]);
        p.voiced = vec![false; 30];
        assert!(decode_notes(&p, &NoteHmmParams::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn short_blips_are_absorbed() {
        let runs = vec![
            Run {
                state: 5,
                start: 0,
                end: 20,
            },
            Run {
                state: 7,
                start: 20,
                end: 23,
            },
            Run {
                state: 5,
                start: 23,
                end: 40,
            },
            Run {
                state: 0,
                start: 40,
                end: 50,
            },
            Run {
                state: 9,
                start: 50,
                end: 52,
            },
            Run {
                state: 0,
                start: 52,
                end: 60,
            },
        ];
        let out = absorb_short_runs(runs, 8);
        assert_eq!(
            out,
            vec![
                Run {
                    state: 5,
                    start: 0,
                    end: 40
                },
                Run {
                    state: 0,
                    start: 40,
                    end: 60
                },
            ]
        );
    }

    #[test]
    fn empty_curve_is_rejected() {
        assert!(decode_notes(&curve(vec![]), &NoteHmmParams::default()).is_err());
    }
}
