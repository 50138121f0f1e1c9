use std::fmt::Write as _;
use std::path::Path;

use midly::num::{u15, u24, u28, u4, u7};
use midly::{Format, Header, MetaMessage, MidiMessage, Smf, Timing, TrackEvent, TrackEventKind};

use super::{Note, NoteSequence};
use crate::error::{Error, Result};

const TICKS_PER_BEAT: u16 = 1000;
const TEMPO_US_PER_BEAT: u32 = 500_000;
const VELOCITY: u8 = 100;

/// Parses `midi onset_frame offset_frame` lines. Blank lines and `#` comments
/// are ignored.
pub fn read_notes_txt(text: &str) -> Result<NoteSequence> {
    let mut notes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = || {
            Error::InvalidInput(format!(
                "line {}: expected `midi onset offset`, got `{line}`",
                lineno + 1
            ))
        };
        if fields.len() != 3 {
            return Err(parse_err());
        }
        let midi: u8 = fields[0].parse().map_err(|_| parse_err())?;
        let onset: usize = fields[1].parse().map_err(|_| parse_err())?;
        let offset: usize = fields[2].parse().map_err(|_| parse_err())?;
        notes.push(Note::new(midi, onset, offset));
    }
    NoteSequence::new(notes)
}

pub fn write_notes_txt(seq: &NoteSequence) -> String {
    let mut out = String::from("# midi onset_frame offset_frame\n");
    for n in &seq.notes {
        let _ = writeln!(out, "{} {} {}", n.midi, n.onset, n.offset);
    }
    out
}

fn frame_secs(hop: usize, sample_rate: u32) -> f64 {
    hop as f64 / sample_rate as f64
}

/// Writes a type-0 Standard MIDI File at a fixed 120 BPM.
pub fn write_midi(
    seq: &NoteSequence,
    path: impl AsRef<Path>,
    hop: usize,
    sample_rate: u32,
) -> Result<()> {
    let path = path.as_ref();
    let tick_secs = TEMPO_US_PER_BEAT as f64 * 1e-6 / TICKS_PER_BEAT as f64;
    let to_tick =
        |frame: usize| (frame as f64 * frame_secs(hop, sample_rate) / tick_secs).round() as u64;

    let mut events: Vec<TrackEvent> = vec![TrackEvent {
        delta: u28::new(0),
        kind: TrackEventKind::Meta(MetaMessage::Tempo(u24::new(TEMPO_US_PER_BEAT))),
    }];
    let mut now = 0u64;
    let mut push = |events: &mut Vec<TrackEvent>, tick: u64, message: MidiMessage| {
        events.push(TrackEvent {
            delta: u28::new((tick - now) as u32),
            kind: TrackEventKind::Midi {
                channel: u4::new(0),
                message,
            },
        });
        now = tick;
    };
    for n in &seq.notes {
        let key = u7::new(n.midi);
        push(
            &mut events,
            to_tick(n.onset),
            MidiMessage::NoteOn {
                key,
                vel: u7::new(VELOCITY),
            },
        );
        push(
            &mut events,
            to_tick(n.offset),
            MidiMessage::NoteOff {
                key,
                vel: u7::new(0),
            },
        );
    }
    events.push(TrackEvent {
        delta: u28::new(0),
        kind: TrackEventKind::Meta(MetaMessage::EndOfTrack),
    });
    let mut smf = Smf::new(Header::new(
        Format::SingleTrack,
        Timing::Metrical(u15::new(TICKS_PER_BEAT)),
    ));
    smf.tracks.push(events);
    smf.save(path).map_err(|e| Error::io(path, e))
}

/// Reads note on/off pairs from any SMF (all tracks merged), assuming the
/// first tempo event holds for the whole file.
pub fn read_midi(path: impl AsRef<Path>, hop: usize, sample_rate: u32) -> Result<NoteSequence> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let smf = Smf::parse(&data).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut tempo = TEMPO_US_PER_BEAT;
    'find: for track in &smf.tracks {
        for ev in track {
            if let TrackEventKind::Meta(MetaMessage::Tempo(t)) = ev.kind {
                tempo = t.as_int();
                break 'find;
            }
        }
    }
    let tick_secs = match smf.header.timing {
        Timing::Metrical(tpb) => tempo as f64 * 1e-6 / tpb.as_int() as f64,
        Timing::Timecode(fps, sub) => 1.0 / (fps.as_f32() as f64 * sub as f64),
    };
    let fs = frame_secs(hop, sample_rate);
    let to_frame = |tick: u64| (tick as f64 * tick_secs / fs).round() as usize;

    let mut notes = Vec::new();
    for track in &smf.tracks {
        let mut tick = 0u64;
        let mut open: Option<(u8, u64)> = None;
        for ev in track {
            tick += ev.delta.as_int() as u64;
            let TrackEventKind::Midi { message, .. } = ev.kind else {
                continue;
            };
            let (key, on) = match message {
                MidiMessage::NoteOn { key, vel } => (key.as_int(), vel.as_int() > 0),
                MidiMessage::NoteOff { key, .. } => (key.as_int(), false),
                _ => continue,
            };
            match (on, open) {
                (true, Some((k, start))) => {
                    // Monophonic reading: a new note closes the sounding one.
                    notes.push(Note::new(k, to_frame(start), to_frame(tick)));
                    open = Some((key, tick));
                }
                (true, None) => open = Some((key, tick)),
                (false, Some((k, start))) if k == key => {
                    notes.push(Note::new(k, to_frame(start), to_frame(tick)));
                    open = None;
                }
                (false, _) => {}
            }
        }
    }
    notes.retain(|n| n.offset > n.onset);
    notes.sort_by_key(|n| n.onset);
    NoteSequence::new(notes)
}

/// Reads a reference score, picking the format from the file extension.
pub fn read_notes(path: impl AsRef<Path>, hop: usize, sample_rate: u32) -> Result<NoteSequence> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("mid") | Some("midi") => read_midi(path, hop, sample_rate),
        _ => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            read_notes_txt(&text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn melody() -> NoteSequence {
        NoteSequence::new(vec![
            Note::new(60, 0, 31),
            Note::new(62, 31, 60),
            Note::new(67, 75, 140),
        ])
        .unwrap()
    }

    #[test]
    fn text_round_trip() {
        let seq = melody();
        assert_eq!(read_notes_txt(&write_notes_txt(&seq)).unwrap(), seq);
    }

    #[test]
    fn text_errors_name_the_line() {
        let err = read_notes_txt("60 0 10\n61 x 20\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert!(read_notes_txt("60 10 5").is_err());
    }

    #[test]
    fn midi_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mid");
        let seq = melody();
        write_midi(&seq, &path, 512, 32_000).unwrap();
        assert_eq!(read_notes(&path, 512, 32_000).unwrap(), seq);
        let data = std::fs::read(&path).unwrap();
        let smf = Smf::parse(&data).unwrap();
        assert_eq!(smf.header.format, Format::SingleTrack);
    }
}
