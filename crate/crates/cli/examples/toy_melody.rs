//! Writes a synthetic sung melody for trying the CLI:
//! `<dir>/melody.wav` sung `cents` sharp (default +40), plus its written
//! notes as `melody.notes.txt` and `melody.mid`.
//!
//! cargo run -p karatune-cli --example toy_melody -- <dir> [cents] [seed]

use std::path::PathBuf;

use karatune_core::notes::{write_midi, write_notes_txt};
use karatune_core::signal::save_wav;
use karatune_core::toy::{render, MelodySpec, HOP, SAMPLE_RATE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "toy".into()));
    let cents: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(40.0);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let spec = MelodySpec {
        detune_cents: cents,
        vibrato_cents: 20.0,
        glide_frames: 3,
        ..MelodySpec::default()
    };
    let clip = render(&spec, seed)?;
    std::fs::create_dir_all(&dir)?;
    save_wav(&clip.waveform, dir.join("melody.wav"))?;
    std::fs::write(dir.join("melody.notes.txt"), write_notes_txt(&clip.notes))?;
    write_midi(&clip.notes, dir.join("melody.mid"), HOP, SAMPLE_RATE)?;
    println!(
        "wrote {} ({:.2} s, {} notes, {cents:+} cents)",
        dir.join("melody.wav").display(),
        clip.waveform.len() as f64 / SAMPLE_RATE as f64,
        clip.notes.len()
    );
    Ok(())
}
