//! Shared inputs for the benchmarks.

use karatune_core::toy::{render, MelodySpec, ToyClip};

/// A sharp four-note melody of about `seconds` seconds.
pub fn melody(seconds: f64) -> ToyClip {
    let frames = (seconds * 32_000.0 / 512.0).round() as usize;
    let per_note = (frames / 4).max(1);
    let spec = MelodySpec {
        notes: [57, 60, 64, 62]
            .iter()
            .map(|&m| (Some(m), per_note))
            .collect(),
        detune_cents: 40.0,
        vibrato_cents: 20.0,
        glide_frames: 3,
        ..MelodySpec::default()
    };
    render(&spec, 0).expect("toy melody renders")
}
