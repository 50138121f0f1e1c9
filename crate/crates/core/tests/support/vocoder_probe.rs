//! The one-clip vocoder run behind the overfit and controllability checks.

use karatune_core::toy::{render, MelodySpec, ToyClip};
use karatune_core::vocoder::{TrainVocoderConfig, VocoderConfig};

pub const PROBE_SHIFTS: [f64; 4] = [-2.0, -1.0, 1.0, 2.0];

/// One second (64 frames) rising by whole tones from midi 55 to 69 with
/// glides and vibrato, so shifted requests stay inside the sung range.
pub fn probe_clip() -> ToyClip {
    let spec = MelodySpec {
        notes: (0..8).map(|i| (Some(55 + 2 * i as u8), 8)).collect(),
        glide_frames: 7,
        vibrato_cents: 20.0,
        ..MelodySpec::default()
    };
    render(&spec, 0).expect("probe clip renders")
}

pub fn probe_model_config() -> VocoderConfig {
    VocoderConfig::toy()
}

pub fn probe_training_config() -> TrainVocoderConfig {
    TrainVocoderConfig {
        steps: 2000,
        segment_frames: 16,
        ..TrainVocoderConfig::default()
    }
}
