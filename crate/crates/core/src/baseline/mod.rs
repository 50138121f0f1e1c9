//! DSP resynthesis baselines: a phase-locked phase vocoder pitch shifter and
//! a pulse-plus-noise source-filter synthesizer in the style of WORLD.

mod phase_vocoder;
mod world;

pub use phase_vocoder::{phase_vocoder_shift, ShiftPlan};
pub use world::{default_aperiodicity, minimum_phase_response, world_like_synthesize};
