use crate::error::{Error, Result};

pub fn hz_to_midi(hz: f64) -> Result<f64> {
    if !hz.is_finite() || hz <= 0.0 {
        return Err(Error::Domain(format!(
            "frequency must be positive and finite, got {hz}"
        )));
    }
    Ok(69.0 + 12.0 * (hz / 440.0).log2())
}

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * ((midi - 69.0) / 12.0).exp2()
}

/// Signed distance `a - b` in cents.
pub fn cents_between(a_midi: f64, b_midi: f64) -> f64 {
    100.0 * (a_midi - b_midi)
}
