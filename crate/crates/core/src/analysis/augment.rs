use super::SpectralEnvelope;
use crate::error::{Error, Result};

/// Translates every frame by `shift_bins` along frequency. Vacated bins repeat
/// the nearest edge bin; the shape is unchanged.
pub fn shift_envelope(
    sp: &SpectralEnvelope,
    shift_bins: i32,
    max_shift: usize,
) -> Result<SpectralEnvelope> {
    if shift_bins.unsigned_abs() as usize > max_shift {
        return Err(Error::Config(format!(
            "envelope shift {shift_bins} exceeds the limit of {max_shift} bins"
        )));
    }
    let env = sp
        .env
        .iter()
        .map(|frame| {
            let n = frame.len() as i64;
            (0..n)
                .map(|k| frame[(k - shift_bins as i64).clamp(0, n - 1) as usize])
                .collect()
        })
        .collect();
    Ok(SpectralEnvelope {
        env,
        sample_rate: sp.sample_rate,
        hop: sp.hop,
    })
}

/// Keeps the lowest `keep_bins` bins of every frame.
pub fn crop_high_bands(sp: &SpectralEnvelope, keep_bins: usize) -> Result<SpectralEnvelope> {
    if keep_bins == 0 || keep_bins > sp.n_bins() {
        return Err(Error::Config(format!(
            "keep_bins must be in 1..={}, got {keep_bins}",
            sp.n_bins()
        )));
    }
    Ok(SpectralEnvelope {
        env: sp.env.iter().map(|f| f[..keep_bins].to_vec()).collect(),
        sample_rate: sp.sample_rate,
        hop: sp.hop,
    })
}
