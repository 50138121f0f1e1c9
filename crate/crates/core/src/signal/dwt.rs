use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};

/// One level of the orthonormal Haar transform.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarBands {
    pub approx: Vec<f64>,
    pub detail: Vec<f64>,
    /// Set when the input had odd length and a trailing zero was appended.
    pub padded: bool,
}

pub fn haar_dwt(x: &[f64]) -> Result<HaarBands> {
    if x.is_empty() {
        return Err(Error::InvalidInput("haar dwt of an empty signal".into()));
    }
    let padded = x.len() % 2 == 1;
    let half = x.len().div_ceil(2);
    let mut approx = Vec::with_capacity(half);
    let mut detail = Vec::with_capacity(half);
    for i in 0..half {
        let a = x[2 * i];
        let b = x.get(2 * i + 1).copied().unwrap_or(0.0);
        approx.push((a + b) * FRAC_1_SQRT_2);
        detail.push((a - b) * FRAC_1_SQRT_2);
    }
    Ok(HaarBands {
        approx,
        detail,
        padded,
    })
}

/// Inverse of [`haar_dwt`]; drops the padding sample if one was added.
pub fn haar_idwt(bands: &HaarBands) -> Result<Vec<f64>> {
    if bands.approx.len() != bands.detail.len() {
        return Err(Error::InvalidInput(format!(
            "approx/detail length mismatch: {} vs {}",
            bands.approx.len(),
            bands.detail.len()
        )));
    }
    let mut out = Vec::with_capacity(2 * bands.approx.len());
    for (a, d) in bands.approx.iter().zip(&bands.detail) {
        out.push((a + d) * FRAC_1_SQRT_2);
        out.push((a - d) * FRAC_1_SQRT_2);
    }
    if bands.padded {
        out.pop();
    }
    Ok(out)
}

/// Full `levels`-deep Haar packet decomposition: every subband is split again
/// at each level, giving `2^levels` subbands of length `len / 2^levels`
/// (after zero-padding `x` to a multiple of `2^levels`). Level 0 returns the
/// input unchanged.
pub fn haar_packet(x: &[f64], levels: usize) -> Result<Vec<Vec<f64>>> {
    if x.is_empty() {
        return Err(Error::InvalidInput("haar packet of an empty signal".into()));
    }
    let block = 1usize << levels;
    let mut first = x.to_vec();
    first.resize(x.len().div_ceil(block) * block, 0.0);
    let mut bands = vec![first];
    for _ in 0..levels {
        let mut next = Vec::with_capacity(bands.len() * 2);
        for b in &bands {
            let split = haar_dwt(b)?;
            next.push(split.approx);
            next.push(split.detail);
        }
        bands = next;
    }
    Ok(bands)
}
