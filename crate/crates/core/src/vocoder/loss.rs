use super::discriminator::BankOutput;
use super::VocoderConfig;
use crate::error::{Error, Result};
use crate::nn::Var;
use crate::signal::StftConfig;

fn check_banks(real: &[BankOutput], fake: &[BankOutput]) -> Result<()> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(Error::Contract(format!(
            "{} real and {} fake discriminator outputs",
            real.len(),
            fake.len()
        )));
    }
    Ok(())
}

/// Least-squares discriminator objective summed over banks:
/// `mean((D(x) - 1)^2) + mean(D(x_hat)^2)`.
pub fn discriminator_loss<'g>(real: &[BankOutput<'g>], fake: &[BankOutput<'g>]) -> Result<Var<'g>> {
    check_banks(real, fake)?;
    let mut total: Option<Var<'g>> = None;
    for (r, f) in real.iter().zip(fake) {
        let term = r
            .score
            .offset(-1.0)?
            .square()?
            .mean()?
            .add(f.score.square()?.mean()?)?;
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty banks"))
}

/// Per bank, the sum over layers of the mean absolute feature difference.
pub fn feature_matching_per_bank<'g>(
    real: &[BankOutput<'g>],
    fake: &[BankOutput<'g>],
) -> Result<Vec<Var<'g>>> {
    check_banks(real, fake)?;
    real.iter()
        .zip(fake)
        .map(|(r, f)| {
            if r.features.is_empty() || r.features.len() != f.features.len() {
                return Err(Error::Contract("feature lists differ in length".into()));
            }
            let mut sum = r.features[0].sub(f.features[0])?.abs()?.mean()?;
            for (a, b) in r.features.iter().zip(&f.features).skip(1) {
                sum = sum.add(a.sub(*b)?.abs()?.mean()?)?;
            }
            Ok(sum)
        })
        .collect()
}

/// Feature-matching loss averaged over banks.
pub fn feature_matching_loss<'g>(
    real: &[BankOutput<'g>],
    fake: &[BankOutput<'g>],
) -> Result<Var<'g>> {
    let per_bank = feature_matching_per_bank(real, fake)?;
    let n = per_bank.len() as f64;
    let mut sum = per_bank[0];
    for v in &per_bank[1..] {
        sum = sum.add(*v)?;
    }
    sum.scale(1.0 / n)
}

/// Mean absolute difference of linear STFT magnitudes.
pub fn stft_loss<'g>(real: Var<'g>, fake: Var<'g>, cfg: StftConfig) -> Result<Var<'g>> {
    if real.numel() != fake.numel() {
        return Err(Error::Contract(format!(
            "stft loss on signals of {} and {} samples",
            real.numel(),
            fake.numel()
        )));
    }
    real.stft_magnitude(cfg)?
        .sub(fake.stft_magnitude(cfg)?)?
        .abs()?
        .mean()
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorLossParts<'g> {
    pub total: Var<'g>,
    pub adversarial: Var<'g>,
    /// Summed over banks, before weighting.
    pub feature_matching: Var<'g>,
    pub stft: Var<'g>,
}

/// `sum_n [mean((D_n(x_hat) - 1)^2) + lambda_fm * FM_n] + lambda_stft * STFT`.
pub fn generator_loss<'g>(
    real: &[BankOutput<'g>],
    fake: &[BankOutput<'g>],
    real_wave: Var<'g>,
    fake_wave: Var<'g>,
    cfg: &VocoderConfig,
) -> Result<GeneratorLossParts<'g>> {
    check_banks(real, fake)?;
    let mut adversarial = fake[0].score.offset(-1.0)?.square()?.mean()?;
    for f in &fake[1..] {
        adversarial = adversarial.add(f.score.offset(-1.0)?.square()?.mean()?)?;
    }
    let per_bank = feature_matching_per_bank(real, fake)?;
    let mut feature_matching = per_bank[0];
    for v in &per_bank[1..] {
        feature_matching = feature_matching.add(*v)?;
    }
    let stft = stft_loss(real_wave, fake_wave, cfg.loss_stft)?;
    let total = adversarial
        .add(feature_matching.scale(cfg.lambda_fm)?)?
        .add(stft.scale(cfg.lambda_stft)?)?;
    Ok(GeneratorLossParts {
        total,
        adversarial,
        feature_matching,
        stft,
    })
}
