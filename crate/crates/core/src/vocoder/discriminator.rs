use rand::Rng;

use super::VocoderConfig;
use crate::error::Result;
use crate::nn::layers::{Conv1d, LRELU_SLOPE};
use crate::nn::{Binder, ConvGeometry, ParamStore, Var};

/// Shortest waveform the banks score; shorter inputs are zero padded.
pub const MIN_DISC_LEN: usize = 64;

/// Score map and every intermediate activation of one discriminator.
#[derive(Debug, Clone)]
pub struct BankOutput<'g> {
    pub score: Var<'g>,
    pub features: Vec<Var<'g>>,
}

fn run_stack<'g>(
    convs: &[Conv1d],
    post: &Conv1d,
    p: &Binder,
    mut x: Var<'g>,
) -> Result<BankOutput<'g>> {
    let mut features = Vec::with_capacity(convs.len() + 1);
    for conv in convs {
        x = conv.forward(p, x)?.leaky_relu(LRELU_SLOPE)?;
        features.push(x);
    }
    let score = post.forward(p, x)?;
    features.push(score);
    Ok(BankOutput { score, features })
}

/// Folds the waveform by its period so each phase is scored as a separate
/// sequence, then runs a strided convolution stack along time.
#[derive(Debug, Clone)]
pub struct PeriodDiscriminator {
    pub period: usize,
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl PeriodDiscriminator {
    pub fn new(
        store: &mut ParamStore,
        period: usize,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let name = format!("rpd{period}");
        let c = channels;
        let plan = [(1, c, 3), (c, 2 * c, 3), (2 * c, 2 * c, 1)];
        let convs = plan
            .iter()
            .enumerate()
            .map(|(i, &(ci, co, s))| {
                Conv1d::new(
                    store,
                    &format!("{name}.conv{i}"),
                    ci,
                    co,
                    5,
                    ConvGeometry::new(s, 1, 2),
                    true,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let post = Conv1d::same(store, &format!("{name}.post"), 2 * c, 1, 3, 1, rng)?;
        Ok(Self {
            period,
            convs,
            post,
        })
    }

    /// `x` is `[1, 1, T]`.
    pub fn forward<'g>(&self, p: &Binder, x: Var<'g>) -> Result<BankOutput<'g>> {
        run_stack(&self.convs, &self.post, p, x.fold_period(self.period)?)
    }
}

/// Scores the full Haar wavelet packet at depth `level`, subbands stacked as
/// channels; level 0 is the raw waveform.
#[derive(Debug, Clone)]
pub struct ScaleDiscriminator {
    pub level: usize,
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl ScaleDiscriminator {
    pub fn new(
        store: &mut ParamStore,
        level: usize,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let name = format!("rsd{level}");
        let c = channels;
        let plan = [
            (1 << level, c, 15, 1),
            (c, 2 * c, 11, 4),
            (2 * c, 2 * c, 11, 4),
            (2 * c, 2 * c, 5, 1),
        ];
        let convs = plan
            .iter()
            .enumerate()
            .map(|(i, &(ci, co, k, s))| {
                let geom = ConvGeometry::new(s, 1, (k - 1) / 2);
                Conv1d::new(
                    store,
                    &format!("{name}.conv{i}"),
                    ci,
                    co,
                    k,
                    geom,
                    true,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let post = Conv1d::same(store, &format!("{name}.post"), 2 * c, 1, 3, 1, rng)?;
        Ok(Self { level, convs, post })
    }

    pub fn forward<'g>(&self, p: &Binder, mut x: Var<'g>) -> Result<BankOutput<'g>> {
        for _ in 0..self.level {
            x = x.haar_dwt()?;
        }
        run_stack(&self.convs, &self.post, p, x)
    }
}

/// Period banks followed by scale banks, in one parameter store.
#[derive(Debug)]
pub struct Discriminators {
    pub store: ParamStore,
    pub periods: Vec<PeriodDiscriminator>,
    pub scales: Vec<ScaleDiscriminator>,
}

impl Discriminators {
    pub fn new(cfg: &VocoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let periods = cfg
            .periods
            .iter()
            .map(|&p| PeriodDiscriminator::new(&mut store, p, cfg.disc_channels, rng))
            .collect::<Result<Vec<_>>>()?;
        let scales = (0..cfg.scale_levels)
            .map(|m| ScaleDiscriminator::new(&mut store, m, cfg.disc_channels, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            store,
            periods,
            scales,
        })
    }

    pub fn n_banks(&self) -> usize {
        self.periods.len() + self.scales.len()
    }

    /// Scores a `[1, 1, T]` waveform with every bank. The flag reports
    /// whether the input was padded up to [`MIN_DISC_LEN`].
    pub fn forward<'g>(&self, p: &Binder, x: Var<'g>) -> Result<(Vec<BankOutput<'g>>, bool)> {
        let len = x.numel();
        let padded = len < MIN_DISC_LEN;
        let x = if padded {
            x.reshape(&[1, 1, len])?.pad_time(0, MIN_DISC_LEN - len)?
        } else {
            x.reshape(&[1, 1, len])?
        };
        let mut out = Vec::with_capacity(self.n_banks());
        for d in &self.periods {
            out.push(d.forward(p, x)?);
        }
        for d in &self.scales {
            out.push(d.forward(p, x)?);
        }
        Ok((out, padded))
    }
}
