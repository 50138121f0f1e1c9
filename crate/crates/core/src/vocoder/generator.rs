use rand::Rng;

use super::VocoderConfig;
use crate::error::Result;
use crate::nn::layers::{Conv1d, ConvTranspose1d, LRELU_SLOPE};
use crate::nn::{Binder, ParamStore, Var};

/// Residual block of the multi-receptive-field module: for each dilation
/// pair, `x += conv_d2(lrelu(conv_d1(lrelu(x))))`.
#[derive(Debug, Clone)]
pub struct MrfResBlock {
    pub convs: Vec<(Conv1d, Conv1d)>,
}

impl MrfResBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        kernel: usize,
        dilations: &[[usize; 2]],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let convs = dilations
            .iter()
            .enumerate()
            .map(|(i, &[d1, d2])| {
                Ok((
                    Conv1d::same(
                        store,
                        &format!("{name}.{i}.a"),
                        channels,
                        channels,
                        kernel,
                        d1,
                        rng,
                    )?,
                    Conv1d::same(
                        store,
                        &format!("{name}.{i}.b"),
                        channels,
                        channels,
                        kernel,
                        d2,
                        rng,
                    )?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { convs })
    }

    pub fn forward<'g>(&self, p: &Binder, mut x: Var<'g>) -> Result<Var<'g>> {
        for (a, b) in &self.convs {
            let h = a.forward(p, x.leaky_relu(LRELU_SLOPE)?)?;
            let h = b.forward(p, h.leaky_relu(LRELU_SLOPE)?)?;
            x = x.add(h)?;
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
struct Stage {
    up: ConvTranspose1d,
    rate: usize,
    mrf: Vec<MrfResBlock>,
    /// Projection to one waveform channel, present on the top-K stages.
    skip: Option<Conv1d>,
}

/// Resolution-connected generator: transposed-convolution upsampling with a
/// multi-receptive-field module per stage. The deepest K stages each project
/// to a waveform; each projection is nearest-upsampled to the next stage's
/// rate and summed with that stage's, and the sum goes through tanh.
#[derive(Debug, Clone)]
pub struct Generator {
    input: Conv1d,
    stages: Vec<Stage>,
}

impl Generator {
    pub fn new(store: &mut ParamStore, cfg: &VocoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let input = Conv1d::same(
            store,
            "gen.input",
            cfg.n_env_bins,
            cfg.base_channels,
            cfg.input_kernel,
            1,
            rng,
        )?;
        let n = cfg.upsample_rates.len();
        let mut stages = Vec::with_capacity(n);
        let mut c_in = cfg.base_channels;
        for (i, (&rate, &kernel)) in cfg
            .upsample_rates
            .iter()
            .zip(&cfg.upsample_kernels)
            .enumerate()
        {
            let c_out = cfg.stage_channels(i);
            let up = ConvTranspose1d::upsampler(
                store,
                &format!("gen.up{i}"),
                c_in,
                c_out,
                kernel,
                rate,
                rng,
            )?;
            let mrf = cfg
                .resblock_kernels
                .iter()
                .enumerate()
                .map(|(j, &k)| {
                    MrfResBlock::new(
                        store,
                        &format!("gen.mrf{i}.{j}"),
                        c_out,
                        k,
                        &cfg.resblock_dilations,
                        rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let skip = if i + cfg.top_k >= n {
                Some(Conv1d::same(
                    store,
                    &format!("gen.skip{i}"),
                    c_out,
                    1,
                    cfg.output_kernel,
                    1,
                    rng,
                )?)
            } else {
                None
            };
            stages.push(Stage {
                up,
                rate,
                mrf,
                skip,
            });
            c_in = c_out;
        }
        Ok(Self { input, stages })
    }

    /// `[1, bins, frames]` → `[1, 1, frames * hop]`.
    pub fn forward<'g>(&self, p: &Binder, r: Var<'g>) -> Result<Var<'g>> {
        let mut x = self.input.forward(p, r)?;
        let mut out: Option<Var<'g>> = None;
        for stage in &self.stages {
            x = stage.up.forward(p, x.leaky_relu(LRELU_SLOPE)?)?;
            let mut acc = stage.mrf[0].forward(p, x)?;
            for block in &stage.mrf[1..] {
                acc = acc.add(block.forward(p, x)?)?;
            }
            x = acc.scale(1.0 / stage.mrf.len() as f64)?;
            if let Some(skip) = &stage.skip {
                let y = skip.forward(p, x.leaky_relu(LRELU_SLOPE)?)?;
                out = Some(match out {
                    Some(prev) => prev.upsample_nearest(stage.rate)?.add(y)?,
                    None => y,
                });
            }
        }
        out.expect("validated config has at least one skip stage")
            .tanh()
    }
}
