//! Finite-difference checks over every layer, op and training loss.

use karatune_core::nn::gradcheck::GradCheck;
use karatune_core::nn::layers::{
    Conv1d, ConvTranspose1d, Embedding, LayerNorm, Linear, MultiHeadAttention,
};
use karatune_core::nn::{Binder, ConvGeometry, ParamStore, Tensor, Var};
use karatune_core::predictor::{mse_pitch_loss, FftBlock};
use karatune_core::signal::StftConfig;
use karatune_core::vocoder::{
    discriminator_loss, feature_matching_loss, generator_loss, stft_loss, Discriminators,
    Generator, PitchBinning, SfBlock,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    probe_sum, random_tensor, repeat_gradcheck, repeat_gradcheck_with, rng, tiny_vocoder_config,
    GradSummary,
};

fn inputs(
    shapes: &[&[usize]],
    scale: f64,
) -> impl FnMut(&mut ChaCha8Rng) -> (ParamStore, Vec<Tensor>) {
    let shapes: Vec<Vec<usize>> = shapes.iter().map(|s| s.to_vec()).collect();
    move |r| {
        (
            ParamStore::new(),
            shapes.iter().map(|s| random_tensor(r, s, scale)).collect(),
        )
    }
}

/// Layers and ops, `n` random instances each.
pub fn layer_suite(n: usize) -> Vec<(&'static str, GradSummary)> {
    let mut out = Vec::new();
    out.push((
        "elementwise",
        repeat_gradcheck(n, 100, inputs(&[&[3, 4], &[3, 4]], 2.0), |_, _, x| {
            let (a, b) = (x[0], x[1]);
            let y = a
                .mul(b)?
                .add(a.sigmoid()?)?
                .sub(b.tanh()?)?
                .add(a.leaky_relu(0.1)?)?
                .add(b.abs()?)?
                .add(a.square()?.scale(0.3)?)?
                .offset(1.0)?;
            probe_sum(y)
        }),
    ));
    out.push((
        "broadcast_and_reduce",
        repeat_gradcheck(n, 101, inputs(&[&[2, 3, 4], &[3], &[4]], 1.5), |_, _, x| {
            let y = x[0].add_along(x[1], 1)?.mul_along(x[2], 2)?;
            probe_sum(y)?.add(y.mean()?.scale(3.0)?)
        }),
    ));
    out.push((
        "matrix_and_shape",
        repeat_gradcheck(
            n,
            102,
            inputs(&[&[3, 4], &[4, 5], &[3, 2]], 1.0),
            |_, _, x| {
                let m = x[0].matmul(x[1])?;
                let parts = Var::concat(&[m.narrow(1, 1, 3)?, x[2]], 1)?;
                probe_sum(parts.t()?.reshape(&[15])?)
            },
        ),
    ));
    out.push((
        "softmax",
        repeat_gradcheck(n, 103, inputs(&[&[3, 5]], 3.0), |_, _, x| {
            probe_sum(x[0].softmax()?)
        }),
    ));
    out.push((
        "layer_norm_op",
        repeat_gradcheck(n, 104, inputs(&[&[3, 6]], 2.0), |_, _, x| {
            probe_sum(x[0].layer_norm()?)
        }),
    ));
    out.push((
        "conv1d_strided",
        repeat_gradcheck(
            n,
            105,
            inputs(&[&[2, 3, 11], &[4, 3, 3]], 1.0),
            |_, _, x| probe_sum(x[0].conv1d(x[1], ConvGeometry::new(2, 1, 2))?),
        ),
    ));
    out.push((
        "conv1d_dilated",
        repeat_gradcheck(
            n,
            106,
            inputs(&[&[1, 2, 12], &[2, 2, 5]], 1.0),
            |_, _, x| probe_sum(x[0].conv1d(x[1], ConvGeometry::same(5, 3))?),
        ),
    ));
    out.push((
        "conv_transpose1d_op",
        repeat_gradcheck(n, 107, inputs(&[&[2, 3, 4], &[3, 2, 6]], 1.0), |_, _, x| {
            probe_sum(x[0].conv_transpose1d(x[1], ConvGeometry::new(3, 1, 1))?)
        }),
    ));
    out.push(("linear", {
        let layout = Linear::new(&mut ParamStore::new(), "l", 5, 3, true, &mut rng(0)).unwrap();
        repeat_gradcheck(
            n,
            108,
            |r| {
                let mut s = ParamStore::new();
                let l = Linear::new(&mut s, "l", 5, 3, true, r).unwrap();
                s.value_mut(l.bias.unwrap())
                    .data_mut()
                    .iter_mut()
                    .for_each(|b| *b = r.gen_range(-1.0..1.0));
                (s, vec![random_tensor(r, &[4, 5], 1.0)])
            },
            |_, p, x| probe_sum(layout.forward(p, x[0])?),
        )
    }));
    out.push(("conv1d_layer", {
        let layout = Conv1d::same(&mut ParamStore::new(), "c", 3, 2, 3, 2, &mut rng(0)).unwrap();
        repeat_gradcheck(
            n,
            109,
            |r| {
                let mut s = ParamStore::new();
                Conv1d::same(&mut s, "c", 3, 2, 3, 2, r).unwrap();
                (s, vec![random_tensor(r, &[2, 3, 9], 1.0)])
            },
            |_, p, x| probe_sum(layout.forward(p, x[0])?),
        )
    }));
    out.push(("conv_transpose1d_layer", {
        let layout =
            ConvTranspose1d::upsampler(&mut ParamStore::new(), "u", 3, 2, 8, 4, &mut rng(0))
                .unwrap();
        repeat_gradcheck(
            n,
            110,
            |r| {
                let mut s = ParamStore::new();
                ConvTranspose1d::upsampler(&mut s, "u", 3, 2, 8, 4, r).unwrap();
                (s, vec![random_tensor(r, &[1, 3, 5], 1.0)])
            },
            |_, p, x| probe_sum(layout.forward(p, x[0])?),
        )
    }));
    out.push(("embedding", {
        let layout = Embedding::new(&mut ParamStore::new(), "e", 10, 4, &mut rng(0)).unwrap();
        repeat_gradcheck(
            n,
            111,
            |r| {
                let mut s = ParamStore::new();
                let e = Embedding::new(&mut s, "e", 10, 4, r).unwrap();
                s.value_mut(e.table)
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = r.gen_range(-1.0..1.0));
                (s, vec![])
            },
            |g, p, _| probe_sum(layout.forward(p, g, &[1, 3, 3, 9, 0])?),
        )
    }));
    out.push(("layer_norm", {
        let layout = LayerNorm::new(&mut ParamStore::new(), "n", 6).unwrap();
        repeat_gradcheck(
            n,
            112,
            |r| {
                let mut s = ParamStore::new();
                LayerNorm::new(&mut s, "n", 6).unwrap();
                let ids: Vec<_> = s.iter().map(|(id, _)| id).collect();
                for id in ids {
                    s.value_mut(id)
                        .data_mut()
                        .iter_mut()
                        .for_each(|v| *v = r.gen_range(-1.5..1.5));
                }
                (s, vec![random_tensor(r, &[3, 6], 2.0)])
            },
            |_, p, x| probe_sum(layout.forward(p, x[0])?),
        )
    }));
    out.push(("attention", {
        let layout =
            MultiHeadAttention::new(&mut ParamStore::new(), "a", 4, 2, &mut rng(0)).unwrap();
        repeat_gradcheck(
            n,
            113,
            |r| {
                let mut s = ParamStore::new();
                MultiHeadAttention::new(&mut s, "a", 4, 2, r).unwrap();
                (s, vec![random_tensor(r, &[5, 4], 1.5)])
            },
            |_, p, x| probe_sum(layout.forward(p, x[0])?),
        )
    }));
    out.push((
        "time_axis_ops",
        repeat_gradcheck(n, 114, inputs(&[&[1, 2, 7]], 1.0), |_, _, x| {
            let a = x[0].upsample_nearest(3)?.pad_time(2, 1)?.fold_period(3)?;
            let b = x[0].haar_dwt()?.haar_dwt()?;
            probe_sum(a)?.add(probe_sum(b)?)
        }),
    ));
    out.push((
        "stft_magnitude",
        repeat_gradcheck(n, 115, inputs(&[&[1, 1, 40]], 1.0), |_, _, x| {
            probe_sum(x[0].stft_magnitude(StftConfig::new(16, 4)?)?)
        }),
    ));
    out.push((
        "dropout",
        repeat_gradcheck(n, 116, inputs(&[&[4, 5]], 1.0), |_, _, x| {
            probe_sum(x[0].dropout(0.3, &mut rng(7))?)
        }),
    ));
    out
}

/// Checks on whole blocks; these have many parameter tensors, so fewer
/// coordinates are probed per tensor.
pub fn block_suite(n: usize) -> Vec<(&'static str, GradSummary)> {
    let sparse = GradCheck {
        max_coords: 6,
        ..GradCheck::default()
    };
    let cfg = tiny_vocoder_config();
    let mut out = Vec::new();
    out.push(("fft_block", {
        let layout = FftBlock::new(&mut ParamStore::new(), "b", 4, 2, 6, 3, &mut rng(0)).unwrap();
        repeat_gradcheck_with(
            sparse,
            n,
            120,
            |r| {
                let mut s = ParamStore::new();
                FftBlock::new(&mut s, "b", 4, 2, 6, 3, r).unwrap();
                (s, vec![random_tensor(r, &[5, 4], 1.5)])
            },
            |_, p, x| probe_sum(layout.forward(p, x[0], None)?),
        )
    }));
    let binning = PitchBinning::default();
    out.push(("sf_block", {
        let layout = SfBlock::new(&mut ParamStore::new(), &cfg, &binning, &mut rng(0)).unwrap();
        repeat_gradcheck_with(
            sparse,
            n,
            121,
            |r| {
                let mut s = ParamStore::new();
                SfBlock::new(&mut s, &cfg, &binning, r).unwrap();
                (s, vec![random_tensor(r, &[cfg.n_env_bins, 6], 1.0)])
            },
            |_, p, x| probe_sum(layout.forward_var(p, &[3, 3, 100, 511, 42, 3], x[0])?),
        )
    }));
    out.push(("generator", {
        let layout = Generator::new(&mut ParamStore::new(), &cfg, &mut rng(0)).unwrap();
        repeat_gradcheck_with(
            sparse,
            n,
            122,
            |r| {
                let mut s = ParamStore::new();
                Generator::new(&mut s, &cfg, r).unwrap();
                (s, vec![random_tensor(r, &[1, cfg.n_env_bins, 4], 1.0)])
            },
            |_, p, x| probe_sum(layout.forward(p, x[0])?),
        )
    }));
    out.push(("discriminators", {
        let layout = Discriminators::new(&cfg, &mut rng(0)).unwrap();
        repeat_gradcheck_with(
            sparse,
            n,
            123,
            |r| {
                (
                    Discriminators::new(&cfg, r).unwrap().store,
                    vec![random_tensor(r, &[1, 1, 64], 0.8)],
                )
            },
            |_, p, x| {
                let (banks, _) = layout.forward(p, x[0])?;
                let mut total = probe_sum(banks[0].score)?;
                for b in &banks {
                    for f in &b.features {
                        total = total.add(probe_sum(*f)?)?;
                    }
                }
                Ok(total)
            },
        )
    }));
    out
}

/// The training objectives: pitch MSE, generator, discriminator, feature
/// matching and STFT losses.
pub fn loss_suite(n: usize) -> Vec<(&'static str, GradSummary)> {
    let sparse = GradCheck {
        max_coords: 6,
        ..GradCheck::default()
    };
    let cfg = tiny_vocoder_config();
    let disc = Discriminators::new(&cfg, &mut rng(0)).unwrap();
    let frozen = Binder::frozen(&disc.store);
    let mut out = Vec::new();
    let voiced = [true, true, false, true, false, true, true, true];
    let real_wave = random_tensor(&mut rng(1), &[1, 1, 64], 0.8);
    out.push((
        "loss_pitch_mse",
        repeat_gradcheck(
            n,
            130,
            |r| {
                let mut x = random_tensor(r, &[8], 3.0);
                x.data_mut().iter_mut().for_each(|v| *v += 60.0);
                (ParamStore::new(), vec![x])
            },
            |_, _, x| {
                let target: Vec<f64> = (0..8).map(|i| 58.0 + i as f64 * 0.7).collect();
                mse_pitch_loss(x[0], &target, &voiced)
            },
        ),
    ));
    out.push((
        "loss_generator",
        repeat_gradcheck(n, 131, inputs(&[&[1, 1, 64]], 0.8), |g, _, x| {
            let real_w = g.constant(real_wave.clone())?;
            let (real, _) = disc.forward(&frozen, real_w)?;
            let (fake, _) = disc.forward(&frozen, x[0])?;
            Ok(generator_loss(&real, &fake, real_w, x[0], &cfg)?.total)
        }),
    ));
    out.push((
        "loss_discriminator",
        repeat_gradcheck_with(
            sparse,
            n,
            132,
            |r| {
                let d = Discriminators::new(&cfg, r).unwrap();
                (
                    d.store,
                    vec![
                        random_tensor(r, &[1, 1, 64], 0.8),
                        random_tensor(r, &[1, 1, 64], 0.8),
                    ],
                )
            },
            |_, p, x| {
                let (real, _) = disc.forward(p, x[0])?;
                let (fake, _) = disc.forward(p, x[1])?;
                discriminator_loss(&real, &fake)
            },
        ),
    ));
    out.push((
        "loss_feature_matching",
        repeat_gradcheck(
            n,
            133,
            inputs(&[&[1, 1, 64], &[1, 1, 64]], 0.8),
            |_, _, x| {
                let (real, _) = disc.forward(&frozen, x[0])?;
                let (fake, _) = disc.forward(&frozen, x[1])?;
                feature_matching_loss(&real, &fake)
            },
        ),
    ));
    out.push((
        "loss_stft",
        repeat_gradcheck(
            n,
            134,
            inputs(&[&[1, 1, 48], &[1, 1, 48]], 1.0),
            |_, _, x| stft_loss(x[0], x[1], cfg.loss_stft),
        ),
    ));
    out
}
