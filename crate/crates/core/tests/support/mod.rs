#![allow(dead_code)]

use karatune_core::nn::gradcheck::{check_gradients, GradCheck};
use karatune_core::nn::{Binder, Graph, ParamStore, Tensor, Var};
use karatune_core::signal::StftConfig;
use karatune_core::vocoder::VocoderConfig;
use karatune_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod hmm;
pub mod predictor_data;
pub mod sf_examples;
pub mod suite;
pub mod vocoder_probe;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Small widths, short hop, cheap loss STFT: for gradient checks and
/// structural tests that do not depend on the full geometry.
pub fn tiny_vocoder_config() -> VocoderConfig {
    VocoderConfig {
        n_env_bins: 4,
        upsample_rates: vec![2, 2],
        upsample_kernels: vec![4, 4],
        resblock_kernels: vec![3, 5],
        resblock_dilations: vec![[1, 1], [3, 1]],
        base_channels: 4,
        min_channels: 2,
        top_k: 2,
        input_kernel: 3,
        output_kernel: 3,
        periods: vec![2, 3],
        scale_levels: 2,
        disc_channels: 2,
        loss_stft: StftConfig::new(16, 4).unwrap(),
        ..VocoderConfig::default()
    }
}

/// Full upsampling geometry with narrow layers.
pub fn narrow_vocoder_config() -> VocoderConfig {
    VocoderConfig {
        n_env_bins: 16,
        base_channels: 8,
        min_channels: 1,
        resblock_kernels: vec![3],
        resblock_dilations: vec![[1, 1]],
        ..VocoderConfig::default()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradSummary {
    pub worst: f64,
    pub instances: usize,
    pub redraws: usize,
    pub checked: usize,
    pub skipped: usize,
}

/// Runs the finite-difference check on `instances` random base points.
/// Coordinates whose probes cross a kink are skipped, and a base point with
/// nothing left to check is redrawn.
pub fn repeat_gradcheck<F>(
    instances: usize,
    seed: u64,
    setup: impl FnMut(&mut ChaCha8Rng) -> (ParamStore, Vec<Tensor>),
    f: F,
) -> GradSummary
where
    F: for<'g> Fn(&'g Graph, &Binder, &[Var<'g>]) -> Result<Var<'g>>,
{
    repeat_gradcheck_with(GradCheck::default(), instances, seed, setup, f)
}

pub fn repeat_gradcheck_with<F>(
    opts: GradCheck,
    instances: usize,
    seed: u64,
    mut setup: impl FnMut(&mut ChaCha8Rng) -> (ParamStore, Vec<Tensor>),
    f: F,
) -> GradSummary
where
    F: for<'g> Fn(&'g Graph, &Binder, &[Var<'g>]) -> Result<Var<'g>>,
{
    let mut rng = rng(seed);
    let (mut worst, mut done, mut attempts) = (0.0f64, 0, 0);
    let (mut checked, mut skipped) = (0, 0);
    while done < instances {
        attempts += 1;
        assert!(
            attempts <= 20 * instances,
            "base points keep landing on kinks"
        );
        let (mut store, inputs) = setup(&mut rng);
        let report = check_gradients(&mut store, &inputs, &f, &opts, &mut rng).unwrap();
        skipped += report.coords_skipped;
        if report.near_kink {
            continue;
        }
        assert!(report.coords_checked > 0);
        worst = worst.max(report.max_rel_error);
        checked += report.coords_checked;
        done += 1;
    }
    GradSummary {
        worst,
        instances: done,
        redraws: attempts - done,
        checked,
        skipped,
    }
}

/// Weighted sum with fixed pseudo-random weights, so every output element
/// contributes a distinct gradient.
pub fn probe_sum<'g>(y: Var<'g>) -> Result<Var<'g>> {
    let n = y.numel();
    let w: Vec<f64> = (0..n)
        .map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4)
        .collect();
    let w = y.graph().constant(Tensor::new(y.shape().as_slice(), w)?)?;
    y.mul(w)?.sum()
}
