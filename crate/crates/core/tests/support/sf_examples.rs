//! The structural examples of the source-filter block. Each panics on
//! failure so tests and the acceptance run share them.

use karatune_core::nn::{Binder, Graph, ParamStore, Tensor};
use karatune_core::vocoder::{PitchBinning, SfBlock, VocoderConfig};
use rand::Rng;

use super::{rng, tiny_vocoder_config};

pub fn sf_block(cfg: &VocoderConfig, seed: u64) -> (ParamStore, SfBlock) {
    let mut store = ParamStore::new();
    let sf = SfBlock::new(&mut store, cfg, &PitchBinning::default(), &mut rng(seed)).unwrap();
    (store, sf)
}

pub fn random_env(r: &mut impl Rng, frames: usize, bins: usize) -> Vec<Vec<f64>> {
    (0..frames)
        .map(|_| (0..bins).map(|_| r.gen_range(0.0..1.0)).collect())
        .collect()
}

pub fn sf_forward(store: &ParamStore, sf: &SfBlock, bins: &[usize], env: &[Vec<f64>]) -> Vec<f64> {
    let g = Graph::new();
    sf.forward(&Binder::frozen(store), &g, bins, env)
        .unwrap()
        .to_vec()
}

pub fn annihilation() {
    let cfg = tiny_vocoder_config();
    let (store, sf) = sf_block(&cfg, 1);
    let t = 9;
    let env = vec![vec![0.0; cfg.n_env_bins]; t];
    let a = sf_forward(&store, &sf, &[100; 9], &env);
    let b = sf_forward(&store, &sf, &[3, 500, 511, 7, 7, 7, 0, 1, 2], &env);
    assert_eq!(a, b);
    let g = Graph::new();
    let zeros = g.constant(Tensor::zeros(&[cfg.n_env_bins, 1, t])).unwrap();
    let f2 = sf
        .aperiodic
        .forward(&Binder::frozen(&store), zeros)
        .unwrap()
        .to_vec();
    for (x, y) in a.iter().zip(&f2) {
        assert!((x - y).abs() < 1e-15);
    }
}

pub fn identity_configuration() {
    let cfg = tiny_vocoder_config();
    let (mut store, sf) = sf_block(&cfg, 2);
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let v = store.value_mut(id).data_mut();
        if name.starts_with("sf.f1") || name.starts_with("sf.f2") {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        if name == "sf.f1.proj.bias" {
            v[0] = 50.0;
        }
        if name == "sf.pitch_embedding.table" {
            v.iter_mut().for_each(|x| *x = 1.0);
        }
    }
    let t = 6;
    let env = random_env(&mut rng(3), t, cfg.n_env_bins);
    let r = sf_forward(&store, &sf, &[10, 20, 30, 511, 0, 5], &env);
    for k in 0..cfg.n_env_bins {
        for ti in 0..t {
            assert!((r[k * t + ti] - env[ti][k]).abs() < 1e-12);
        }
    }
}

pub fn pitch_locality() {
    let cfg = tiny_vocoder_config();
    let (store, sf) = sf_block(&cfg, 4);
    let t = 20;
    let env = random_env(&mut rng(5), t, cfg.n_env_bins);
    let mut bins: Vec<usize> = (0..t).map(|i| 200 + i).collect();
    let before = sf_forward(&store, &sf, &bins, &env);
    bins[11] = 40;
    let after = sf_forward(&store, &sf, &bins, &env);
    for k in 0..cfg.n_env_bins {
        for ti in 0..t {
            let d = (before[k * t + ti] - after[k * t + ti]).abs();
            if ti == 11 {
                assert!(d > 0.0);
            } else {
                assert_eq!(d, 0.0, "bin {k} frame {ti}");
            }
        }
    }
}

pub fn envelope_locality() {
    let cfg = tiny_vocoder_config();
    let (store, sf) = sf_block(&cfg, 6);
    let reach = sf.gate.reach();
    assert_eq!(reach, 6);
    let t = 30;
    let mut env = random_env(&mut rng(7), t, cfg.n_env_bins);
    let bins = vec![250; t];
    let before = sf_forward(&store, &sf, &bins, &env);
    env[15][2] += 0.5;
    let after = sf_forward(&store, &sf, &bins, &env);
    for k in 0..cfg.n_env_bins {
        for ti in 0..t {
            let d = (before[k * t + ti] - after[k * t + ti]).abs();
            if k != 2 || ti.abs_diff(15) > reach {
                assert_eq!(d, 0.0, "bin {k} frame {ti}");
            }
        }
    }
    assert!((before[2 * t + 15] - after[2 * t + 15]).abs() > 0.0);
}
