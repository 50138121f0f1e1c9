use karatune_core::predictor::{
    evaluate_predictor, train_predictor, PredictorConfig, PredictorExample, TrainPredictorConfig,
};
use karatune_core::toy::{random_melody, render, MelodySpec};
use rand::Rng;

use super::rng;

pub fn example(spec: &MelodySpec, seed: u64) -> PredictorExample {
    let clip = render(spec, seed).unwrap();
    PredictorExample::new(&clip.notes, clip.envelope, clip.pitch).unwrap()
}

/// 200 frames: four notes with vibrato, a glide and one rest.
pub fn overfit_clip() -> PredictorExample {
    let spec = MelodySpec {
        notes: vec![
            (Some(57), 50),
            (Some(60), 45),
            (None, 15),
            (Some(64), 50),
            (Some(62), 40),
        ],
        detune_cents: 20.0,
        vibrato_cents: 25.0,
        glide_frames: 4,
        ..MelodySpec::default()
    };
    example(&spec, 3)
}

pub fn overfit_config() -> TrainPredictorConfig {
    TrainPredictorConfig {
        steps: 500,
        augment: false,
        ..TrainPredictorConfig::default()
    }
}

/// Toy set where formants follow f0 and every clip is detuned, so the
/// unshifted envelope leaks the sung pitch.
pub fn detuned_set(seed: u64, n: usize) -> Vec<PredictorExample> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let mut spec = random_melody(&mut r, 4, 50, 70);
            spec.detune_cents = r.gen_range(-60.0..60.0);
            spec.formants_follow_pitch = true;
            example(&spec, seed * 100 + i as u64)
        })
        .collect()
}

/// Mean validation loss on envelope-shifted clips, with and without
/// augmentation, for one seed.
pub fn augmentation_ab(seed: u64) -> (f64, f64, f64, f64) {
    let train = detuned_set(100 + seed, 5);
    let valid = detuned_set(200 + seed, 3);
    let base = TrainPredictorConfig {
        seed,
        ..TrainPredictorConfig::default()
    };
    let max = base.max_shift_bins;
    let run = |augment: bool| {
        let cfg = TrainPredictorConfig {
            augment,
            ..base.clone()
        };
        let model = train_predictor(&train, PredictorConfig::default(), &cfg)
            .unwrap()
            .model;
        let shifted: f64 = [-16, -8, 8, 16]
            .iter()
            .map(|&s| evaluate_predictor(&model, &valid, s, max).unwrap())
            .sum::<f64>()
            / 4.0;
        (evaluate_predictor(&model, &train, 0, max).unwrap(), shifted)
    };
    let (train_off, valid_off) = run(false);
    let (train_on, valid_on) = run(true);
    (train_off, train_on, valid_off, valid_on)
}
