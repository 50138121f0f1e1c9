mod support;

use karatune_core::analysis::SpectralEnvelope;
use karatune_core::nn::Graph;
use karatune_core::predictor::{
    evaluate_predictor, mse_pitch_loss, note_id, train_predictor, PredictorConfig,
    PredictorExample, TrainPredictorConfig,
};
use karatune_core::toy::{render, MelodySpec};
use proptest::prelude::*;
use support::predictor_data::{augmentation_ab, detuned_set, overfit_clip, overfit_config};

#[test]
fn one_clip_is_memorised_within_500_steps() {
    let data = [overfit_clip()];
    assert_eq!(data[0].frames(), 200);
    let trained = train_predictor(&data, PredictorConfig::default(), &overfit_config()).unwrap();
    let mse = evaluate_predictor(&trained.model, &data, 0, 0).unwrap();
    assert!(mse < 0.01, "masked mse {mse}");
}

#[test]
fn transposed_notes_move_the_prediction() {
    let data = [overfit_clip()];
    let trained = train_predictor(&data, PredictorConfig::default(), &overfit_config()).unwrap();
    let cfg = &trained.model.config;
    let batch = data[0].batch(cfg, 0, 0).unwrap();
    let up: Vec<usize> = data[0]
        .notes
        .iter()
        .map(|n| note_id(n.map(|m| m + 2)))
        .collect();
    let base = trained.model.predict(&batch.notes, &batch.env).unwrap();
    let moved = trained.model.predict(&up, &batch.env).unwrap();
    let voiced: Vec<usize> = (0..base.len()).filter(|&t| batch.voiced_mask[t]).collect();
    let change = voiced.iter().map(|&t| moved[t] - base[t]).sum::<f64>() / voiced.len() as f64;
    assert!(change > 0.5 && change < 3.5, "mean change {change}");
}

#[test]
fn five_clips_halve_the_loss_in_300_steps() {
    let data = detuned_set(7, 5);
    let trained = train_predictor(
        &data,
        PredictorConfig::default(),
        &TrainPredictorConfig::default(),
    )
    .unwrap();
    let loss = trained.history.column("loss").unwrap();
    let smooth = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (first, last) = (smooth(&loss[..20]), smooth(&loss[loss.len() - 20..]));
    assert!(last < 0.5 * first, "first {first} last {last}");
}

#[test]
fn training_is_deterministic_under_a_fixed_seed() {
    let data = detuned_set(8, 2);
    let cfg = TrainPredictorConfig {
        steps: 20,
        ..TrainPredictorConfig::default()
    };
    let a = train_predictor(&data, PredictorConfig::default(), &cfg).unwrap();
    let b = train_predictor(&data, PredictorConfig::default(), &cfg).unwrap();
    assert_eq!(a.history.column("loss"), b.history.column("loss"));
    let batch = data[0].batch(&a.model.config, 0, 0).unwrap();
    assert_eq!(
        a.model.predict_batch(&batch).unwrap(),
        b.model.predict_batch(&batch).unwrap()
    );
}

#[test]
fn empty_training_set_is_an_error() {
    assert!(train_predictor(
        &[],
        PredictorConfig::default(),
        &TrainPredictorConfig::default()
    )
    .is_err());
}

#[test]
fn silent_all_rest_input_gives_finite_output() {
    let model =
        karatune_core::predictor::PitchPredictor::new(PredictorConfig::default(), 0).unwrap();
    let notes = vec![model.config.rest_id(); 30];
    let env = vec![vec![0.0; model.config.env_in_bins]; 30];
    assert!(model
        .predict(&notes, &env)
        .unwrap()
        .iter()
        .all(|v| v.is_finite()));
}

#[test]
fn augmentation_helps_on_shifted_envelopes() {
    let (train_off, train_on, valid_off, valid_on) = augmentation_ab(0);
    assert!(
        valid_on < valid_off,
        "valid on {valid_on} off {valid_off} (train on {train_on} off {train_off})"
    );
}

fn env_of(frames: usize, bins: usize) -> SpectralEnvelope {
    SpectralEnvelope {
        env: vec![vec![1e-3; bins]; frames],
        sample_rate: 32_000,
        hop: 512,
    }
}

#[test]
fn example_rejects_mismatched_lengths() {
    let clip = render(&MelodySpec::default(), 0).unwrap();
    assert!(PredictorExample::new(&clip.notes, env_of(3, 1025), clip.pitch).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn unvoiced_predictions_never_change_the_loss(
        frames in prop::collection::vec((-5.0..5.0f64, any::<bool>(), -50.0..50.0f64), 1..40),
    ) {
        prop_assume!(frames.iter().any(|f| f.1));
        let target: Vec<f64> = frames.iter().map(|f| 60.0 + f.0).collect();
        let voiced: Vec<bool> = frames.iter().map(|f| f.1).collect();
        let loss = |pred: Vec<f64>| {
            let g = Graph::new();
            let n = pred.len();
            let p = g.constant(karatune_core::nn::Tensor::new(&[n], pred).unwrap()).unwrap();
            mse_pitch_loss(p, &target, &voiced).unwrap().item()
        };
        let pred: Vec<f64> = target.iter().map(|t| t + 0.3).collect();
        let edited: Vec<f64> = pred
            .iter()
            .zip(&frames)
            .map(|(&p, f)| if f.1 { p } else { p + f.2 })
            .collect();
        prop_assert_eq!(loss(pred), loss(edited));
    }
}
