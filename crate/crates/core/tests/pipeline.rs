use std::f64::consts::PI;

use karatune_core::analysis::AnalysisArtifact;
use karatune_core::notes::{Note, NoteSequence};
use karatune_core::pipeline::{
    analyze, metrics, train_predictor_on, tune, Backend, Models, PipelineConfig, TrainingClip,
    TuneMode,
};
use karatune_core::predictor::TrainPredictorConfig;
use karatune_core::signal::Waveform;
use karatune_core::toy::{render, MelodySpec};

fn sine(hz: f64, seconds: f64) -> Waveform {
    let n = (seconds * 32_000.0) as usize;
    Waveform::new(
        (0..n)
            .map(|i| 0.5 * (2.0 * PI * hz * i as f64 / 32_000.0).sin())
            .collect(),
        32_000,
    )
}

#[test]
fn a_440_hz_sine_decodes_to_one_a4() {
    let a = analyze(&sine(440.0, 1.0), &PipelineConfig::default()).unwrap();
    assert_eq!(a.notes.len(), 1);
    assert_eq!(a.notes.notes[0].midi, 69);
}

#[test]
fn silence_has_no_notes_and_no_voicing() {
    let a = analyze(
        &Waveform::new(vec![0.0; 32_000], 32_000),
        &PipelineConfig::default(),
    )
    .unwrap();
    assert!(a.notes.is_empty());
    assert_eq!(a.pitch().voiced_fraction(), 0.0);
    assert!(a.summary().contains("voiced=0.0%"));
}

#[test]
fn analysis_artifact_round_trips_through_disk() {
    let spec = MelodySpec {
        notes: vec![(Some(60), 40), (Some(64), 40)],
        ..MelodySpec::default()
    };
    let clip = render(&spec, 1).unwrap();
    let a = analyze(&clip.waveform, &PipelineConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = a.save(dir.path(), "two").unwrap();
    assert_eq!(AnalysisArtifact::load(&paths[0]).unwrap(), a.artifact);
}

#[test]
fn in_tune_input_is_left_nearly_alone() {
    let clip = render(&MelodySpec::default(), 2).unwrap();
    let cfg = PipelineConfig::default();
    let out = tune(
        &clip.waveform,
        Some(&clip.notes),
        TuneMode::Rule,
        Backend::World,
        &cfg,
        &Models::default(),
    )
    .unwrap();
    for s in &out.tune_report.shifts {
        assert!(s.shift_applied.abs() * 100.0 < 5.0, "{s:?}");
    }
    assert!(out.metrics.cent_rmse < 15.0, "{}", out.metrics.cent_rmse);
}

#[test]
fn flat_singing_is_pulled_onto_the_notes_deterministically() {
    let spec = MelodySpec {
        detune_cents: -40.0,
        vibrato_cents: 15.0,
        ..MelodySpec::default()
    };
    let clip = render(&spec, 3).unwrap();
    let cfg = PipelineConfig::default();
    let run = || {
        tune(
            &clip.waveform,
            Some(&clip.notes),
            TuneMode::Rule,
            Backend::World,
            &cfg,
            &Models::default(),
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    let input = a.metrics.input_cent_rmse.unwrap();
    assert!(input > 30.0, "input {input}");
    assert!(a.metrics.cent_rmse < 15.0, "output {}", a.metrics.cent_rmse);
    assert_eq!(a.output.samples, b.output.samples);
    assert_eq!(a.metrics.to_text(), b.metrics.to_text());
    assert_eq!(a.plot_svg, b.plot_svg);
}

#[test]
fn neural_mode_with_an_overfit_predictor_lands_on_the_notes() {
    let spec = MelodySpec {
        detune_cents: 30.0,
        vibrato_cents: 20.0,
        ..MelodySpec::default()
    };
    let clip = render(&spec, 4).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.predictor.training = TrainPredictorConfig {
        steps: 500,
        augment: false,
        ..TrainPredictorConfig::default()
    };
    let training = [TrainingClip {
        waveform: clip.waveform.clone(),
        notes: Some(clip.notes.clone()),
    }];
    let (predictor, _) = train_predictor_on(&training, &cfg).unwrap();
    let models = Models {
        predictor: Some(predictor),
        vocoder: None,
    };
    let out = tune(
        &clip.waveform,
        Some(&clip.notes),
        TuneMode::Neural,
        Backend::World,
        &cfg,
        &models,
    )
    .unwrap();
    assert!(out.predicted.is_some());
    assert!(
        out.metrics.cent_rmse < 20.0,
        "output {}",
        out.metrics.cent_rmse
    );
}

#[test]
fn neural_mode_without_a_predictor_is_a_config_error() {
    let clip = render(&MelodySpec::default(), 5).unwrap();
    let err = tune(
        &clip.waveform,
        Some(&clip.notes),
        TuneMode::Neural,
        Backend::World,
        &PipelineConfig::default(),
        &Models::default(),
    )
    .unwrap_err();
    assert!(err.is_config());
    assert!(err.to_string().contains("pitch prediction"), "{err}");
}

#[test]
fn wrong_sample_rate_is_a_config_error() {
    let w = Waveform::new(vec![0.0; 16_000], 16_000);
    assert!(analyze(&w, &PipelineConfig::default())
        .unwrap_err()
        .is_config());
}

#[test]
fn metrics_score_clean_synthesis_and_octave_errors() {
    let clip = render(&MelodySpec::default(), 6).unwrap();
    let cfg = PipelineConfig::default();
    let clean = metrics(&clip.waveform, &clip.notes, &cfg).unwrap();
    assert!(clean.cent_rmse < 10.0, "{}", clean.cent_rmse);
    let up = NoteSequence::new(
        clip.notes
            .notes
            .iter()
            .map(|n| Note::new(n.midi + 12, n.onset, n.offset))
            .collect(),
    )
    .unwrap();
    let octave = metrics(&clip.waveform, &up, &cfg).unwrap();
    assert!(
        (octave.cent_rmse - 1200.0).abs() < 15.0,
        "{}",
        octave.cent_rmse
    );
}

#[test]
fn metrics_without_notes_is_an_error() {
    let clip = render(&MelodySpec::default(), 7).unwrap();
    let empty = NoteSequence::new(Vec::new()).unwrap();
    assert!(metrics(&clip.waveform, &empty, &PipelineConfig::default()).is_err());
}
