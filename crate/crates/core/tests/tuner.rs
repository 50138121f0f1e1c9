use karatune_core::analysis::PitchCurve;
use karatune_core::notes::{Note, NoteSequence};
use karatune_core::tuner::{crossfade_boundaries, note_shift_tune, TunerConfig};
use proptest::prelude::*;

/// Contiguous notes with gaps, a detuned curve with vibrato and some
/// unvoiced frames, all drawn from one strategy.
fn melody() -> impl Strategy<Value = (PitchCurve, NoteSequence)> {
    (
        prop::collection::vec((40u8..80, 3usize..30, 0usize..6, -6.0..6.0f64), 1..8),
        0.0..0.6f64,
        prop::collection::vec(any::<u8>(), 300),
    )
        .prop_map(|(spec, vib, noise)| {
            let mut notes = Vec::new();
            let mut f0 = Vec::new();
            let mut voiced = Vec::new();
            for (midi, len, gap, offset) in spec {
                f0.extend(std::iter::repeat_n(50.0, gap));
                voiced.extend(std::iter::repeat_n(false, gap));
                let onset = f0.len();
                for i in 0..len {
                    let t = (onset + i) as f64;
                    f0.push(midi as f64 + offset + vib * (t * 0.7).sin());
                    voiced.push(noise[(onset + i) % noise.len()] > 30);
                }
                notes.push(Note::new(midi, onset, onset + len));
            }
            let mut p = PitchCurve::from_midi(f0, 512, 32_000);
            p.voiced = voiced;
            (p, NoteSequence::new(notes).unwrap())
        })
}

fn voiced_stats(p: &PitchCurve, n: &Note) -> Option<(f64, f64)> {
    let v: Vec<f64> = n
        .frames()
        .filter(|&t| p.voiced[t])
        .map(|t| p.f0_midi[t])
        .collect();
    if v.is_empty() {
        return None;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    Some((mean, var.sqrt()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn voiced_mean_lands_on_the_note((p, notes) in melody()) {
        let (tuned, report) = note_shift_tune(&p, &notes, &TunerConfig::default()).unwrap();
        for s in &report.shifts {
            let (mean, _) = voiced_stats(&tuned, &s.note).unwrap();
            prop_assert!((mean - s.note.midi as f64).abs() < 1e-9, "{} vs {}", mean, s.note.midi);
        }
    }

    #[test]
    fn each_note_moves_by_one_constant((p, notes) in melody()) {
        let (tuned, _) = note_shift_tune(&p, &notes, &TunerConfig::default()).unwrap();
        for n in &notes.notes {
            let d: Vec<f64> = n.frames().map(|t| tuned.f0_midi[t] - p.f0_midi[t]).collect();
            prop_assert!(d.iter().all(|x| (x - d[0]).abs() < 1e-9));
            if let (Some((_, before)), Some((_, after))) = (voiced_stats(&p, n), voiced_stats(&tuned, n)) {
                prop_assert!((before - after).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tuning_twice_equals_tuning_once((p, notes) in melody()) {
        let cfg = TunerConfig::default();
        let (once, _) = note_shift_tune(&p, &notes, &cfg).unwrap();
        let (twice, report) = note_shift_tune(&once, &notes, &cfg).unwrap();
        for s in &report.shifts {
            prop_assert!(s.shift_applied.abs() < 1e-9);
        }
        for (a, b) in once.f0_midi.iter().zip(&twice.f0_midi) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn frames_outside_notes_are_untouched((p, notes) in melody()) {
        let (tuned, _) = note_shift_tune(&p, &notes, &TunerConfig::default()).unwrap();
        let faded = crossfade_boundaries(&p, &tuned, &notes, 5).unwrap();
        for t in 0..p.len() {
            if !notes.notes.iter().any(|n| n.frames().any(|u| u == t)) {
                prop_assert_eq!(tuned.f0_midi[t], p.f0_midi[t]);
                prop_assert_eq!(faded.f0_midi[t], p.f0_midi[t]);
            }
        }
        prop_assert_eq!(&faded.voiced, &p.voiced);
    }

    #[test]
    fn crossfade_stays_between_the_neighbouring_shifts((p, notes) in melody(), width in 0usize..8) {
        let (tuned, _) = note_shift_tune(&p, &notes, &TunerConfig::default()).unwrap();
        let faded = crossfade_boundaries(&p, &tuned, &notes, width).unwrap();
        let shift = |c: &PitchCurve, t: usize| c.f0_midi[t] - p.f0_midi[t];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in 0..p.len() {
            lo = lo.min(shift(&tuned, t));
            hi = hi.max(shift(&tuned, t));
        }
        for t in 0..p.len() {
            let s = shift(&faded, t);
            prop_assert!(s >= lo - 1e-9 && s <= hi + 1e-9);
        }
    }
}

#[test]
fn large_errors_fold_to_the_nearest_octave() {
    let p = PitchCurve::from_midi(vec![72.3; 10], 512, 32_000);
    let notes = NoteSequence::new(vec![Note::new(60, 0, 10)]).unwrap();
    let (tuned, report) = note_shift_tune(&p, &notes, &TunerConfig::default()).unwrap();
    assert!(report.shifts[0].octave_folded);
    assert!((tuned.f0_midi[0] - 72.0).abs() < 1e-9);
    assert!(report.to_text().contains("octave_folded=true"));
}
