//! End-to-end flow: analysis, note decoding, retuning, resynthesis and
//! self-measured scoring, plus the training entry points.

mod config;
mod plot;
mod report;

pub use config::{Backend, PipelineConfig, PredictorSection, TuneMode, VocoderSection};
pub use plot::pitch_plot_svg;
pub use report::MetricsReport;

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::analysis::{extract_pitch, spectral_envelope, AnalysisArtifact, PitchCurve};
use crate::baseline::{
    default_aperiodicity, phase_vocoder_shift, world_like_synthesize, ShiftPlan,
};
use crate::error::{Error, Result};
use crate::history::LossHistory;
use crate::nn::Checkpoint;
use crate::notes::{decode_notes, write_notes_txt, Note, NoteSequence};
use crate::predictor::{train_predictor, PitchPredictor, PredictorBatch, PredictorExample};
use crate::signal::{save_wav, Waveform};
use crate::tuner::{crossfade_boundaries, note_shift_tune, TuneReport};
use crate::vocoder::{train_vocoder, SfVocoder, VocoderExample};

/// Analysis of one clip: curves, envelope and the decoded notes.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub artifact: AnalysisArtifact,
    pub notes: NoteSequence,
}

impl Analysis {
    pub fn pitch(&self) -> &PitchCurve {
        &self.artifact.pitch
    }

    pub fn summary(&self) -> String {
        format!(
            "frames={} voiced={:.1}% notes={}",
            self.pitch().len(),
            100.0 * self.pitch().voiced_fraction(),
            self.notes.len()
        )
    }

    /// Writes `<stem>.analysis.bin` and `<stem>.notes.txt`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bin = dir.join(format!("{stem}.analysis.bin"));
        let txt = dir.join(format!("{stem}.notes.txt"));
        self.artifact.save(&bin)?;
        std::fs::write(&txt, write_notes_txt(&self.notes)).map_err(|e| Error::io(&txt, e))?;
        Ok(vec![bin, txt])
    }
}

fn check_rate(w: &Waveform, cfg: &PipelineConfig) -> Result<()> {
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "audio at {} Hz but the pipeline runs at {} Hz",
            w.sample_rate, cfg.sample_rate
        )));
    }
    Ok(())
}

pub fn analyze(w: &Waveform, cfg: &PipelineConfig) -> Result<Analysis> {
    check_rate(w, cfg)?;
    let pitch = extract_pitch(w, &cfg.analysis).map_err(|e| e.at("pitch analysis"))?;
    let envelope =
        spectral_envelope(w, &pitch, &cfg.analysis).map_err(|e| e.at("envelope analysis"))?;
    let notes = decode_notes(&pitch, &cfg.notes).map_err(|e| e.at("note decoding"))?;
    let artifact =
        AnalysisArtifact::new(&cfg.analysis, pitch, envelope).map_err(|e| e.at("analysis"))?;
    Ok(Analysis { artifact, notes })
}

/// Models a run needs, loaded from the configured checkpoints.
#[derive(Debug, Default)]
pub struct Models {
    pub predictor: Option<PitchPredictor>,
    pub vocoder: Option<SfVocoder>,
}

impl Models {
    pub fn load(cfg: &PipelineConfig, mode: TuneMode, backend: Backend) -> Result<Self> {
        let mut models = Models::default();
        if mode == TuneMode::Neural {
            let path = cfg.predictor.checkpoint.as_ref().ok_or_else(|| {
                Error::Config(
                    "neural mode needs predictor.checkpoint; train one with `karatune train-predictor`".into(),
                )
            })?;
            let ck = Checkpoint::load(path).map_err(|e| e.at("loading predictor checkpoint"))?;
            models.predictor =
                Some(PitchPredictor::from_checkpoint(&ck).map_err(|e| e.at("loading predictor"))?);
        }
        if backend == Backend::Sf {
            let path = cfg.vocoder.checkpoint.as_ref().ok_or_else(|| {
                Error::Config(
                    "the sf backend needs vocoder.checkpoint; train one with `karatune train-vocoder`".into(),
                )
            })?;
            let ck = Checkpoint::load(path).map_err(|e| e.at("loading vocoder checkpoint"))?;
            let voc = SfVocoder::from_checkpoint(&ck).map_err(|e| e.at("loading vocoder"))?;
            if voc.config.sample_rate != cfg.sample_rate
                || voc.config.hop() != cfg.analysis.stft.hop
            {
                return Err(Error::Config(format!(
                    "vocoder checkpoint runs at {} Hz with hop {}, the pipeline at {} Hz with hop {}",
                    voc.config.sample_rate,
                    voc.config.hop(),
                    cfg.sample_rate,
                    cfg.analysis.stft.hop
                )));
            }
            models.vocoder = Some(voc);
        }
        Ok(models)
    }
}

/// Keeps the notes that start inside the clip, trimming the last one.
fn clip_notes(seq: &NoteSequence, frames: usize) -> Result<NoteSequence> {
    let kept: Vec<Note> = seq
        .notes
        .iter()
        .filter(|n| n.onset < frames)
        .map(|n| Note::new(n.midi, n.onset, n.offset.min(frames)))
        .collect();
    if kept.len() < seq.len() || seq.end_frame() > frames {
        log::warn!(
            "reference extends past the clip ({} frames); trimmed",
            frames
        );
    }
    NoteSequence::new(kept)
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub mode: TuneMode,
    pub backend: Backend,
    pub output: Waveform,
    pub analysis: Analysis,
    pub reference: NoteSequence,
    pub predicted: Option<PitchCurve>,
    pub tuned: PitchCurve,
    pub tune_report: TuneReport,
    pub metrics: MetricsReport,
    pub plot_svg: String,
}

impl TuneOutcome {
    /// Writes `<stem>.<mode>.<backend>.wav` with sibling `.report.txt`,
    /// `.plot.svg` and `.timings.txt`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let base = format!("{stem}.{}.{}", self.mode, self.backend);
        let wav = dir.join(format!("{base}.wav"));
        let report = dir.join(format!("{base}.report.txt"));
        let plot = dir.join(format!("{base}.plot.svg"));
        let timings = dir.join(format!("{base}.timings.txt"));
        save_wav(&self.output, &wav)?;
        let text = format!("{}{}", self.metrics.to_text(), self.tune_report.to_text());
        std::fs::write(&report, text).map_err(|e| Error::io(&report, e))?;
        std::fs::write(&plot, &self.plot_svg).map_err(|e| Error::io(&plot, e))?;
        std::fs::write(&timings, self.metrics.timings_text())
            .map_err(|e| Error::io(&timings, e))?;
        Ok(vec![wav, report, plot, timings])
    }
}

/// Retunes `w` onto `reference` (or onto its own decoded notes) and
/// resynthesises it with `backend`.
pub fn tune(
    w: &Waveform,
    reference: Option<&NoteSequence>,
    mode: TuneMode,
    backend: Backend,
    cfg: &PipelineConfig,
    models: &Models,
) -> Result<TuneOutcome> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        timings.push((name.to_string(), clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    let analysis = analyze(w, cfg)?;
    lap("analysis", &mut timings);
    let original = analysis.pitch().clone();
    let reference = match reference {
        Some(r) => clip_notes(r, original.len()).map_err(|e| e.at("reference notes"))?,
        None => analysis.notes.clone(),
    };
    if reference.is_empty() {
        return Err(
            Error::InvalidInput("no reference notes: nothing to tune to".into())
                .at("reference notes"),
        );
    }

    let (source, predicted) = match mode {
        TuneMode::Rule => (original.clone(), None),
        TuneMode::Neural => {
            let model = models.predictor.as_ref().ok_or_else(|| {
                Error::Config("neural mode needs a loaded predictor".into()).at("pitch prediction")
            })?;
            let batch = PredictorBatch::new(
                &model.config,
                &reference.frame_notes(original.len()),
                &analysis.artifact.envelope,
                original.f0_midi.clone(),
                original.voiced.clone(),
            )
            .and_then(|b| model.predict_batch(&b))
            .map_err(|e| e.at("pitch prediction"))?;
            let mut curve = original.clone();
            curve.f0_midi = batch;
            (curve.clone(), Some(curve))
        }
    };
    let (shifted, tune_report) =
        note_shift_tune(&source, &reference, &cfg.tuner).map_err(|e| e.at("note shifting"))?;
    let tuned = crossfade_boundaries(&source, &shifted, &reference, cfg.tuner.crossfade_frames)
        .map_err(|e| e.at("note shifting"))?;
    lap("tuning", &mut timings);

    let output =
        synthesize(w, &analysis, &tuned, backend, cfg, models).map_err(|e| e.at("synthesis"))?;
    lap("synthesis", &mut timings);

    let measured = extract_pitch(&output, &cfg.analysis).map_err(|e| e.at("scoring"))?;
    let mut metrics = MetricsReport::score(&measured, &reference, Some(&original))
        .map_err(|e| e.at("scoring"))?;
    metrics.shifts = tune_report.shifts.clone();
    let plot_svg = pitch_plot_svg(&reference, &original, &tuned);
    lap("scoring", &mut timings);
    metrics.timings = timings;
    for (stage, secs) in &metrics.timings {
        log::debug!("{stage}: {secs:.3}s");
    }
    Ok(TuneOutcome {
        mode,
        backend,
        output,
        analysis,
        reference,
        predicted,
        tuned,
        tune_report,
        metrics,
        plot_svg,
    })
}

fn synthesize(
    w: &Waveform,
    analysis: &Analysis,
    tuned: &PitchCurve,
    backend: Backend,
    cfg: &PipelineConfig,
    models: &Models,
) -> Result<Waveform> {
    let original = analysis.pitch();
    let mut out = match backend {
        Backend::World => world_like_synthesize(
            tuned,
            &analysis.artifact.envelope,
            &default_aperiodicity(original),
            cfg.seed,
        )?,
        Backend::Phase => phase_vocoder_shift(w, &ShiftPlan::from_curves(original, tuned)?)?,
        Backend::Sf => {
            let model = models
                .vocoder
                .as_ref()
                .ok_or_else(|| Error::Config("the sf backend needs a loaded vocoder".into()))?;
            model.synthesize(
                &tuned.f0_midi,
                &original.voiced,
                &analysis.artifact.envelope,
            )?
        }
    };
    out.samples.resize(w.len(), 0.0);
    Ok(out)
}

/// Scores an already tuned file against reference notes.
pub fn metrics(
    tuned: &Waveform,
    reference: &NoteSequence,
    cfg: &PipelineConfig,
) -> Result<MetricsReport> {
    check_rate(tuned, cfg)?;
    let started = Instant::now();
    let measured = extract_pitch(tuned, &cfg.analysis).map_err(|e| e.at("pitch analysis"))?;
    let reference = clip_notes(reference, measured.len()).map_err(|e| e.at("reference notes"))?;
    let mut report =
        MetricsReport::score(&measured, &reference, None).map_err(|e| e.at("scoring"))?;
    report
        .timings
        .push(("scoring".into(), started.elapsed().as_secs_f64()));
    Ok(report)
}

/// A training clip: audio plus optional reference notes (decoded notes are
/// used when absent).
#[derive(Debug, Clone)]
pub struct TrainingClip {
    pub waveform: Waveform,
    pub notes: Option<NoteSequence>,
}

/// Trains the pitch predictor on analysed clips; returns the model and the
/// per-step loss.
pub fn train_predictor_on(
    clips: &[TrainingClip],
    cfg: &PipelineConfig,
) -> Result<(PitchPredictor, LossHistory)> {
    let mut data = Vec::with_capacity(clips.len());
    for clip in clips {
        let a = analyze(&clip.waveform, cfg)?;
        let notes = match &clip.notes {
            Some(n) => clip_notes(n, a.pitch().len())?,
            None => a.notes.clone(),
        };
        data.push(
            PredictorExample::new(
                &notes,
                a.artifact.envelope.clone(),
                a.artifact.pitch.clone(),
            )
            .map_err(|e| e.at("predictor data"))?,
        );
    }
    let trained = train_predictor(&data, cfg.predictor.model.clone(), &cfg.predictor.training)
        .map_err(|e| e.at("predictor training"))?;
    Ok((trained.model, trained.history))
}

/// Trains the vocoder on analysed clips, with ground-truth pitch.
pub fn train_vocoder_on(
    clips: &[Waveform],
    cfg: &PipelineConfig,
) -> Result<(SfVocoder, LossHistory)> {
    let layout = SfVocoder::new(cfg.vocoder.model.clone(), 0)?;
    let mut data = Vec::with_capacity(clips.len());
    for w in clips {
        let a = analyze(w, cfg)?;
        data.push(
            VocoderExample::new(&layout, w, &a.artifact.pitch, &a.artifact.envelope)
                .map_err(|e| e.at("vocoder data"))?,
        );
    }
    let trained = train_vocoder(&data, cfg.vocoder.model.clone(), &cfg.vocoder.training)
        .map_err(|e| e.at("vocoder training"))?;
    Ok((trained.model, trained.history))
}
