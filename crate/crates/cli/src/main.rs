use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use karatune_core::notes::{read_notes, NoteSequence};
use karatune_core::pipeline::{
    self, analyze, train_predictor_on, train_vocoder_on, Backend, Models, PipelineConfig,
    TrainingClip, TuneMode,
};
use karatune_core::signal::{load_wav, Waveform};
use karatune_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(
    name = "karatune",
    version,
    about = "Pitch correction for vocal recordings"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML config; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the synthesis and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract pitch, envelope and notes from a WAV file.
    Analyze { input: PathBuf },
    /// Retune a WAV file onto reference notes.
    Tune {
        input: PathBuf,
        /// Reference notes (.mid or .txt); the decoded notes when absent.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
    },
    /// Score a tuned WAV file against reference notes.
    Metrics {
        input: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Train the pitch predictor; writes predictor.ckpt and its loss CSV.
    TrainPredictor {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Reference notes per input, in order; missing ones are decoded.
        #[arg(long = "ref")]
        references: Vec<PathBuf>,
    },
    /// Train the vocoder; writes vocoder.ckpt and its loss CSV.
    TrainVocoder {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Rule,
    Neural,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Sf,
    World,
    Phase,
}

impl From<ModeArg> for TuneMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Rule => TuneMode::Rule,
            ModeArg::Neural => TuneMode::Neural,
        }
    }
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Sf => Backend::Sf,
            BackendArg::World => Backend::World,
            BackendArg::Phase => Backend::Phase,
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(Error),
    #[error("{0}")]
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_config() {
            CliError::Config(e)
        } else {
            CliError::Data(e)
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KARATUNE_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("karatune: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_config(args: &GlobalArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            PipelineConfig::load(path).map_err(|e| CliError::Config(e.at("loading config")))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        log::info!("config override: seed = {seed} (command line)");
        cfg.seed = seed;
        cfg.predictor.training.seed = seed;
        cfg.vocoder.training.seed = seed;
    }
    if let Some(out) = &args.out {
        log::info!("config override: out_dir = {} (command line)", out.display());
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn read_audio(path: &Path, cfg: &PipelineConfig) -> Result<Waveform, CliError> {
    Ok(load_wav(path, Some(cfg.sample_rate)).map_err(|e| e.at("reading input audio"))?)
}

fn read_reference(path: &Path, cfg: &PipelineConfig) -> Result<NoteSequence, CliError> {
    Ok(read_notes(path, cfg.analysis.stft.hop, cfg.sample_rate)
        .map_err(|e| e.at("reading reference notes"))?)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into())
}

fn announce(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Analyze { input } => {
            let w = read_audio(&input, &cfg)?;
            let a = analyze(&w, &cfg)?;
            announce(&a.save(&cfg.out_dir, &stem(&input))?);
            println!("{}", a.summary());
        }
        Command::Tune {
            input,
            reference,
            mode,
            backend,
        } => {
            let mode = mode.map(TuneMode::from).unwrap_or(cfg.mode);
            let backend = backend.map(Backend::from).unwrap_or(cfg.backend);
            let models = Models::load(&cfg, mode, backend)?;
            let w = read_audio(&input, &cfg)?;
            let reference = reference.map(|r| read_reference(&r, &cfg)).transpose()?;
            let outcome = pipeline::tune(&w, reference.as_ref(), mode, backend, &cfg, &models)?;
            announce(&outcome.write(&cfg.out_dir, &stem(&input))?);
            print!("{}", outcome.metrics.to_text());
        }
        Command::Metrics { input, reference } => {
            let w = read_audio(&input, &cfg)?;
            let reference = read_reference(&reference, &cfg)?;
            let report = pipeline::metrics(&w, &reference, &cfg)?;
            print!("{}", report.to_text());
        }
        Command::TrainPredictor { inputs, references } => {
            if references.len() > inputs.len() {
                return Err(CliError::Config(Error::Config(format!(
                    "{} references given for {} inputs",
                    references.len(),
                    inputs.len()
                ))));
            }
            let mut clips = Vec::with_capacity(inputs.len());
            for (i, input) in inputs.iter().enumerate() {
                clips.push(TrainingClip {
                    waveform: read_audio(input, &cfg)?,
                    notes: references
                        .get(i)
                        .map(|r| read_reference(r, &cfg))
                        .transpose()?,
                });
            }
            let (model, history) = train_predictor_on(&clips, &cfg)?;
            let paths = save_model(
                &cfg.out_dir,
                "predictor",
                model.to_checkpoint(None)?,
                &history,
            )?;
            announce(&paths);
        }
        Command::TrainVocoder { inputs } => {
            let clips = inputs
                .iter()
                .map(|p| read_audio(p, &cfg))
                .collect::<Result<Vec<_>, _>>()?;
            let (model, history) = train_vocoder_on(&clips, &cfg)?;
            let paths = save_model(
                &cfg.out_dir,
                "vocoder",
                model.to_checkpoint(None)?,
                &history,
            )?;
            announce(&paths);
        }
    }
    Ok(())
}

fn save_model(
    dir: &Path,
    name: &str,
    ck: karatune_core::nn::Checkpoint,
    history: &karatune_core::history::LossHistory,
) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).at("writing model"))?;
    let ckpt = dir.join(format!("{name}.ckpt"));
    let csv = dir.join(format!("{name}.loss.csv"));
    ck.save(&ckpt).map_err(|e| e.at("writing model"))?;
    history
        .write_csv(&csv)
        .map_err(|e| e.at("writing loss history"))?;
    Ok(vec![ckpt, csv])
}
