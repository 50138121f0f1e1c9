use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::AnalysisConfig;
use crate::error::{Error, Result};
use crate::notes::NoteHmmParams;
use crate::predictor::{PredictorConfig, TrainPredictorConfig};
use crate::tuner::TunerConfig;
use crate::vocoder::{TrainVocoderConfig, VocoderConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuneMode {
    /// Shift each note of the original curve onto the reference.
    Rule,
    /// Predict a curve from notes and envelope, then shift it onto the reference.
    Neural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Sf,
    World,
    Phase,
}

impl TuneMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TuneMode::Rule => "rule",
            TuneMode::Neural => "neural",
        }
    }
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Sf => "sf",
            Backend::World => "world",
            Backend::Phase => "phase",
        }
    }
}

impl fmt::Display for TuneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TuneMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rule" => Ok(TuneMode::Rule),
            "neural" => Ok(TuneMode::Neural),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected rule or neural)"
            ))),
        }
    }
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sf" => Ok(Backend::Sf),
            "world" => Ok(Backend::World),
            "phase" => Ok(Backend::Phase),
            other => Err(Error::Config(format!(
                "unknown backend '{other}' (expected sf, world or phase)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub checkpoint: Option<PathBuf>,
    pub model: PredictorConfig,
    pub training: TrainPredictorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocoderSection {
    pub checkpoint: Option<PathBuf>,
    pub model: VocoderConfig,
    pub training: TrainVocoderConfig,
}

impl Default for VocoderSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            model: VocoderConfig::toy(),
            training: TrainVocoderConfig::default(),
        }
    }
}

/// Everything a run needs. Every field has a default, so a config file only
/// lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sample_rate: u32,
    pub seed: u64,
    pub mode: TuneMode,
    pub backend: Backend,
    pub out_dir: PathBuf,
    pub analysis: AnalysisConfig,
    pub notes: NoteHmmParams,
    pub tuner: TunerConfig,
    pub predictor: PredictorSection,
    pub vocoder: VocoderSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sample_rate: 32_000,
            seed: 0,
            mode: TuneMode::Rule,
            backend: Backend::World,
            out_dir: PathBuf::from("karatune-out"),
            analysis: AnalysisConfig::default(),
            notes: NoteHmmParams::default(),
            tuner: TunerConfig::default(),
            predictor: PredictorSection::default(),
            vocoder: VocoderSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML, logs every field the document sets, and validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Value = text.parse().map_err(|e: toml::de::Error| {
            Error::Config(format!("config is not valid TOML: {e}"))
        })?;
        let cfg: Self = value
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let mut overrides = Vec::new();
        collect_leaves(&value, String::new(), &mut overrides);
        for (key, v) in overrides {
            log::info!("config override: {key} = {v}");
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    /// Cross-module consistency: one sample rate and one frame grid.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sample_rate != 32_000 {
            return bad(format!(
                "sample_rate {} unsupported: synthesis runs at 32000 Hz",
                self.sample_rate
            ));
        }
        self.analysis.stft.validate()?;
        self.notes.validate()?;
        self.predictor.model.validate()?;
        self.vocoder.model.validate()?;
        let hop = self.analysis.stft.hop;
        if hop != self.vocoder.model.hop() {
            return bad(format!(
                "analysis hop {hop} differs from the vocoder upsampling product {}",
                self.vocoder.model.hop()
            ));
        }
        if self.vocoder.model.sample_rate != self.sample_rate {
            return bad(format!(
                "vocoder sample_rate {} differs from sample_rate {}",
                self.vocoder.model.sample_rate, self.sample_rate
            ));
        }
        if self.analysis.stft.n_bins() != self.vocoder.model.n_env_bins {
            return bad(format!(
                "analysis produces {} envelope bins, the vocoder expects {}",
                self.analysis.stft.n_bins(),
                self.vocoder.model.n_env_bins
            ));
        }
        if self.predictor.model.env_in_bins > self.analysis.stft.n_bins() {
            return bad(format!(
                "predictor reads {} envelope bins, analysis only has {}",
                self.predictor.model.env_in_bins,
                self.analysis.stft.n_bins()
            ));
        }
        Ok(())
    }
}

fn collect_leaves(v: &toml::Value, prefix: String, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                collect_leaves(child, key, out);
            }
        }
        leaf => out.push((prefix, leaf.to_string())),
    }
}
