use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{AnalysisConfig, PitchCurve, SpectralEnvelope};
use crate::binio::{fnv1a, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"KTAN";
const VERSION: u32 = 1;

/// Everything the analysis stage extracts from one clip, stamped with a hash
/// of the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisArtifact {
    pub config_hash: u64,
    pub pitch: PitchCurve,
    pub envelope: SpectralEnvelope,
}

impl AnalysisArtifact {
    pub fn new(
        cfg: &AnalysisConfig,
        pitch: PitchCurve,
        envelope: SpectralEnvelope,
    ) -> Result<Self> {
        envelope.check_aligned(&pitch)?;
        Ok(Self {
            config_hash: config_hash(cfg),
            pitch,
            envelope,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Writer::new(BufWriter::new(file));
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u64(self.config_hash)?;
        w.u32(self.pitch.sample_rate)?;
        w.u64(self.pitch.hop as u64)?;
        w.f64s(&self.pitch.f0_midi)?;
        for v in &self.pitch.voiced {
            w.u8(*v as u8)?;
        }
        w.f64s(&self.pitch.aperiodicity)?;
        w.u64(self.envelope.n_bins() as u64)?;
        for frame in &self.envelope.env {
            for v in frame {
                w.f64(*v)?;
            }
        }
        let mut inner = w.into_inner();
        std::io::Write::flush(&mut inner).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(BufReader::new(file));
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "{}: analysis artifact version {version} is not supported",
                path.display()
            )));
        }
        let config_hash = r.u64()?;
        let sample_rate = r.u32()?;
        let hop = r.u64()? as usize;
        let f0_midi = r.f64s()?;
        let voiced = (0..f0_midi.len())
            .map(|_| r.u8().map(|b| b != 0))
            .collect::<Result<Vec<_>>>()?;
        let aperiodicity = r.f64s()?;
        let n_bins = r.u64()? as usize;
        let env = (0..f0_midi.len())
            .map(|_| (0..n_bins).map(|_| r.f64()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config_hash,
            pitch: PitchCurve {
                f0_midi,
                voiced,
                aperiodicity,
                hop,
                sample_rate,
            },
            envelope: SpectralEnvelope {
                env,
                sample_rate,
                hop,
            },
        })
    }
}

pub fn config_hash(cfg: &AnalysisConfig) -> u64 {
    let text = toml::to_string(cfg).unwrap_or_default();
    fnv1a(text.as_bytes())
}
