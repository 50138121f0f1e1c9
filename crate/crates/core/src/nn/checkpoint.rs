//! Versioned binary container for named parameter tensors and, optionally,
//! the optimizer state that goes with them.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{AdamW, AdamWConfig, ParamStore, Tensor};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"KTCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Model family, e.g. `"predictor"`.
    pub kind: String,
    /// Serialized model configuration needed to rebuild the architecture.
    pub config: String,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<AdamW>,
}

impl Checkpoint {
    pub fn capture(
        kind: &str,
        config: String,
        store: &ParamStore,
        optimizer: Option<&AdamW>,
    ) -> Self {
        Self {
            kind: kind.to_string(),
            config,
            tensors: store
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.clone()))
                .collect(),
            optimizer: optimizer.cloned(),
        }
    }

    /// Copies the saved values into a store built with the same architecture.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (name, t) in &self.tensors {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Format(format!("checkpoint tensor '{name}' not in model")))?;
            if store.value(id).shape() != t.shape() {
                return Err(Error::Format(format!(
                    "tensor '{name}' has shape {:?} in the checkpoint but {:?} in the model",
                    t.shape(),
                    store.value(id).shape()
                )));
            }
            *store.value_mut(id) = t.clone();
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Writer::new(BufWriter::new(file));
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.str(&self.kind)?;
        w.str(&self.config)?;
        w.u32(self.tensors.len() as u32)?;
        for (name, t) in &self.tensors {
            w.str(name)?;
            w.u32(t.shape().len() as u32)?;
            for &d in t.shape() {
                w.u64(d as u64)?;
            }
            w.f64s(t.data())?;
        }
        match &self.optimizer {
            None => w.u8(0)?,
            Some(opt) => {
                w.u8(1)?;
                let c = opt.config;
                for v in [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay] {
                    w.f64(v)?;
                }
                w.u64(opt.steps())?;
                let (m, v) = opt.moments();
                w.u32(m.len() as u32)?;
                for (a, b) in m.iter().zip(v) {
                    w.f64s(a)?;
                    w.f64s(b)?;
                }
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
                "{}: checkpoint version {version} is not supported",
                path.display()
            )));
        }
        let kind = r.str()?;
        let config = r.str()?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let data = r.f64s()?;
            let t = Tensor::new(&shape, data).map_err(|_| {
                Error::Format(format!("{}: tensor '{name}' is truncated", path.display()))
            })?;
            tensors.push((name, t));
        }
        let optimizer = match r.u8()? {
            0 => None,
            _ => {
                let mut h = [0.0; 5];
                for v in &mut h {
                    *v = r.f64()?;
                }
                let config = AdamWConfig {
                    lr: h[0],
                    beta1: h[1],
                    beta2: h[2],
                    eps: h[3],
                    weight_decay: h[4],
                };
                let step = r.u64()?;
                let k = r.u32()? as usize;
                let mut m = Vec::with_capacity(k);
                let mut v = Vec::with_capacity(k);
                for _ in 0..k {
                    m.push(r.f64s()?);
                    v.push(r.f64s()?);
                }
                Some(AdamW::from_parts(config, step, m, v))
            }
        };
        Ok(Self {
            kind,
            config,
            tensors,
            optimizer,
        })
    }
}
