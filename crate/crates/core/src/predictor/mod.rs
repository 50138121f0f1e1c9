//! Vocal-aware pitch predictor: frame-expanded notes and the low band of the
//! spectral envelope go through a stack of feed-forward Transformer blocks
//! and a linear head that emits a pitch curve in MIDI semitones.

mod train;

pub use train::{
    continue_training, evaluate_predictor, train_predictor, PredictorExample, TrainPredictorConfig,
    TrainedPredictor,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{crop_high_bands, SpectralEnvelope};
use crate::error::{Error, Result};
use crate::nn::layers::{Conv1d, Embedding, LayerNorm, Linear, MultiHeadAttention};
use crate::nn::{Binder, Checkpoint, Graph, ParamStore, Tensor, Var};
use crate::notes::{MIDI_MAX, MIDI_MIN};

pub const CHECKPOINT_KIND: &str = "pitch-predictor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    /// 52 notes (midi 33..=84) plus one rest id.
    pub note_vocab: usize,
    pub note_embed_dim: usize,
    pub env_in_bins: usize,
    pub env_proj_dim: usize,
    pub model_dim: usize,
    pub n_fft_blocks: usize,
    pub n_heads: usize,
    pub conv_kernel: usize,
    pub ff_hidden: usize,
    pub dropout: f64,
    /// Initial head bias, i.e. the output of an untrained model.
    pub init_pitch: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            note_vocab: (MIDI_MAX - MIDI_MIN) as usize + 2,
            note_embed_dim: 32,
            env_in_bins: 256,
            env_proj_dim: 32,
            model_dim: 64,
            n_fft_blocks: 2,
            n_heads: 2,
            conv_kernel: 3,
            ff_hidden: 128,
            dropout: 0.1,
            init_pitch: 60.0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        let expected = (MIDI_MAX - MIDI_MIN) as usize + 2;
        if self.note_vocab != expected {
            return Err(Error::Config(format!(
                "note_vocab must be {expected}, got {}",
                self.note_vocab
            )));
        }
        if self.n_heads == 0 || !self.model_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return Err(Error::Config("conv_kernel must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.env_in_bins == 0 || self.model_dim == 0 {
            return Err(Error::Config(
                "env_in_bins and model_dim must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn rest_id(&self) -> usize {
        self.note_vocab - 1
    }
}

pub fn note_id(note: Option<u8>) -> usize {
    match note {
        Some(m) if (MIDI_MIN..=MIDI_MAX).contains(&m) => (m - MIDI_MIN) as usize,
        _ => (MIDI_MAX - MIDI_MIN) as usize + 1,
    }
}

/// One model input: per-frame note ids, the cropped envelope and, for
/// training, the target curve with its voicing mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorBatch {
    pub notes: Vec<usize>,
    /// frames x env_in_bins, already cropped.
    pub env: Vec<Vec<f64>>,
    pub target_f0_midi: Vec<f64>,
    pub voiced_mask: Vec<bool>,
}

impl PredictorBatch {
    /// Crops `env` to the configured band and pairs it with the notes.
    pub fn new(
        cfg: &PredictorConfig,
        notes: &[Option<u8>],
        env: &SpectralEnvelope,
        target_f0_midi: Vec<f64>,
        voiced_mask: Vec<bool>,
    ) -> Result<Self> {
        let cropped = crop_high_bands(env, cfg.env_in_bins)?;
        let batch = Self {
            notes: notes.iter().map(|&n| note_id(n)).collect(),
            env: cropped.env,
            target_f0_midi,
            voiced_mask,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.notes.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty predictor batch".into()));
        }
        if self.env.len() != n || self.target_f0_midi.len() != n || self.voiced_mask.len() != n {
            return Err(Error::Contract(format!(
                "predictor batch lengths differ: notes {n}, env {}, target {}, mask {}",
                self.env.len(),
                self.target_f0_midi.len(),
                self.voiced_mask.len()
            )));
        }
        Ok(())
    }
}

/// Envelope frames scaled by their mean so loudness does not dominate the
/// input; the shape stays linear.
fn normalise_env(env: &[Vec<f64>], bins: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(env.len() * bins);
    for frame in env {
        if frame.len() != bins {
            return Err(Error::Contract(format!(
                "envelope frame has {} bins, model expects {bins}",
                frame.len()
            )));
        }
        let mean = frame.iter().sum::<f64>() / bins as f64;
        let s = 1.0 / (mean + 1e-12);
        data.extend(frame.iter().map(|v| v * s));
    }
    Tensor::new(&[env.len(), bins], data)
}

/// Per-frame numeric note features: signed semitones from middle C and a
/// rest flag.
fn note_features(ids: &[usize], rest: usize) -> Tensor {
    let mut data = Vec::with_capacity(ids.len() * 2);
    for &id in ids {
        if id == rest {
            data.extend([0.0, 1.0]);
        } else {
            let midi = id as f64 + MIDI_MIN as f64;
            data.extend([midi - 60.0, 0.0]);
        }
    }
    Tensor::new(&[ids.len(), 2], data).expect("two features per frame")
}

fn positional_encoding(frames: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; frames * dim];
    for t in 0..frames {
        for i in 0..dim / 2 {
            let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[t * dim + 2 * i] = (t as f64 * rate).sin();
            data[t * dim + 2 * i + 1] = (t as f64 * rate).cos();
        }
    }
    Tensor::new(&[frames, dim], data).expect("frames x dim")
}

/// Self-attention and a convolutional feed-forward layer, each wrapped in a
/// pre-norm residual.
#[derive(Debug, Clone)]
pub struct FftBlock {
    pub norm1: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff_in: Conv1d,
    pub ff_out: Conv1d,
}

impl FftBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        n_heads: usize,
        hidden: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim)?,
            attention: MultiHeadAttention::new(
                store,
                &format!("{name}.attention"),
                dim,
                n_heads,
                rng,
            )?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim)?,
            ff_in: Conv1d::same(store, &format!("{name}.ff_in"), dim, hidden, kernel, 1, rng)?,
            ff_out: Conv1d::same(
                store,
                &format!("{name}.ff_out"),
                hidden,
                dim,
                kernel,
                1,
                rng,
            )?,
        })
    }

    /// `[T, d]` → `[T, d]`. With `rng` set, dropout `p` is applied to both
    /// residual branches.
    pub fn forward<'g>(
        &self,
        p: &Binder,
        x: Var<'g>,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<Var<'g>> {
        let shape = x.shape();
        if shape.len() != 2 {
            return Err(Error::Contract(format!(
                "fft block expects [T, d], got {shape:?}"
            )));
        }
        let (t, d) = (shape[0], shape[1]);
        let mut dropout = dropout;
        let mut drop = |v: Var<'g>| -> Result<Var<'g>> {
            match dropout.as_mut() {
                Some((rate, rng)) => v.dropout(*rate, *rng),
                None => Ok(v),
            }
        };
        let a = self.attention.forward(p, self.norm1.forward(p, x)?)?;
        let x = x.add(drop(a)?)?;
        let h = self.norm2.forward(p, x)?.t()?.reshape(&[1, d, t])?;
        let h = self
            .ff_in
            .forward(p, h)?
            .leaky_relu(crate::nn::layers::LRELU_SLOPE)?;
        let h = self.ff_out.forward(p, h)?.reshape(&[d, t])?.t()?;
        x.add(drop(h)?)
    }
}

#[derive(Debug)]
pub struct PitchPredictor {
    pub config: PredictorConfig,
    pub store: ParamStore,
    pub note_embedding: Embedding,
    pub env_proj: Linear,
    pub input_proj: Linear,
    pub blocks: Vec<FftBlock>,
    pub head: Linear,
}

impl PitchPredictor {
    pub fn new(config: PredictorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let note_embedding = Embedding::new(
            &mut store,
            "note_embedding",
            c.note_vocab,
            c.note_embed_dim,
            &mut rng,
        )?;
        let env_proj = Linear::new(
            &mut store,
            "env_proj",
            c.env_in_bins,
            c.env_proj_dim,
            true,
            &mut rng,
        )?;
        let concat_dim = c.note_embed_dim + 2 + c.env_proj_dim;
        let input_proj = Linear::new(
            &mut store,
            "input_proj",
            concat_dim,
            c.model_dim,
            true,
            &mut rng,
        )?;
        let blocks = (0..c.n_fft_blocks)
            .map(|i| {
                FftBlock::new(
                    &mut store,
                    &format!("block{i}"),
                    c.model_dim,
                    c.n_heads,
                    c.ff_hidden,
                    c.conv_kernel,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::new(&mut store, "head", c.model_dim, 1, true, &mut rng)?;
        let bias = head.bias.expect("head has a bias");
        store.value_mut(bias).data_mut()[0] = c.init_pitch;
        Ok(Self {
            config,
            store,
            note_embedding,
            env_proj,
            input_proj,
            blocks,
            head,
        })
    }

    /// Predicted curve `[T]`. Passing `rng` enables dropout (training).
    pub fn forward<'g>(
        &self,
        p: &Binder,
        g: &'g Graph,
        notes: &[usize],
        env: &[Vec<f64>],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var<'g>> {
        let c = &self.config;
        let t = notes.len();
        if t == 0 || env.len() != t {
            return Err(Error::Contract(format!(
                "predictor got {t} note frames and {} envelope frames",
                env.len()
            )));
        }
        if let Some(&bad) = notes.iter().find(|&&n| n >= c.note_vocab) {
            return Err(Error::Contract(format!("note id {bad} outside vocabulary")));
        }
        let emb = self.note_embedding.forward(p, g, notes)?;
        let numeric = g.constant(note_features(notes, c.rest_id()))?;
        let env = self
            .env_proj
            .forward(p, g.constant(normalise_env(env, c.env_in_bins)?)?)?;
        let x = Var::concat(&[emb, numeric, env], 1)?;
        let mut x = self
            .input_proj
            .forward(p, x)?
            .add(g.constant(positional_encoding(t, c.model_dim))?)?;
        for block in &self.blocks {
            let drop = match (rng.as_deref_mut(), c.dropout > 0.0) {
                (Some(r), true) => Some((c.dropout, r)),
                _ => None,
            };
            x = block.forward(p, x, drop)?;
        }
        self.head.forward(p, x)?.reshape(&[t])
    }

    pub fn predict(&self, notes: &[usize], env: &[Vec<f64>]) -> Result<Vec<f64>> {
        let g = Graph::new();
        Ok(self
            .forward(&Binder::frozen(&self.store), &g, notes, env, None)?
            .to_vec())
    }

    pub fn predict_batch(&self, batch: &PredictorBatch) -> Result<Vec<f64>> {
        self.predict(&batch.notes, &batch.env)
    }

    pub fn to_checkpoint(&self, optimizer: Option<&crate::nn::AdamW>) -> Result<Checkpoint> {
        let config = serde_json::to_string(&self.config)
            .map_err(|e| Error::Format(format!("predictor config: {e}")))?;
        Ok(Checkpoint::capture(
            CHECKPOINT_KIND,
            config,
            &self.store,
            optimizer,
        ))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Format(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found '{}'",
                ck.kind
            )));
        }
        let config: PredictorConfig = serde_json::from_str(&ck.config)
            .map_err(|e| Error::Format(format!("predictor config in checkpoint: {e}")))?;
        let mut model = Self::new(config, 0)?;
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }
}

/// Mean squared error over voiced frames only.
pub fn mse_pitch_loss<'g>(pred: Var<'g>, target: &[f64], voiced: &[bool]) -> Result<Var<'g>> {
    let n = pred.numel();
    if target.len() != n || voiced.len() != n {
        return Err(Error::Contract(format!(
            "loss inputs differ in length: pred {n}, target {}, mask {}",
            target.len(),
            voiced.len()
        )));
    }
    let count = voiced.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::InvalidInput("no voiced frames to score".into()));
    }
    let g = pred.graph();
    let shape = pred.shape();
    let target = g.constant(Tensor::new(&shape, target.to_vec())?)?;
    let mask = g.constant(Tensor::new(
        &shape,
        voiced.iter().map(|&v| v as u8 as f64).collect(),
    )?)?;
    pred.sub(target)?
        .mul(mask)?
        .square()?
        .sum()?
        .scale(1.0 / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_env(frames: usize, bins: usize) -> Vec<Vec<f64>> {
        (0..frames)
            .map(|t| (0..bins).map(|k| 1.0 + ((t * 7 + k) % 5) as f64).collect())
            .collect()
    }

    fn small() -> PredictorConfig {
        PredictorConfig {
            env_in_bins: 16,
            env_proj_dim: 8,
            note_embed_dim: 8,
            model_dim: 16,
            ff_hidden: 16,
            ..Default::default()
        }
    }

    #[test]
    fn untrained_output_is_finite_for_any_length() {
        let model = PitchPredictor::new(small(), 1).unwrap();
        for frames in [1, 7, 100] {
            let notes: Vec<usize> = (0..frames).map(|t| t % 53).collect();
            let out = model.predict(&notes, &toy_env(frames, 16)).unwrap();
            assert_eq!(out.len(), frames);
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zeroed_backbone_outputs_the_head_bias_not_the_note() {
        let mut model = PitchPredictor::new(small(), 2).unwrap();
        let zeroed: Vec<_> = model
            .store
            .iter()
            .filter(|(_, p)| p.name.starts_with("block") || p.name == "head.weight")
            .map(|(id, _)| id)
            .collect();
        for id in zeroed {
            model
                .store
                .value_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let notes = vec![note_id(Some(72)); 10];
        let out = model.predict(&notes, &toy_env(10, 16)).unwrap();
        assert!(out.iter().all(|&v| v == 60.0));
    }

    #[test]
    fn fft_block_with_zero_output_projections_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let block = FftBlock::new(&mut store, "b", 8, 2, 12, 3, &mut rng).unwrap();
        for id in [block.attention.out.weight, block.ff_out.weight] {
            store
                .value_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let g = Graph::new();
        let data: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = g
            .constant(Tensor::new(&[5, 8], data.clone()).unwrap())
            .unwrap();
        let y = block.forward(&Binder::frozen(&store), x, None).unwrap();
        assert_eq!(y.shape(), vec![5, 8]);
        assert_eq!(y.to_vec(), data);
    }

    #[test]
    fn loss_examples() {
        let g = Graph::new();
        let pred = g
            .constant(Tensor::new(&[4], vec![61.0, 62.0, 63.0, 64.0]).unwrap())
            .unwrap();
        let mask = [true, true, false, true];
        let same = mse_pitch_loss(pred, &[61.0, 62.0, 0.0, 64.0], &mask).unwrap();
        assert_eq!(same.item(), 0.0);
        let off = mse_pitch_loss(pred, &[60.0, 61.0, 50.0, 63.0], &mask).unwrap();
        assert!((off.item() - 1.0).abs() < 1e-15);
        assert!(mse_pitch_loss(pred, &[0.0; 4], &[false; 4]).is_err());
        assert!(mse_pitch_loss(pred, &[0.0; 3], &[true; 3]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let model = PitchPredictor::new(small(), 5).unwrap();
        let ck = model.to_checkpoint(None).unwrap();
        let back = PitchPredictor::from_checkpoint(&ck).unwrap();
        let notes = vec![3, 4, 52, 10];
        let env = toy_env(4, 16);
        assert_eq!(
            model.predict(&notes, &env).unwrap(),
            back.predict(&notes, &env).unwrap()
        );
    }
}
