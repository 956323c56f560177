use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{blstm_forward, dense_forward, uniform_glorot, BlstmLayer, DenseConv};

/// How the per-bin losses are combined over `(t, f)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossNorm {
    /// Sum over bins, mean over the batch.
    #[default]
    Sum,
    /// Mean over bins and batch.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Frames per training sample `T`.
    pub frames: usize,
    /// Frequency bins `F`.
    pub bins: usize,
    /// Embedding dimension `E`.
    pub embed_dim: usize,
    /// Output width of each BLSTM layer (both directions together).
    pub hidden: usize,
    pub layers: usize,
    pub batch: usize,
    /// Training speaker count `C`; 0 means "take it from the corpus".
    pub speakers: usize,
    pub loss_norm: LossNorm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frames: 40,
            bins: 257,
            embed_dim: 40,
            hidden: 600,
            layers: 2,
            batch: 256,
            speakers: 0,
            loss_norm: LossNorm::Sum,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("frames", self.frames),
            ("bins", self.bins),
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("batch", self.batch),
            ("speakers", self.speakers),
        ];
        for (name, v) in named {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.hidden % 2 != 0 {
            return Err(Error::Config(format!(
                "model.hidden = {} must be even (split over two directions)",
                self.hidden
            )));
        }
        Ok(())
    }
}

/// The input-embedding network: stacked BLSTMs and the time-distributed
/// dense layer. It holds no speaker vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub layers: Vec<BlstmLayer>,
    pub dense: DenseConv,
}

impl Encoder {
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let probe = ModelConfig {
            speakers: config.speakers.max(1),
            ..*config
        };
        probe.validate()?;
        let per_dir = config.hidden / 2;
        let mut layers = Vec::with_capacity(config.layers);
        let mut width = config.bins;
        for _ in 0..config.layers {
            layers.push(BlstmLayer::init(width, per_dir, rng));
            width = config.hidden;
        }
        let dense = DenseConv::init(width, config.bins, config.embed_dim, rng);
        Ok(Encoder { layers, dense })
    }

    pub fn bins(&self) -> usize {
        self.dense.bins()
    }

    pub fn embed_dim(&self) -> usize {
        self.dense.embed_dim()
    }

    /// `features [B × T × F] → V_i [B × T × F × E]`.
    pub fn embed(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let shape = tape.shape(features).to_vec();
        if shape.len() != 3 || shape[2] != self.bins() {
            return Err(Error::Shape {
                op: "embed",
                lhs: shape,
                rhs: vec![0, 0, self.bins()],
            });
        }
        let mut r = features;
        for layer in &self.layers {
            r = blstm_forward(tape, layer, r)?;
        }
        dense_forward(tape, &self.dense, r)
    }

    /// Forward pass without recording gradients.
    pub fn embed_tensor(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut frozen = self.clone();
        for (_, p) in frozen.named_params_mut() {
            p.set_requires_grad(false);
        }
        let x = tape.constant(features.clone());
        let v = frozen.embed(&mut tape, x)?;
        Ok(tape.value(v).clone())
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            v.extend(layer.named_params(&format!("r{}", i + 1)));
        }
        v.extend(self.dense.named_params("dense"));
        v
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            v.extend(layer.named_params_mut(&format!("r{}", i + 1)));
        }
        v.extend(self.dense.named_params_mut("dense"));
        v
    }
}

/// One learned `E`-vector per training speaker (`C × E`).
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbeddingTable {
    pub vectors: Tensor,
}

impl SpeakerEmbeddingTable {
    pub fn init(speakers: usize, embed_dim: usize, rng: &mut impl Rng) -> Self {
        SpeakerEmbeddingTable {
            vectors: uniform_glorot([speakers, embed_dim], embed_dim, speakers, rng).with_grad(),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn embed_dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    /// `V_o [B × M × E]` from `speaker_indices` (`B × M`, row-major).
    pub fn gather(&self, tape: &mut Tape, speaker_indices: &[usize], batch: usize) -> Result<Var> {
        if batch == 0 || speaker_indices.len() % batch != 0 {
            return Err(Error::invalid(format!(
                "{} speaker indices do not split into {batch} mixes",
                speaker_indices.len()
            )));
        }
        let m = speaker_indices.len() / batch;
        let table = tape.leaf(&self.vectors);
        let rows = tape.gather_rows(table, speaker_indices)?;
        tape.reshape(rows, [batch, m, self.embed_dim()])
    }
}

/// Encoder plus speaker table, as trained.
#[derive(Clone, Debug, PartialEq)]
pub struct SceModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub speakers: SpeakerEmbeddingTable,
}

impl SceModel {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::init(&config, rng)?;
        let speakers = SpeakerEmbeddingTable::init(config.speakers, config.embed_dim, rng);
        Ok(SceModel {
            config,
            encoder,
            speakers,
        })
    }

    /// [`SceModel::init`] from a ChaCha8 stream seeded with `seed`.
    pub fn seeded(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::init(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// All trainable tensors in a fixed order: encoder, then `speakers`.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.encoder.named_params();
        v.push(("speakers".to_string(), &self.speakers.vectors));
        v
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = self.encoder.named_params_mut();
        v.push(("speakers".to_string(), &mut self.speakers.vectors));
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.named_params_mut().into_iter().map(|(_, t)| t).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            frames: 3,
            bins: 5,
            embed_dim: 2,
            hidden: 4,
            layers: 2,
            batch: 2,
            speakers: 3,
            loss_norm: LossNorm::Sum,
        }
    }

    #[test]
    fn embed_shape_for_any_frame_count() {
        let model = SceModel::init(tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for t in [1, 3, 7] {
            let x = Tensor::from_fn([2, t, 5], |i| (i as f32 * 0.1).sin());
            let v = model.encoder.embed_tensor(&x).unwrap();
            assert_eq!(v.shape(), &[2, t, 5, 2]);
        }
        let bad = Tensor::zeros([1, 3, 4]);
        assert!(model.encoder.embed_tensor(&bad).is_err());
    }

    #[test]
    fn zero_dense_gives_zero_embeddings() {
        let mut model = SceModel::init(tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        model.encoder.dense = DenseConv::zeros(4, 5, 2);
        let x = Tensor::from_fn([1, 3, 5], |i| i as f32);
        let v = model.encoder.embed_tensor(&x).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn different_inputs_differ() {
        let model = SceModel::init(tiny(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let a = model.encoder.embed_tensor(&Tensor::from_fn([1, 3, 5], |i| i as f32 / 15.0)).unwrap();
        let b = model.encoder.embed_tensor(&Tensor::from_fn([1, 3, 5], |i| 1.0 - i as f32 / 15.0)).unwrap();
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn gather_preserves_order_and_scatters() {
        let model = SceModel::init(tiny(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut tape = Tape::new();
        let vo = model.speakers.gather(&mut tape, &[1, 0, 1, 2], 2).unwrap();
        assert_eq!(tape.shape(vo), &[2, 2, 2]);
        let table = model.speakers.vectors.data();
        assert_eq!(&tape.value(vo).data()[..2], &table[2..4]);
        assert_eq!(&tape.value(vo).data()[2..4], &table[0..2]);
        let s = tape.sum(vo).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad_of(&model.speakers.vectors).unwrap();
        assert_eq!(g, &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0]);
        assert!(model.speakers.gather(&mut Tape::new(), &[0, 3], 1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(tiny().validate().is_ok());
        assert!(ModelConfig { hidden: 5, ..tiny() }.validate().is_err());
        assert!(ModelConfig { embed_dim: 0, ..tiny() }.validate().is_err());
    }
}
