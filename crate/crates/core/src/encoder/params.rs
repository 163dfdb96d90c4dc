use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub ffn_dim: usize,
}

impl ModelDims {
    /// d=64, 2 layers, 4 heads, 128 positions, feed-forward width 4d.
    pub fn new(vocab_size: usize) -> Self {
        Self::with(vocab_size, 64, 2, 4, 128)
    }

    pub fn with(vocab_size: usize, dim: usize, layers: usize, heads: usize, max_len: usize) -> Self {
        Self {
            vocab_size,
            dim,
            layers,
            heads,
            max_len,
            ffn_dim: 4 * dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.vocab_size > 0
            && self.dim > 0
            && self.heads > 0
            && self.dim % self.heads == 0
            && self.max_len > 0
            && self.ffn_dim > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent model dimensions {self:?}")))
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Which rows the latest-utterance mean is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatestMeanSource {
    /// The rows used for scoring (unit-normalized when normalization is on).
    #[default]
    Output,
    /// The encoder rows before unit normalization.
    PreNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dims: ModelDims,
    pub normalize: bool,
    pub latest_mean: LatestMeanSource,
}

impl EncoderConfig {
    pub fn new(dims: ModelDims) -> Self {
        Self {
            dims,
            normalize: true,
            latest_mean: LatestMeanSource::Output,
        }
    }
}

/// Role of a tensor, used for weight-decay selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Embedding,
    Matrix,
    Bias,
    Norm,
}

impl TensorKind {
    pub fn decays(self) -> bool {
        matches!(self, TensorKind::Embedding | TensorKind::Matrix)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensors {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Every trainable tensor of the encoder and relevance scorer. Also used for
/// gradients and optimizer moments, which share the layout.
///
/// Weight matrices are stored row-major as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    pub token_emb: Vec<f64>,
    pub pos_emb: Vec<f64>,
    pub speaker_emb: Vec<f64>,
    pub layers: Vec<LayerTensors>,
    /// Bilinear relevance matrix, `d x d`.
    pub relevance: Vec<f64>,
    /// Relevance bias, one scalar.
    pub relevance_bias: Vec<f64>,
}

macro_rules! layer_fields {
    ($mac:ident) => {
        $mac!(ln1_gain, Norm);
        $mac!(ln1_bias, Norm);
        $mac!(wq, Matrix);
        $mac!(bq, Bias);
        $mac!(wk, Matrix);
        $mac!(bk, Bias);
        $mac!(wv, Matrix);
        $mac!(bv, Bias);
        $mac!(wo, Matrix);
        $mac!(bo, Bias);
        $mac!(ln2_gain, Norm);
        $mac!(ln2_bias, Norm);
        $mac!(w1, Matrix);
        $mac!(b1, Bias);
        $mac!(w2, Matrix);
        $mac!(b2, Bias);
    };
}

impl Tensors {
    pub fn zeros(dims: &ModelDims) -> Self {
        let d = dims.dim;
        let f = dims.ffn_dim;
        let layer = LayerTensors {
            ln1_gain: vec![0.0; d],
            ln1_bias: vec![0.0; d],
            wq: vec![0.0; d * d],
            bq: vec![0.0; d],
            wk: vec![0.0; d * d],
            bk: vec![0.0; d],
            wv: vec![0.0; d * d],
            bv: vec![0.0; d],
            wo: vec![0.0; d * d],
            bo: vec![0.0; d],
            ln2_gain: vec![0.0; d],
            ln2_bias: vec![0.0; d],
            w1: vec![0.0; d * f],
            b1: vec![0.0; f],
            w2: vec![0.0; f * d],
            b2: vec![0.0; d],
        };
        Self {
            token_emb: vec![0.0; dims.vocab_size * d],
            pos_emb: vec![0.0; dims.max_len * d],
            speaker_emb: vec![0.0; 2 * d],
            layers: vec![layer; dims.layers],
            relevance: vec![0.0; d * d],
            relevance_bias: vec![0.0; 1],
        }
    }

    /// Tensors in declared (serialization) order.
    pub fn named(&self) -> Vec<(String, TensorKind, &[f64])> {
        let mut out: Vec<(String, TensorKind, &[f64])> = vec![
            ("token_emb".into(), TensorKind::Embedding, &self.token_emb),
            ("pos_emb".into(), TensorKind::Embedding, &self.pos_emb),
            ("speaker_emb".into(), TensorKind::Embedding, &self.speaker_emb),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            macro_rules! push {
                ($field:ident, $kind:ident) => {
                    out.push((
                        format!("layers.{i}.{}", stringify!($field)),
                        TensorKind::$kind,
                        &layer.$field,
                    ));
                };
            }
            layer_fields!(push);
        }
        out.push(("relevance".into(), TensorKind::Matrix, &self.relevance));
        out.push(("relevance_bias".into(), TensorKind::Bias, &self.relevance_bias));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, TensorKind, &mut [f64])> {
        let mut out: Vec<(String, TensorKind, &mut [f64])> = vec![
            ("token_emb".into(), TensorKind::Embedding, &mut self.token_emb),
            ("pos_emb".into(), TensorKind::Embedding, &mut self.pos_emb),
            ("speaker_emb".into(), TensorKind::Embedding, &mut self.speaker_emb),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            macro_rules! push {
                ($field:ident, $kind:ident) => {
                    out.push((
                        format!("layers.{i}.{}", stringify!($field)),
                        TensorKind::$kind,
                        &mut layer.$field,
                    ));
                };
            }
            layer_fields!(push);
        }
        out.push(("relevance".into(), TensorKind::Matrix, &mut self.relevance));
        out.push(("relevance_bias".into(), TensorKind::Bias, &mut self.relevance_bias));
        out
    }

    pub fn len(&self) -> usize {
        self.named().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn fill(&mut self, value: f64) {
        for (_, _, t) in self.named_mut() {
            t.fill(value);
        }
    }

    /// `self += other`, element-wise.
    pub fn add_assign(&mut self, other: &Tensors) {
        for ((_, _, a), (_, _, b)) in self.named_mut().into_iter().zip(other.named()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, _, t) in self.named_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.named()
            .iter()
            .flat_map(|(_, _, t)| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.named()
            .iter()
            .all(|(_, _, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// Encoder weights together with their configuration.
///
/// Values are always representable as `f32`, so a checkpoint round-trip is
/// lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub tensors: Tensors,
}

impl EncoderParams {
    /// Seeded initialization: N(0, 0.02) for embeddings and matrices, unit
    /// layer-norm gains, zero biases.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut tensors = Tensors::zeros(&config.dims);
        for (name, kind, t) in tensors.named_mut() {
            match kind {
                TensorKind::Embedding | TensorKind::Matrix => {
                    for x in t.iter_mut() {
                        *x = normal.sample(&mut rng);
                    }
                }
                TensorKind::Norm if name.ends_with("gain") => t.fill(1.0),
                TensorKind::Norm | TensorKind::Bias => {}
            }
        }
        let mut params = Self { config, tensors };
        params.round_to_f32();
        Ok(params)
    }

    pub fn dims(&self) -> &ModelDims {
        &self.config.dims
    }

    /// Rounds every value to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for (_, _, t) in self.tensors.named_mut() {
            for x in t.iter_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.dims.validate()?;
        let expected = Tensors::zeros(&self.config.dims);
        for ((name, _, a), (_, _, b)) in self.tensors.named().iter().zip(expected.named()) {
            if a.len() != b.len() {
                return Err(Error::Shape(format!(
                    "tensor {name} has {} values, expected {}",
                    a.len(),
                    b.len()
                )));
            }
        }
        if self.tensors.layers.len() != self.config.dims.layers {
            return Err(Error::Shape("layer count does not match dims".into()));
        }
        if !self.tensors.all_finite() {
            return Err(Error::Shape("parameters contain non-finite values".into()));
        }
        Ok(())
    }
}
