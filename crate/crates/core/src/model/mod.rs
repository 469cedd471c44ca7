//! LSTM encoder-decoder.
//!
//! One embedding table shared by encoder and decoder inputs, a single-layer
//! LSTM on each side, optional additive attention over encoder states, and a
//! linear output projection followed by softmax. Gradients are derived by hand
//! (see [`network`]).

pub mod checkpoint;
pub mod decode;
pub mod network;
pub mod train;

use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::rng::RngStream;

pub use decode::{beam_search, greedy_decode, sample_decode, Hypothesis};
pub use network::{DecoderState, Encoded, EncoderState};
pub use train::{train_mle, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub attention: bool,
}

impl ModelDims {
    /// Width of the vector fed to the output projection.
    pub fn feature_dim(&self) -> usize {
        if self.attention {
            2 * self.hidden
        } else {
            self.hidden
        }
    }

    pub fn lstm_input(&self) -> usize {
        self.embed + self.hidden
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Scores a response given its context.
    Forward,
    /// Scores the previous turn given a response.
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(Error::Parse(format!("unknown direction `{other}`"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Training and decoding hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention: bool,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beam_width: usize,
    pub max_decode_len: usize,
    /// Half-width of the uniform initialization interval.
    pub init_scale: f64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        HyperConfig {
            embed_dim: 24,
            hidden_dim: 48,
            attention: false,
            learning_rate: 1.0,
            clip_norm: 5.0,
            batch_size: 16,
            epochs: 30,
            beam_width: 10,
            max_decode_len: 12,
            init_scale: 0.08,
        }
    }
}

impl HyperConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_ints = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("beam_width", self.beam_width),
            ("max_decode_len", self.max_decode_len),
        ];
        for (name, v) in positive_ints {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
            ("init_scale", self.init_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn dims(&self, vocab: usize) -> ModelDims {
        ModelDims { vocab, embed: self.embed_dim, hidden: self.hidden_dim, attention: self.attention }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    /// `4H x (E + H)`, gate blocks in order input, forget, candidate, output.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LstmWeights {
    fn zeros(dims: &ModelDims) -> Self {
        LstmWeights {
            weight: Matrix::zeros(4 * dims.hidden, dims.lstm_input()),
            bias: vec![0.0; 4 * dims.hidden],
        }
    }
}

/// Additive attention: `score_j = v . tanh(Q h + K e_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub query: Matrix,
    pub key: Matrix,
    pub score: Vec<f64>,
}

/// All weights of one encoder-decoder network.
///
/// Also used as the gradient accumulator for itself (`zeros_like`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    direction: Direction,
    vocab_hash: String,
    pub embedding: Matrix,
    pub encoder: LstmWeights,
    pub decoder: LstmWeights,
    pub attention: Option<AttentionWeights>,
    pub output: Matrix,
    pub output_bias: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims, direction: Direction, vocab_hash: impl Into<String>) -> Self {
        let h = dims.hidden;
        ModelParams {
            dims,
            direction,
            vocab_hash: vocab_hash.into(),
            embedding: Matrix::zeros(dims.vocab, dims.embed),
            encoder: LstmWeights::zeros(&dims),
            decoder: LstmWeights::zeros(&dims),
            attention: dims.attention.then(|| AttentionWeights {
                query: Matrix::zeros(h, h),
                key: Matrix::zeros(h, h),
                score: vec![0.0; h],
            }),
            output: Matrix::zeros(dims.vocab, dims.feature_dim()),
            output_bias: vec![0.0; dims.vocab],
        }
    }

    /// Uniform initialization in `[-scale, scale]`, array by array in
    /// checkpoint order.
    pub fn random(
        dims: ModelDims,
        direction: Direction,
        vocab_hash: impl Into<String>,
        scale: f64,
        rng: &mut RngStream,
    ) -> Self {
        let mut p = Self::zeros(dims, direction, vocab_hash);
        for (_, arr) in p.arrays_mut() {
            for v in arr.iter_mut() {
                *v = rng.uniform(-scale, scale);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims, self.direction, self.vocab_hash.clone())
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn vocab_size(&self) -> usize {
        self.dims.vocab
    }

    /// Named arrays in checkpoint order.
    pub fn arrays(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("embedding", self.embedding.as_slice()),
            ("encoder.weight", self.encoder.weight.as_slice()),
            ("encoder.bias", &self.encoder.bias),
            ("decoder.weight", self.decoder.weight.as_slice()),
            ("decoder.bias", &self.decoder.bias),
        ];
        if let Some(att) = &self.attention {
            out.push(("attention.query", att.query.as_slice()));
            out.push(("attention.key", att.key.as_slice()));
            out.push(("attention.score", &att.score));
        }
        out.push(("output.weight", self.output.as_slice()));
        out.push(("output.bias", &self.output_bias));
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let ModelParams { embedding, encoder, decoder, attention, output, output_bias, .. } = self;
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("embedding", embedding.as_mut_slice()),
            ("encoder.weight", encoder.weight.as_mut_slice()),
            ("encoder.bias", &mut encoder.bias),
            ("decoder.weight", decoder.weight.as_mut_slice()),
            ("decoder.bias", &mut decoder.bias),
        ];
        if let Some(att) = attention {
            out.push(("attention.query", att.query.as_mut_slice()));
            out.push(("attention.key", att.key.as_mut_slice()));
            out.push(("attention.score", &mut att.score));
        }
        out.push(("output.weight", output.as_mut_slice()));
        out.push(("output.bias", output_bias));
        out
    }

    pub fn num_params(&self) -> usize {
        self.arrays().iter().map(|(_, a)| a.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for (_, a) in self.arrays() {
            v.extend_from_slice(a);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "flat parameter vector has {} values, model has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for (_, a) in self.arrays_mut() {
            a.copy_from_slice(&flat[offset..offset + a.len()]);
            offset += a.len();
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelParams) {
        debug_assert_eq!(self.dims, other.dims);
        for ((_, dst), (_, src)) in self.arrays_mut().into_iter().zip(other.arrays()) {
            crate::math::axpy(alpha, src, dst);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, a) in self.arrays_mut() {
            a.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.arrays().iter().flat_map(|(_, a)| a.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|(_, a)| a.iter().all(|v| v.is_finite()))
    }

    /// Short hash over dimensions and the exact bits of every weight.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}{}{}", self.dims, self.direction, self.vocab_hash).as_bytes());
        for (name, a) in self.arrays() {
            h.update(name.as_bytes());
            for v in a {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Same weights, relabelled direction (used when a backward model is
    /// initialized from scratch with the forward model's shape).
    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }
}
