//! Compact post-norm transformer encoder with a `[CLS]`-pooled linear head,
//! trained from scratch with AdamW.
//!
//! All computation runs in `f64`. Model files store parameters as `f32`.
//!
//! Shapes follow the row-vector convention: a sequence is an `n × d_model`
//! matrix and a projection is `x · W + b`.

mod io;
mod model;
mod optim;
mod train;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::SentimentLabel;
use crate::error::{Error, Result};

pub use io::{load_model, save_model, ModelFile, TensorEntry, MODEL_FORMAT_VERSION};
pub use model::{forward, forward_example, loss_and_grads, ForwardCache};
pub use optim::{adamw_step, lr_schedule, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use train::{predict, predict_encodings, train, Dataset, EpochLog, TrainOutcome};

pub const LAYER_NORM_EPS: f64 = 1e-12;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_len: usize,
    /// Taken from the vocabulary; the default of 0 must be overwritten.
    pub vocab_size: usize,
    pub num_classes: usize,
}

impl Default for EncoderConfig {
    /// Desk-scale model: 2 layers, 4 heads, 128 hidden units.
    fn default() -> Self {
        EncoderConfig {
            num_layers: 2,
            num_heads: 4,
            d_model: 128,
            d_ff: 256,
            dropout: 0.1,
            max_len: 128,
            vocab_size: 0,
            num_classes: SentimentLabel::COUNT,
        }
    }
}

impl EncoderConfig {
    /// 12 layers, 12 heads, 768 hidden units, 3072 feed-forward units.
    pub fn reference_scale(vocab_size: usize, max_len: usize) -> Self {
        EncoderConfig {
            num_layers: 12,
            num_heads: 12,
            d_model: 768,
            d_ff: 3072,
            dropout: 0.1,
            max_len,
            vocab_size,
            num_classes: SentimentLabel::COUNT,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return bad(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.num_classes != SentimentLabel::COUNT {
            return bad(format!("num_classes must be {}", SentimentLabel::COUNT));
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        let (d, f) = (self.d_model, self.d_ff);
        let per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d;
        (self.vocab_size + self.max_len) * d
            + self.num_layers * per_layer
            + d * self.num_classes
            + self.num_classes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrScheduleKind {
    /// Linear warmup, then linear decay to zero at the last step.
    #[default]
    Linear,
    /// Linear warmup, then constant.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    pub schedule: LrScheduleKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            epochs: 3,
            batch_size: 8,
            weight_decay: 0.01,
            warmup_steps: 500,
            seed: 42,
            schedule: LrScheduleKind::Linear,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
}

/// Tensor names within a layer, in storage order, with their weight-decay flag.
const LAYER_TENSORS: [(&str, bool); 16] = [
    ("attention.query.weight", true),
    ("attention.query.bias", false),
    ("attention.key.weight", true),
    ("attention.key.bias", false),
    ("attention.value.weight", true),
    ("attention.value.bias", false),
    ("attention.output.weight", true),
    ("attention.output.bias", false),
    ("attention.layer_norm.gain", false),
    ("attention.layer_norm.bias", false),
    ("ffn.input.weight", true),
    ("ffn.input.bias", false),
    ("ffn.output.weight", true),
    ("ffn.output.bias", false),
    ("ffn.layer_norm.gain", false),
    ("ffn.layer_norm.bias", false),
];

impl LayerParams {
    fn zeros(d: usize, f: usize) -> Self {
        let m = |r, c| Array2::zeros((r, c));
        let v = |n| Array1::zeros(n);
        LayerParams {
            wq: m(d, d),
            bq: v(d),
            wk: m(d, d),
            bk: v(d),
            wv: m(d, d),
            bv: v(d),
            wo: m(d, d),
            bo: v(d),
            ln1_gain: v(d),
            ln1_bias: v(d),
            w1: m(d, f),
            b1: v(f),
            w2: m(f, d),
            b2: v(d),
            ln2_gain: v(d),
            ln2_bias: v(d),
        }
    }

    fn shapes(&self) -> [Vec<usize>; 16] {
        [
            self.wq.shape().to_vec(),
            self.bq.shape().to_vec(),
            self.wk.shape().to_vec(),
            self.bk.shape().to_vec(),
            self.wv.shape().to_vec(),
            self.bv.shape().to_vec(),
            self.wo.shape().to_vec(),
            self.bo.shape().to_vec(),
            self.ln1_gain.shape().to_vec(),
            self.ln1_bias.shape().to_vec(),
            self.w1.shape().to_vec(),
            self.b1.shape().to_vec(),
            self.w2.shape().to_vec(),
            self.b2.shape().to_vec(),
            self.ln2_gain.shape().to_vec(),
            self.ln2_bias.shape().to_vec(),
        ]
    }

    fn slices(&self) -> [&[f64]; 16] {
        fn s2(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn s1(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        [
            s2(&self.wq),
            s1(&self.bq),
            s2(&self.wk),
            s1(&self.bk),
            s2(&self.wv),
            s1(&self.bv),
            s2(&self.wo),
            s1(&self.bo),
            s1(&self.ln1_gain),
            s1(&self.ln1_bias),
            s2(&self.w1),
            s1(&self.b1),
            s2(&self.w2),
            s1(&self.b2),
            s1(&self.ln2_gain),
            s1(&self.ln2_bias),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 16] {
        let LayerParams {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            ln1_gain,
            ln1_bias,
            w1,
            b1,
            w2,
            b2,
            ln2_gain,
            ln2_bias,
        } = self;
        fn s2(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        fn s1(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        [
            s2(wq),
            s1(bq),
            s2(wk),
            s1(bk),
            s2(wv),
            s1(bv),
            s2(wo),
            s1(bo),
            s1(ln1_gain),
            s1(ln1_bias),
            s2(w1),
            s1(b1),
            s2(w2),
            s1(b2),
            s1(ln2_gain),
            s1(ln2_bias),
        ]
    }
}

/// All trainable parameters. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams {
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

/// Name, shape and weight-decay flag of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub decay: bool,
}

impl TransformerParams {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        TransformerParams {
            token_embedding: Array2::zeros((cfg.vocab_size, d)),
            position_embedding: Array2::zeros((cfg.max_len, d)),
            layers: (0..cfg.num_layers)
                .map(|_| LayerParams::zeros(d, f))
                .collect(),
            head_weight: Array2::zeros((d, cfg.num_classes)),
            head_bias: Array1::zeros(cfg.num_classes),
        }
    }

    /// Tensor metadata in the fixed storage order: token embedding, position
    /// embedding, each layer's sixteen tensors, head weight, head bias.
    pub fn tensor_meta(&self) -> Vec<TensorMeta> {
        let mut out = vec![
            TensorMeta {
                name: "embeddings.token".into(),
                shape: self.token_embedding.shape().to_vec(),
                decay: true,
            },
            TensorMeta {
                name: "embeddings.position".into(),
                shape: self.position_embedding.shape().to_vec(),
                decay: true,
            },
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for ((name, decay), shape) in LAYER_TENSORS.iter().zip(layer.shapes()) {
                out.push(TensorMeta {
                    name: format!("layers.{i}.{name}"),
                    shape,
                    decay: *decay,
                });
            }
        }
        out.push(TensorMeta {
            name: "head.weight".into(),
            shape: self.head_weight.shape().to_vec(),
            decay: true,
        });
        out.push(TensorMeta {
            name: "head.bias".into(),
            shape: self.head_bias.shape().to_vec(),
            decay: false,
        });
        out
    }

    /// Flat views in the order of [`tensor_meta`](Self::tensor_meta).
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.token_embedding.as_slice().expect("standard layout"),
            self.position_embedding.as_slice().expect("standard layout"),
        ];
        for layer in &self.layers {
            out.extend(layer.slices());
        }
        out.push(self.head_weight.as_slice().expect("standard layout"));
        out.push(self.head_bias.as_slice().expect("standard layout"));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let TransformerParams {
            token_embedding,
            position_embedding,
            layers,
            head_weight,
            head_bias,
        } = self;
        let mut out: Vec<&mut [f64]> = vec![
            token_embedding.as_slice_mut().expect("standard layout"),
            position_embedding.as_slice_mut().expect("standard layout"),
        ];
        for layer in layers.iter_mut() {
            out.extend(layer.slices_mut());
        }
        out.push(head_weight.as_slice_mut().expect("standard layout"));
        out.push(head_bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Checks every tensor shape against `cfg` and that all values are finite.
    pub fn validate(&self, cfg: &EncoderConfig) -> Result<()> {
        let expected = TransformerParams::zeros(cfg).tensor_meta();
        let actual = self.tensor_meta();
        if expected.len() != actual.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                actual.len()
            )));
        }
        for (e, a) in expected.iter().zip(&actual) {
            if e.shape != a.shape {
                return Err(Error::InvalidInput(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    e.name, a.shape, e.shape
                )));
            }
        }
        if !self.is_finite() {
            return Err(Error::InvalidInput(
                "parameters contain non-finite values".into(),
            ));
        }
        Ok(())
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &TransformerParams) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.slices_mut() {
            a.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Normal(0, 0.02) for weight matrices and embeddings, ones for layer-norm
/// gains, zeros for every bias.
pub fn init_params(cfg: &EncoderConfig, seed: u64) -> Result<TransformerParams> {
    cfg.validate()?;
    let mut params = TransformerParams::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let meta = params.tensor_meta();
    for (m, slice) in meta.iter().zip(params.slices_mut()) {
        if m.name.ends_with(".gain") {
            slice.fill(1.0);
        } else if m.shape.len() == 2 {
            slice.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
    }
    Ok(params)
}
