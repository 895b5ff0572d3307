//! Stacked LSTM sequence classifier.
//!
//! Topology: LSTM(64, full sequence) → dropout → LSTM(32, last state) →
//! dropout → dense(16, tanh) → dropout → dense(4) → softmax. Everything is
//! double precision and deterministic for a fixed seed.

mod adam;
mod lstm;
mod train;

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqdata::{Normalization, SequenceDataset};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use lstm::{lstm_cell_forward, CellParams, LayerCache};
pub use train::{evaluate, train, EpochStats, TrainHistory};

use lstm::{axpy, dot, layer_backward, layer_forward, CellGrads};

pub const MODEL_FORMAT: &str = "echomap-lstm";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layer1_units: usize,
    pub layer2_units: usize,
    pub dense_units: usize,
    /// After layer 1 outputs, after layer 2 final state, after the dense layer.
    pub dropout_rates: [f64; 3],
    pub classes: usize,
    pub input_dim: usize,
    pub seq_len: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub forget_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layer1_units: 64,
            layer2_units: 32,
            dense_units: 16,
            dropout_rates: [0.3, 0.3, 0.2],
            classes: 4,
            input_dim: 1,
            seq_len: 20,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            epochs: 50,
            seed: 0,
            clip_norm: 5.0,
            forget_bias: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.layer1_units == 0 || self.layer2_units == 0 || self.dense_units == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.input_dim == 0 || self.seq_len == 0 {
            return bad("input_dim and seq_len must be positive".into());
        }
        if self.classes != 4 {
            return bad(format!("classes must be 4, got {}", self.classes));
        }
        if let Some(r) = self.dropout_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return bad(format!("dropout rate {r} outside [0, 1)"));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate {} must be positive",
                self.learning_rate
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Position of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub tensors: Vec<(&'static str, Vec<usize>, Range<usize>)>,
    pub total: usize,
}

const NAMES: [&str; 10] = [
    "lstm1.w", "lstm1.u", "lstm1.b", "lstm2.w", "lstm2.u", "lstm2.b", "dense1.w", "dense1.b",
    "dense2.w", "dense2.b",
];

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let (d, h1, h2, k, q) = (
            c.input_dim,
            c.layer1_units,
            c.layer2_units,
            c.dense_units,
            c.classes,
        );
        let shapes = [
            vec![4 * h1, d],
            vec![4 * h1, h1],
            vec![4 * h1],
            vec![4 * h2, h1],
            vec![4 * h2, h2],
            vec![4 * h2],
            vec![k, h2],
            vec![k],
            vec![q, k],
            vec![q],
        ];
        let mut at = 0;
        let tensors = NAMES
            .iter()
            .zip(shapes)
            .map(|(&name, shape)| {
                let len: usize = shape.iter().product();
                at += len;
                (name, shape, at - len..at)
            })
            .collect();
        Layout { tensors, total: at }
    }

    fn range(&self, i: usize) -> Range<usize> {
        self.tensors[i].2.clone()
    }
}

struct Views<'a> {
    l1: CellParams<'a>,
    l2: CellParams<'a>,
    d1_w: &'a [f64],
    d1_b: &'a [f64],
    d2_w: &'a [f64],
    d2_b: &'a [f64],
}

struct GradViews<'a> {
    l1: CellGrads<'a>,
    l2: CellGrads<'a>,
    d1_w: &'a mut [f64],
    d1_b: &'a mut [f64],
    d2_w: &'a mut [f64],
    d2_b: &'a mut [f64],
}

fn split_mut<'a>(layout: &Layout, mut flat: &'a mut [f64]) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(layout.tensors.len());
    for (_, _, r) in &layout.tensors {
        let (head, tail) = flat.split_at_mut(r.len());
        out.push(head);
        flat = tail;
    }
    out
}

/// Inverted dropout masks for one sample: kept units are scaled by 1/(1−r).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub after_lstm1: Vec<f64>,
    pub after_lstm2: Vec<f64>,
    pub after_dense: Vec<f64>,
}

fn draw_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate == 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect()
}

impl DropoutMasks {
    pub fn draw<R: Rng + ?Sized>(c: &ModelConfig, rng: &mut R) -> Self {
        DropoutMasks {
            after_lstm1: draw_mask(c.seq_len * c.layer1_units, c.dropout_rates[0], rng),
            after_lstm2: draw_mask(c.layer2_units, c.dropout_rates[1], rng),
            after_dense: draw_mask(c.dense_units, c.dropout_rates[2], rng),
        }
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Vec<f64>,
    l1: LayerCache,
    a1: Vec<f64>,
    l2: LayerCache,
    a2: Vec<f64>,
    d1: Vec<f64>,
    a3: Vec<f64>,
    masks: Option<DropoutMasks>,
    pub probs: Vec<f64>,
}

pub enum Mode<'a, R: Rng + ?Sized> {
    Train(&'a mut R),
    Infer,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy `−ln p[label]` with `p` clamped at 1e-12.
pub fn loss(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(1e-12).ln()
}

pub fn batch_loss(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    probs
        .iter()
        .zip(labels)
        .map(|(p, &l)| loss(p, l))
        .sum::<f64>()
        / probs.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<f64>,
    pub normalization: Option<Normalization>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub confidence: f64,
    pub probs: [f64; 4],
}

impl Model {
    /// Uniform ±1/√fan_in weights, zero biases, forget-gate bias from config.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![0.0; layout.total];
        for (name, shape, r) in &layout.tensors {
            if name.ends_with(".b") {
                continue;
            }
            let bound = 1.0 / (shape[1] as f64).sqrt();
            for p in &mut params[r.clone()] {
                *p = rng.random_range(-bound..bound);
            }
        }
        for (i, h) in [(2, config.layer1_units), (5, config.layer2_units)] {
            let r = layout.range(i);
            params[r.start + h..r.start + 2 * h].fill(config.forget_bias);
        }
        Ok(Model {
            config,
            params,
            normalization: None,
        })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn views(&self) -> Views<'_> {
        let layout = self.layout();
        let c = &self.config;
        let p = |i: usize| &self.params[layout.range(i)];
        Views {
            l1: CellParams {
                input: c.input_dim,
                hidden: c.layer1_units,
                w: p(0),
                u: p(1),
                b: p(2),
            },
            l2: CellParams {
                input: c.layer1_units,
                hidden: c.layer2_units,
                w: p(3),
                u: p(4),
                b: p(5),
            },
            d1_w: p(6),
            d1_b: p(7),
            d2_w: p(8),
            d2_b: p(9),
        }
    }

    /// Mutable access to one named tensor.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let layout = self.layout();
        let (_, _, r) = layout.tensors.iter().find(|t| t.0 == name)?;
        Some(&mut self.params[r.clone()])
    }

    fn check_input(&self, seq: &[f64]) -> Result<()> {
        let want = self.config.seq_len * self.config.input_dim;
        if seq.len() != want {
            return Err(Error::ShapeMismatch {
                expected: format!("sequence of {want} values"),
                actual: seq.len().to_string(),
            });
        }
        if seq.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "sequence contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    /// Forward pass keeping activations. `masks = None` is inference.
    pub fn forward_with_cache(
        &self,
        seq: &[f64],
        masks: Option<DropoutMasks>,
    ) -> Result<ForwardCache> {
        self.check_input(seq)?;
        let v = self.views();
        let c = &self.config;
        let t = c.seq_len;
        let apply = |x: &[f64], m: Option<&Vec<f64>>| -> Vec<f64> {
            match m {
                Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
                None => x.to_vec(),
            }
        };

        let l1 = layer_forward(&v.l1, seq, t);
        let a1 = apply(l1.outputs(), masks.as_ref().map(|m| &m.after_lstm1));
        let l2 = layer_forward(&v.l2, &a1, t);
        let a2 = apply(l2.last_h(), masks.as_ref().map(|m| &m.after_lstm2));
        let d1: Vec<f64> = (0..c.dense_units)
            .map(|j| {
                (v.d1_b[j] + dot(&v.d1_w[j * c.layer2_units..(j + 1) * c.layer2_units], &a2)).tanh()
            })
            .collect();
        let a3 = apply(&d1, masks.as_ref().map(|m| &m.after_dense));
        let logits: Vec<f64> = (0..c.classes)
            .map(|j| v.d2_b[j] + dot(&v.d2_w[j * c.dense_units..(j + 1) * c.dense_units], &a3))
            .collect();
        Ok(ForwardCache {
            x: seq.to_vec(),
            l1,
            a1,
            l2,
            a2,
            d1,
            a3,
            masks,
            probs: softmax(&logits),
        })
    }

    /// Class probabilities. Train mode draws fresh dropout masks.
    pub fn forward<R: Rng + ?Sized>(&self, seq: &[f64], mode: Mode<'_, R>) -> Result<Vec<f64>> {
        let masks = match mode {
            Mode::Train(rng) => Some(DropoutMasks::draw(&self.config, rng)),
            Mode::Infer => None,
        };
        Ok(self.forward_with_cache(seq, masks)?.probs)
    }

    pub fn infer(&self, seq: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_with_cache(seq, None)?.probs)
    }

    /// Gradient of one sample's loss, added into `grad` after scaling by `scale`.
    pub(crate) fn backward_one(
        &self,
        cache: &ForwardCache,
        label: usize,
        scale: f64,
        grad: &mut [f64],
    ) {
        let v = self.views();
        let c = &self.config;
        let layout = self.layout();
        let mut parts = split_mut(&layout, grad).into_iter();
        let mut next = || parts.next().expect("layout has ten tensors");
        let (w1, u1, b1, w2, u2, b2) = (next(), next(), next(), next(), next(), next());
        let mut g = GradViews {
            l1: CellGrads {
                w: w1,
                u: u1,
                b: b1,
            },
            l2: CellGrads {
                w: w2,
                u: u2,
                b: b2,
            },
            d1_w: next(),
            d1_b: next(),
            d2_w: next(),
            d2_b: next(),
        };

        let (h1, h2, k) = (c.layer1_units, c.layer2_units, c.dense_units);
        let dlogits: Vec<f64> = cache
            .probs
            .iter()
            .enumerate()
            .map(|(j, p)| scale * (p - if j == label { 1.0 } else { 0.0 }))
            .collect();

        let mut da3 = vec![0.0; k];
        for (j, &dz) in dlogits.iter().enumerate() {
            g.d2_b[j] += dz;
            axpy(&mut g.d2_w[j * k..(j + 1) * k], dz, &cache.a3);
            axpy(&mut da3, dz, &v.d2_w[j * k..(j + 1) * k]);
        }
        let mut da2 = vec![0.0; h2];
        for j in 0..k {
            let m = cache.masks.as_ref().map_or(1.0, |m| m.after_dense[j]);
            let dz = da3[j] * m * (1.0 - cache.d1[j] * cache.d1[j]);
            if dz == 0.0 {
                continue;
            }
            g.d1_b[j] += dz;
            axpy(&mut g.d1_w[j * h2..(j + 1) * h2], dz, &cache.a2);
            axpy(&mut da2, dz, &v.d1_w[j * h2..(j + 1) * h2]);
        }
        let t = c.seq_len;
        let mut dh2 = vec![0.0; t * h2];
        for j in 0..h2 {
            dh2[(t - 1) * h2 + j] = da2[j] * cache.masks.as_ref().map_or(1.0, |m| m.after_lstm2[j]);
        }
        let mut da1 = layer_backward(&v.l2, &cache.l2, &cache.a1, &dh2, &mut g.l2);
        if let Some(m) = &cache.masks {
            da1.iter_mut()
                .zip(&m.after_lstm1)
                .for_each(|(d, m)| *d *= m);
        }
        debug_assert_eq!(da1.len(), t * h1);
        layer_backward(&v.l1, &cache.l1, &cache.x, &da1, &mut g.l1);
    }

    /// Gradient of the mean loss over the batch. Per-sample gradients run in
    /// parallel and are summed in input order.
    pub fn backward(&self, caches: &[ForwardCache], labels: &[usize]) -> Result<Vec<f64>> {
        if caches.is_empty() {
            return Err(Error::MissingCache);
        }
        if caches.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", caches.len()),
                actual: labels.len().to_string(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= self.config.classes) {
            return Err(Error::InvalidInput(format!("label {l} out of range")));
        }
        let scale = 1.0 / caches.len() as f64;
        let n = self.params.len();
        let per_sample: Vec<Vec<f64>> = caches
            .par_iter()
            .zip(labels.par_iter())
            .map(|(cache, &label)| {
                let mut g = vec![0.0; n];
                self.backward_one(cache, label, scale, &mut g);
                g
            })
            .collect();
        let mut total = vec![0.0; n];
        for g in &per_sample {
            axpy(&mut total, 1.0, g);
        }
        Ok(total)
    }

    /// Label and confidence for one raw (already normalized) sequence.
    pub fn predict_one(&self, seq: &[f64]) -> Result<Prediction> {
        let p = self.infer(seq)?;
        let mut label = 0;
        for j in 1..p.len() {
            if p[j] > p[label] {
                label = j;
            }
        }
        Ok(Prediction {
            label,
            confidence: p[label],
            probs: [p[0], p[1], p[2], p[3]],
        })
    }

    /// Predictions for a normalized dataset. The dataset must carry the same
    /// normalization the model was trained with.
    pub fn predict(&self, ds: &SequenceDataset) -> Result<Vec<Prediction>> {
        let model_fp = self.normalization.map(|n| n.fingerprint);
        let input_fp = ds.normalization.map(|n| n.fingerprint);
        if model_fp != input_fp {
            return Err(Error::FingerprintMismatch {
                model: model_fp.unwrap_or(0),
                input: input_fp.unwrap_or(0),
            });
        }
        self.predict_batch(
            ds.sequences
                .iter()
                .map(|s| s.values.as_slice())
                .collect::<Vec<_>>()
                .as_slice(),
        )
    }

    /// Normalizes raw kHz sequences with the stored parameters, then predicts.
    pub fn predict_raw(&self, raw: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        let norm = self.normalization.unwrap_or_else(Normalization::identity);
        let scaled: Vec<Vec<f64>> = raw.iter().map(|s| norm.apply(s)).collect();
        self.predict_batch(&scaled.iter().map(Vec::as_slice).collect::<Vec<_>>())
    }

    pub fn predict_batch(&self, seqs: &[&[f64]]) -> Result<Vec<Prediction>> {
        seqs.par_iter().map(|s| self.predict_one(s)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, &ModelFile::from(self))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = crate::io::read_json(path)?;
        file.into_model()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// On-disk model: config, named flat tensors, normalization and seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    seed: u64,
    config: ModelConfig,
    normalization: Option<Normalization>,
    parameters: Vec<Tensor>,
}

impl From<&Model> for ModelFile {
    fn from(m: &Model) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            seed: m.config.seed,
            config: m.config.clone(),
            normalization: m.normalization,
            parameters: m
                .layout()
                .tensors
                .into_iter()
                .map(|(name, shape, r)| Tensor {
                    name: name.into(),
                    shape,
                    values: m.params[r].to_vec(),
                })
                .collect(),
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<Model> {
        if self.format != MODEL_FORMAT {
            return Err(Error::parse(
                "model file",
                format!("unknown format `{}`", self.format),
            ));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::ModelVersion(self.version));
        }
        self.config.validate()?;
        let layout = Layout::new(&self.config);
        let mut params = vec![0.0; layout.total];
        for (name, shape, r) in &layout.tensors {
            let t = self
                .parameters
                .iter()
                .find(|t| t.name == *name)
                .ok_or_else(|| Error::parse("model file", format!("missing tensor `{name}`")))?;
            if &t.shape != shape || t.values.len() != r.len() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name} {shape:?}"),
                    actual: format!("{:?} with {} values", t.shape, t.values.len()),
                });
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "tensor `{name}` has non-finite values"
                )));
            }
            params[r.clone()].copy_from_slice(&t.values);
        }
        Ok(Model {
            config: self.config,
            params,
            normalization: self.normalization,
        })
    }
}

#[cfg(test)]
mod tests;
