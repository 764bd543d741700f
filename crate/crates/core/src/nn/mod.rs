//! Minimal dense/convolutional network engine: forward, reverse-mode
//! gradients, and AdaDelta. Just enough to train the window classifier and
//! the MLP baseline, with a 64-bit mode for finite-difference verification.
//!
//! Activations flow as `(batch, channels, length)` arrays; dense layers
//! flatten their input and emit `(batch, units, 1)`. The model head splits the
//! final five values into a 3-way softmax and two unconstrained regression
//! outputs.

pub mod gradcheck;
mod init;
mod layers;
mod optim;

pub use init::orthogonal;
pub use layers::{BatchNorm, Conv, Dense, Dropout, MaxPool, Relu};
pub use optim::AdaDelta;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Element type of the engine: f32 for training/inference, f64 for gradient
/// verification.
pub trait Scalar:
    ndarray::NdFloat + ndarray::LinalgScalar + num_traits::FromPrimitive + num_traits::ToPrimitive
{
}
impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn cast<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 -> scalar")
}

/// One layer of a model description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Valid-padding 1-D convolution.
    Conv { kernel: usize, out_channels: usize },
    MaxPool { pool: usize },
    BatchNorm,
    Dropout { rate: f64 },
    Relu,
    /// Fully connected layer over the flattened input.
    Dense { units: usize },
}

/// Full model description. The last parametric layer is the output layer and
/// must produce exactly `classes + regression` values per example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_len: usize,
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
    pub regression: usize,
}

impl ModelSpec {
    /// The window CNN: Conv5@64, Conv5@64, Max2, Conv5@128, Conv3@128, Max2,
    /// Conv5@256, Conv3@5, with batch-norm, ReLU and dropout 0.25 between the
    /// convolutions. Valid padding maps length 48 to length 1.
    pub fn default_cnn(input_len: usize) -> Self {
        let mut layers = Vec::new();
        let convs: [(usize, usize); 6] = [(5, 64), (5, 64), (5, 128), (3, 128), (5, 256), (3, 5)];
        for (idx, &(kernel, out_channels)) in convs.iter().enumerate() {
            layers.push(LayerSpec::Conv {
                kernel,
                out_channels,
            });
            if idx < convs.len() - 1 {
                layers.push(LayerSpec::BatchNorm);
                layers.push(LayerSpec::Relu);
                layers.push(LayerSpec::Dropout { rate: 0.25 });
            }
            // Pooling after the second and fourth convolution.
            if idx == 1 || idx == 3 {
                layers.push(LayerSpec::MaxPool { pool: 2 });
            }
        }
        ModelSpec {
            input_len,
            layers,
            classes: 3,
            regression: 2,
        }
    }

    /// Three hidden dense layers of 2048 units with batch-norm, ReLU and
    /// dropout, sharing the CNN's five-value output head.
    pub fn mlp_baseline(input_len: usize) -> Self {
        let mut layers = Vec::new();
        for _ in 0..3 {
            layers.push(LayerSpec::Dense { units: 2048 });
            layers.push(LayerSpec::BatchNorm);
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::Dropout { rate: 0.25 });
        }
        layers.push(LayerSpec::Dense { units: 5 });
        ModelSpec {
            input_len,
            layers,
            classes: 3,
            regression: 2,
        }
    }

    /// Activation shape `(channels, length)` after every layer.
    pub fn shape_chain(&self) -> Result<Vec<(usize, usize)>, Error> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = (1usize, self.input_len);
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match *layer {
                LayerSpec::Conv {
                    kernel,
                    out_channels,
                } => {
                    if cur.1 < kernel {
                        return Err(Error::ShapeMismatch {
                            layer: format!("conv[{i}]"),
                            expected: format!("length >= {kernel}"),
                            actual: format!("{cur:?}"),
                        });
                    }
                    (out_channels, cur.1 - kernel + 1)
                }
                LayerSpec::MaxPool { pool } => {
                    if pool == 0 || cur.1 < pool {
                        return Err(Error::ShapeMismatch {
                            layer: format!("maxpool[{i}]"),
                            expected: format!("length >= {pool}"),
                            actual: format!("{cur:?}"),
                        });
                    }
                    (cur.0, cur.1 / pool)
                }
                LayerSpec::Dense { units } => (units, 1),
                LayerSpec::BatchNorm | LayerSpec::Dropout { .. } | LayerSpec::Relu => cur,
            };
            shapes.push(cur);
        }
        if cur.0 * cur.1 != self.classes + self.regression {
            return Err(Error::ShapeMismatch {
                layer: "head".into(),
                expected: format!("{} values per example", self.classes + self.regression),
                actual: format!("{cur:?}"),
            });
        }
        Ok(shapes)
    }

    /// Index of the output layer (the last parametric one).
    fn output_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Conv { .. } | LayerSpec::Dense { .. }))
    }
}

/// Class posterior for one window: `(background, wheelchair, walker)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassProbs {
    pub background: f64,
    pub wheelchair: f64,
    pub walker: f64,
}

impl ClassProbs {
    pub fn object_classes(&self) -> [f64; 2] {
        [self.wheelchair, self.walker]
    }
}

/// Per-window network output.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: ClassProbs,
    /// Regressed offset in the window's local frame, meters.
    pub offset: (f64, f64),
}

enum Layer<F: Scalar> {
    Conv(Conv<F>),
    MaxPool(MaxPool<F>),
    BatchNorm(BatchNorm<F>),
    Dropout(Dropout<F>),
    Relu(Relu<F>),
    Dense(Dense<F>),
}

/// A materialized model with parameters, caches, and dropout rng.
pub struct Model<F: Scalar> {
    spec: ModelSpec,
    layers: Vec<Layer<F>>,
    rng: ChaCha8Rng,
}

impl<F: Scalar> Model<F> {
    /// Build and initialize: hidden weights scaled-orthogonal, biases zero,
    /// output layer weights and bias exactly zero. Deterministic per seed.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self, Error> {
        spec.shape_chain()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let output_idx = spec.output_layer();
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut cur = (1usize, spec.input_len);
        for (i, l) in spec.layers.iter().enumerate() {
            let zero_init = Some(i) == output_idx;
            let layer = match *l {
                LayerSpec::Conv {
                    kernel,
                    out_channels,
                } => {
                    let conv = Conv::new(cur.0, out_channels, kernel, zero_init, &mut rng);
                    cur = (out_channels, cur.1 - kernel + 1);
                    Layer::Conv(conv)
                }
                LayerSpec::MaxPool { pool } => {
                    cur = (cur.0, cur.1 / pool);
                    Layer::MaxPool(MaxPool::new(pool))
                }
                LayerSpec::BatchNorm => Layer::BatchNorm(BatchNorm::new(cur.0)),
                LayerSpec::Dropout { rate } => Layer::Dropout(Dropout::new(rate)),
                LayerSpec::Relu => Layer::Relu(Relu::new()),
                LayerSpec::Dense { units } => {
                    let dense = Dense::new(cur.0 * cur.1, units, zero_init, &mut rng);
                    cur = (units, 1);
                    Layer::Dense(dense)
                }
            };
            layers.push(layer);
        }
        Ok(Model {
            spec: spec.clone(),
            layers,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Reseed the dropout rng. Verification code uses this to make repeated
    /// training-mode forward passes reproducible.
    pub fn set_rng_seed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Raw forward pass. Returns `(logits, offsets)` as `(batch, classes)` and
    /// `(batch, regression)`. Batch statistics and dropout are active only
    /// when `train` is set.
    pub fn forward(&mut self, input: &Array2<F>, train: bool) -> Result<(Array2<F>, Array2<F>), Error> {
        let (batch, len) = input.dim();
        if len != self.spec.input_len {
            return Err(Error::ShapeMismatch {
                layer: "input".into(),
                expected: format!("window length {}", self.spec.input_len),
                actual: format!("{len}"),
            });
        }
        let mut x = input
            .to_owned()
            .into_shape_with_order((batch, 1, len))
            .expect("input reshape");
        for layer in &mut self.layers {
            x = match layer {
                Layer::Conv(l) => l.forward(x),
                Layer::MaxPool(l) => l.forward(x),
                Layer::BatchNorm(l) => l.forward(x, train),
                Layer::Dropout(l) => l.forward(x, train, &mut self.rng),
                Layer::Relu(l) => l.forward(x),
                Layer::Dense(l) => l.forward(x),
            };
        }
        let (b, c, l) = x.dim();
        let out = x
            .into_shape_with_order((b, c * l))
            .expect("head reshape");
        debug_assert_eq!(out.ncols(), self.spec.classes + self.spec.regression);
        let logits = out.slice(ndarray::s![.., ..self.spec.classes]).to_owned();
        let offsets = out.slice(ndarray::s![.., self.spec.classes..]).to_owned();
        Ok((logits, offsets))
    }

    /// Backpropagate head gradients through the whole stack, filling every
    /// parameter gradient (overwrite semantics). Requires a preceding
    /// training-mode forward pass.
    pub fn backward(&mut self, dlogits: &Array2<F>, doffsets: &Array2<F>) {
        let batch = dlogits.nrows();
        let total = self.spec.classes + self.spec.regression;
        let mut dout = Array2::<F>::zeros((batch, total));
        dout.slice_mut(ndarray::s![.., ..self.spec.classes])
            .assign(dlogits);
        dout.slice_mut(ndarray::s![.., self.spec.classes..])
            .assign(doffsets);
        let (c, l) = *self.shape_chain_cached().last().expect("nonempty model");
        let mut dx = dout
            .into_shape_with_order((batch, c, l))
            .expect("head grad reshape");
        for layer in self.layers.iter_mut().rev() {
            dx = match layer {
                Layer::Conv(layer) => layer.backward(dx),
                Layer::MaxPool(layer) => layer.backward(dx),
                Layer::BatchNorm(layer) => layer.backward(dx),
                Layer::Dropout(layer) => layer.backward(dx),
                Layer::Relu(layer) => layer.backward(dx),
                Layer::Dense(layer) => layer.backward(dx),
            };
        }
    }

    fn shape_chain_cached(&self) -> Vec<(usize, usize)> {
        self.spec.shape_chain().expect("validated at init")
    }

    /// Inference helper: softmax head, per-window predictions.
    pub fn predict(&mut self, input: &Array2<F>) -> Result<Vec<Prediction>, Error> {
        let (logits, offsets) = self.forward(input, false)?;
        Ok(predictions_from_head(&logits, &offsets))
    }

    /// Visit every trainable parameter tensor with its gradient.
    pub fn visit_params(&mut self, mut f: impl FnMut(usize, &mut [F], &mut [F])) {
        let mut idx = 0;
        for layer in &mut self.layers {
            let pairs: Vec<(&mut [F], &mut [F])> = match layer {
                Layer::Conv(l) => l.params(),
                Layer::Dense(l) => l.params(),
                Layer::BatchNorm(l) => l.params(),
                _ => Vec::new(),
            };
            for (p, g) in pairs {
                f(idx, p, g);
                idx += 1;
            }
        }
    }

    /// Non-trainable state (batch-norm running statistics), for checkpoints.
    pub fn visit_running_stats(&mut self, mut f: impl FnMut(usize, &mut [F])) {
        let mut idx = 0;
        for layer in &mut self.layers {
            if let Layer::BatchNorm(l) = layer {
                for s in l.running_stats() {
                    f(idx, s);
                    idx += 1;
                }
            }
        }
    }

    /// Total number of trainable scalars.
    pub fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(|_, p, _| n += p.len());
        n
    }
}

/// Softmax + offset extraction from raw head outputs.
pub fn predictions_from_head<F: Scalar>(
    logits: &Array2<F>,
    offsets: &Array2<F>,
) -> Vec<Prediction> {
    let mut out = Vec::with_capacity(logits.nrows());
    for (lrow, orow) in logits.outer_iter().zip(offsets.outer_iter()) {
        let l: Vec<f64> = lrow.iter().map(|v| v.to_f64().unwrap()).collect();
        let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.push(Prediction {
            probs: ClassProbs {
                background: exps[0] / z,
                wheelchair: exps[1] / z,
                walker: exps[2] / z,
            },
            offset: (
                orow[0].to_f64().unwrap(),
                orow[1].to_f64().unwrap(),
            ),
        });
    }
    out
}

/// Batch of training targets aligned with the forward batch.
#[derive(Debug, Clone)]
pub struct TargetBatch {
    /// Softmax target index per example (0 background, 1 wheelchair, 2 walker).
    pub class_idx: Vec<usize>,
    /// Local-frame offset targets, meters.
    pub offsets: Vec<(f64, f64)>,
    /// Regression mask; unmasked offsets carry no gradient.
    pub mask: Vec<bool>,
}

/// Loss = mean negative log-likelihood + root-mean-square regression error
/// over the masked-in examples (0 when none are masked in). Returns the loss
/// and the head gradients.
pub fn loss_and_grads<F: Scalar>(
    logits: &Array2<F>,
    offsets: &Array2<F>,
    targets: &TargetBatch,
) -> (f64, Array2<F>, Array2<F>) {
    let batch = logits.nrows();
    assert!(batch > 0 && targets.class_idx.len() == batch);
    let mut dlogits = Array2::<F>::zeros(logits.raw_dim());
    let mut doffsets = Array2::<F>::zeros(offsets.raw_dim());

    let mut nll = 0.0;
    for (i, lrow) in logits.outer_iter().enumerate() {
        let l: Vec<f64> = lrow.iter().map(|v| v.to_f64().unwrap()).collect();
        let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let y = targets.class_idx[i];
        nll += z.ln() + m - l[y];
        for (j, &e) in exps.iter().enumerate() {
            let p = e / z;
            let grad = (p - if j == y { 1.0 } else { 0.0 }) / batch as f64;
            dlogits[[i, j]] = cast(grad);
        }
    }
    nll /= batch as f64;

    let masked: Vec<usize> = (0..batch).filter(|&i| targets.mask[i]).collect();
    let mut rmse = 0.0;
    if !masked.is_empty() {
        let mut sse = 0.0;
        for &i in &masked {
            let ex = offsets[[i, 0]].to_f64().unwrap() - targets.offsets[i].0;
            let ey = offsets[[i, 1]].to_f64().unwrap() - targets.offsets[i].1;
            sse += ex * ex + ey * ey;
        }
        rmse = (sse / masked.len() as f64).sqrt();
        if rmse > 1e-12 {
            let denom = masked.len() as f64 * rmse;
            for &i in &masked {
                let ex = offsets[[i, 0]].to_f64().unwrap() - targets.offsets[i].0;
                let ey = offsets[[i, 1]].to_f64().unwrap() - targets.offsets[i].1;
                doffsets[[i, 0]] = cast(ex / denom);
                doffsets[[i, 1]] = cast(ey / denom);
            }
        }
    }

    (nll + rmse, dlogits, doffsets)
}

/// Convenience for tests and the optimizer: flatten/restore all parameters.
pub fn get_param_vector<F: Scalar>(model: &mut Model<F>) -> Vec<F> {
    let mut v = Vec::new();
    model.visit_params(|_, p, _| v.extend_from_slice(p));
    v
}

pub fn set_param_vector<F: Scalar>(model: &mut Model<F>, values: &[F]) {
    let mut off = 0;
    model.visit_params(|_, p, _| {
        p.copy_from_slice(&values[off..off + p.len()]);
        off += p.len();
    });
    assert_eq!(off, values.len());
}

pub fn get_grad_vector<F: Scalar>(model: &mut Model<F>) -> Vec<F> {
    let mut v = Vec::new();
    model.visit_params(|_, _, g| v.extend_from_slice(g));
    v
}

#[allow(unused)]
fn assert_send<F: Scalar>(m: Model<F>) -> impl Send {
    m
}

#[cfg(test)]
mod tests;
