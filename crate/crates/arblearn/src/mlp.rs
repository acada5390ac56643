//! Price predictor: a small fully connected network trained with manual
//! backpropagation.
//!
//! The network maps a flattened look-back window of market features to one
//! reward vector for the upcoming horizon:
//!
//! ```text
//!     x  (L*F)  ->  W1 x + b1  -> relu ->  W2 . + b2  -> relu ->  W3 . + b3  (T)
//! ```
//!
//! Everything is `f64`. The ReLU subgradient at exactly zero is taken as
//! zero. Weights are initialized Glorot-uniform (`+/- sqrt(6/(fan_in +
//! fan_out))`) with zero biases, and updates use bias-corrected Adam.
//! Feature standardization is per channel; the statistics are computed on
//! the training set and stored with the model so inference applies the same
//! transform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden width of both internal layers.
pub const HIDDEN_WIDTH: usize = 96;

/// Adam defaults: learning rate, first and second moment decay, and the
/// denominator floor.
pub const ADAM_LR: f64 = 0.01;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// A look-back window of `rows` time steps by `cols` feature channels,
/// stored row-major (step-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl FeatureWindow {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                what: "feature window",
                expected: format!("{rows}x{cols}"),
                actual: format!("{} values", values.len()),
            });
        }
        Ok(FeatureWindow { rows, cols, values })
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }
}

/// Layer sizes of the three-layer network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl LayerDims {
    /// Standard predictor shape: flattened window in, horizon out.
    pub fn new(input: usize, output: usize) -> Self {
        LayerDims {
            input,
            hidden: HIDDEN_WIDTH,
            output,
        }
    }
}

/// Network parameters. The same container holds parameter gradients and
/// Adam moments, since they share every shape. Weight matrices are row-major
/// with one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub dims: LayerDims,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(dims: LayerDims) -> Self {
        MlpParams {
            dims,
            w1: vec![0.0; dims.hidden * dims.input],
            b1: vec![0.0; dims.hidden],
            w2: vec![0.0; dims.hidden * dims.hidden],
            b2: vec![0.0; dims.hidden],
            w3: vec![0.0; dims.output * dims.hidden],
            b3: vec![0.0; dims.output],
        }
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + self.b3.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_consistent(&self) -> Result<()> {
        let d = self.dims;
        let shapes = [
            ("w1", self.w1.len(), d.hidden * d.input),
            ("b1", self.b1.len(), d.hidden),
            ("w2", self.w2.len(), d.hidden * d.hidden),
            ("b2", self.b2.len(), d.hidden),
            ("w3", self.w3.len(), d.output * d.hidden),
            ("b3", self.b3.len(), d.output),
        ];
        for (_, actual, expected) in shapes {
            if actual != expected {
                return Err(Error::ShapeMismatch {
                    what: "network parameters",
                    expected: format!("{:?}", d),
                    actual: format!("tensor with {actual} values, expected {expected}"),
                });
            }
        }
        Ok(())
    }

    /// Scales every entry in place; used when averaging batch gradients.
    pub fn scale(&mut self, factor: f64) {
        for t in [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ] {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Adds `other` entrywise; shapes must match.
    pub fn add_assign(&mut self, other: &MlpParams) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch {
                what: "gradient accumulation",
                expected: format!("{:?}", self.dims),
                actual: format!("{:?}", other.dims),
            });
        }
        for (mine, theirs) in [
            (&mut self.w1, &other.w1),
            (&mut self.b1, &other.b1),
            (&mut self.w2, &other.w2),
            (&mut self.b2, &other.b2),
            (&mut self.w3, &other.w3),
            (&mut self.b3, &other.b3),
        ] {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
        Ok(())
    }
}

/// Glorot-uniform initialization with zero biases, deterministic per seed.
pub fn init_params(seed: u64, dims: LayerDims) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = MlpParams::zeros(dims);
    let fill = |w: &mut Vec<f64>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in w.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
    };
    fill(&mut params.w1, dims.input, dims.hidden, &mut rng);
    fill(&mut params.w2, dims.hidden, dims.hidden, &mut rng);
    fill(&mut params.w3, dims.hidden, dims.output, &mut rng);
    params
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out_dim: usize, in_dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_dim);
    for i in 0..out_dim {
        let row = &w[i * in_dim..(i + 1) * in_dim];
        let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
        out.push(dot + b[i]);
    }
    out
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

fn check_window(params: &MlpParams, window: &FeatureWindow) -> Result<()> {
    params.check_consistent()?;
    if window.rows * window.cols != params.dims.input {
        return Err(Error::ShapeMismatch {
            what: "feature window",
            expected: format!("{} inputs", params.dims.input),
            actual: format!("{}x{}", window.rows, window.cols),
        });
    }
    Ok(())
}

/// Deterministic forward pass; returns the predicted reward vector.
pub fn forward(params: &MlpParams, window: &FeatureWindow) -> Result<Vec<f64>> {
    check_window(params, window)?;
    let d = params.dims;
    let z1 = affine(&params.w1, &params.b1, window.flat(), d.hidden, d.input);
    let a1 = relu(&z1);
    let z2 = affine(&params.w2, &params.b2, &a1, d.hidden, d.hidden);
    let a2 = relu(&z2);
    Ok(affine(&params.w3, &params.b3, &a2, d.output, d.hidden))
}

/// Backpropagation of an upstream gradient (d loss / d output) through the
/// network; returns gradients for every parameter tensor. ReLU passes no
/// gradient where its pre-activation is exactly zero.
pub fn backward(params: &MlpParams, window: &FeatureWindow, upstream: &[f64]) -> Result<MlpParams> {
    check_window(params, window)?;
    let d = params.dims;
    if upstream.len() != d.output {
        return Err(Error::ShapeMismatch {
            what: "upstream gradient",
            expected: format!("{} values", d.output),
            actual: format!("{} values", upstream.len()),
        });
    }

    let x = window.flat();
    let z1 = affine(&params.w1, &params.b1, x, d.hidden, d.input);
    let a1 = relu(&z1);
    let z2 = affine(&params.w2, &params.b2, &a1, d.hidden, d.hidden);
    let a2 = relu(&z2);

    let mut grads = MlpParams::zeros(d);

    // Output layer: dW3 = g a2', db3 = g, then pull g back through W3.
    for i in 0..d.output {
        let g = upstream[i];
        grads.b3[i] = g;
        let row = &mut grads.w3[i * d.hidden..(i + 1) * d.hidden];
        for (slot, a) in row.iter_mut().zip(&a2) {
            *slot = g * a;
        }
    }
    let mut da2 = vec![0.0; d.hidden];
    for i in 0..d.output {
        let g = upstream[i];
        let row = &params.w3[i * d.hidden..(i + 1) * d.hidden];
        for (acc, w) in da2.iter_mut().zip(row) {
            *acc += g * w;
        }
    }

    let dz2: Vec<f64> = da2
        .iter()
        .zip(&z2)
        .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
        .collect();
    for i in 0..d.hidden {
        let g = dz2[i];
        grads.b2[i] = g;
        if g != 0.0 {
            let row = &mut grads.w2[i * d.hidden..(i + 1) * d.hidden];
            for (slot, a) in row.iter_mut().zip(&a1) {
                *slot = g * a;
            }
        }
    }
    let mut da1 = vec![0.0; d.hidden];
    for i in 0..d.hidden {
        let g = dz2[i];
        if g == 0.0 {
            continue;
        }
        let row = &params.w2[i * d.hidden..(i + 1) * d.hidden];
        for (acc, w) in da1.iter_mut().zip(row) {
            *acc += g * w;
        }
    }

    let dz1: Vec<f64> = da1
        .iter()
        .zip(&z1)
        .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
        .collect();
    for i in 0..d.hidden {
        let g = dz1[i];
        grads.b1[i] = g;
        if g != 0.0 {
            let row = &mut grads.w1[i * d.input..(i + 1) * d.input];
            for (slot, xv) in row.iter_mut().zip(x) {
                *slot = g * xv;
            }
        }
    }

    Ok(grads)
}

/// Bias-corrected Adam optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dims: LayerDims, lr: f64) -> Self {
        AdamState {
            m: MlpParams::zeros(dims),
            v: MlpParams::zeros(dims),
            step: 0,
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One Adam update of `params` from `grads`, advancing the step counter.
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut AdamState) -> Result<()> {
    if params.dims != grads.dims || params.dims != state.m.dims {
        return Err(Error::ShapeMismatch {
            what: "adam update",
            expected: format!("{:?}", params.dims),
            actual: format!("grads {:?}, state {:?}", grads.dims, state.m.dims),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    let tensors = [
        (&mut params.w1, &grads.w1, &mut state.m.w1, &mut state.v.w1),
        (&mut params.b1, &grads.b1, &mut state.m.b1, &mut state.v.b1),
        (&mut params.w2, &grads.w2, &mut state.m.w2, &mut state.v.w2),
        (&mut params.b2, &grads.b2, &mut state.m.b2, &mut state.v.b2),
        (&mut params.w3, &grads.w3, &mut state.m.w3, &mut state.v.w3),
        (&mut params.b3, &grads.b3, &mut state.m.b3, &mut state.v.b3),
    ];
    for (w, g, m, v) in tensors {
        for i in 0..w.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Per-channel standardization statistics, fitted on training windows and
/// stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Fits mean and standard deviation per channel over all windows.
    /// Channels with (near) zero variance standardize with a unit scale so
    /// constant features map to zero instead of blowing up.
    pub fn fit<'a>(windows: impl Iterator<Item = &'a FeatureWindow> + Clone) -> Result<Self> {
        let mut iter = windows.clone();
        let first = iter.next().ok_or(Error::InsufficientData {
            needed: 1,
            available: 0,
        })?;
        let cols = first.cols;
        let mut count = 0usize;
        let mut sum = vec![0.0; cols];
        let mut sum_sq = vec![0.0; cols];
        for w in windows {
            if w.cols != cols {
                return Err(Error::ShapeMismatch {
                    what: "normalization input",
                    expected: format!("{cols} channels"),
                    actual: format!("{} channels", w.cols),
                });
            }
            for r in 0..w.rows {
                for c in 0..cols {
                    let v = w.values[r * cols + c];
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
            }
            count += w.rows;
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std: Vec<f64> = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, mu)| {
                let var = (sq / n - mu * mu).max(0.0);
                let sd = var.sqrt();
                if sd < 1e-9 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(NormStats { mean, std })
    }

    /// Standardizes one window channel by channel.
    pub fn apply(&self, window: &FeatureWindow) -> Result<FeatureWindow> {
        if window.cols != self.mean.len() {
            return Err(Error::ShapeMismatch {
                what: "normalization input",
                expected: format!("{} channels", self.mean.len()),
                actual: format!("{} channels", window.cols),
            });
        }
        let mut values = window.values.clone();
        for r in 0..window.rows {
            for c in 0..window.cols {
                let v = &mut values[r * window.cols + c];
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        FeatureWindow::new(window.rows, window.cols, values)
    }
}
