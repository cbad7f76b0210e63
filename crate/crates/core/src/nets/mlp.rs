use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{gemm_nn, gemm_nt, gemm_tn, Matrix, RngStream};

/// Fully connected layer: `y = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    fn he(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| std * rng.standard_gaussian()).collect();
        Self {
            weights: Matrix::from_raw(fan_in, fan_out, w),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        let n = x.rows();
        let out = self.fan_out();
        let mut y = Vec::with_capacity(n * out);
        for _ in 0..n {
            y.extend_from_slice(&self.bias);
        }
        gemm_nn(n, self.fan_in(), out, x.as_slice(), self.weights.as_slice(), &mut y);
        Matrix::from_raw(n, out, y)
    }
}

/// Feed-forward network with ReLU hidden layers and linear (logit) output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    layers: Vec<Dense>,
}

/// Activations kept from a forward pass for backpropagation.
/// `activations[0]` is the input; `activations[i]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub activations: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("trace always holds the input")
    }
}

/// Parameter gradients (one entry per layer) plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
    pub input: Matrix,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.layers.iter().fold(0.0, |m, l| {
            l.bias
                .iter()
                .fold(m.max(l.weights.max_abs()), |m, b| m.max(b.abs()))
        })
    }

    /// Accumulates `other` into `self` (parameters only).
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

impl MlpModel {
    /// He-initialized network with zero biases.
    pub fn new(layer_dims: &[usize], rng: &mut RngStream) -> Result<Self> {
        Self::check_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| Dense::he(w[0], w[1], rng))
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
        })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        Self::check_dims(layer_dims)?;
        let layers = layer_dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
        })
    }

    /// Assembles a model from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidSpec("model needs at least one layer".into()));
        }
        let mut dims = vec![layers[0].fan_in()];
        for l in &layers {
            if l.fan_in() != *dims.last().unwrap() {
                return Err(Error::DimensionMismatch {
                    expected: *dims.last().unwrap(),
                    got: l.fan_in(),
                });
            }
            if l.bias.len() != l.fan_out() {
                return Err(Error::DimensionMismatch {
                    expected: l.fan_out(),
                    got: l.bias.len(),
                });
            }
            if !l.weights.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite("model weights"));
            }
            dims.push(l.fan_out());
        }
        Ok(Self {
            layer_dims: dims,
            layers,
        })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidSpec(format!("bad layer dims {dims:?}")));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Width of the last hidden layer, if there is one.
    pub fn embedding_dim(&self) -> Option<usize> {
        (self.layer_dims.len() >= 3).then(|| self.layer_dims[self.layer_dims.len() - 2])
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: batch.cols(),
            });
        }
        Ok(())
    }

    /// Logits for every row of `batch`.
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut h = batch.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if i < last {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    pub fn forward_trace(&self, batch: &Matrix) -> Result<ForwardTrace> {
        self.check_input(batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.clone());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut h = layer.apply(activations.last().unwrap());
            if i < last {
                relu_in_place(&mut h);
            }
            activations.push(h);
        }
        Ok(ForwardTrace { activations })
    }

    /// Activations of the last hidden layer (after ReLU).
    pub fn penultimate(&self, batch: &Matrix) -> Result<Matrix> {
        if self.layers.len() < 2 {
            return Err(Error::InvalidSpec(
                "penultimate embedding needs at least one hidden layer".into(),
            ));
        }
        self.check_input(batch)?;
        let mut h = batch.clone();
        for layer in &self.layers[..self.layers.len() - 1] {
            h = layer.apply(&h);
            relu_in_place(&mut h);
        }
        Ok(h)
    }

    /// Applies only the output layer to precomputed penultimate embeddings.
    pub fn head(&self, embeddings: &Matrix) -> Result<Matrix> {
        let head = self.layers.last().unwrap();
        if embeddings.cols() != head.fan_in() {
            return Err(Error::DimensionMismatch {
                expected: head.fan_in(),
                got: embeddings.cols(),
            });
        }
        Ok(head.apply(embeddings))
    }

    /// Gradients of `Σ upstream ⊙ forward(batch)` with respect to parameters
    /// and input.
    pub fn backward(&self, batch: &Matrix, upstream: &Matrix) -> Result<Gradients> {
        let trace = self.forward_trace(batch)?;
        self.backward_from(&trace, upstream)
    }

    pub fn backward_from(&self, trace: &ForwardTrace, upstream: &Matrix) -> Result<Gradients> {
        let out = trace.output();
        if upstream.shape() != out.shape() {
            return Err(Error::DimensionMismatch {
                expected: out.rows() * out.cols(),
                got: upstream.rows() * upstream.cols(),
            });
        }
        let n = upstream.rows();
        let mut delta = upstream.clone();
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let a_prev = &trace.activations[i];
            let (fan_in, fan_out) = (layer.fan_in(), layer.fan_out());
            let mut gw = vec![0.0; fan_in * fan_out];
            gemm_tn(fan_in, n, fan_out, a_prev.as_slice(), delta.as_slice(), &mut gw);
            let mut gb = vec![0.0; fan_out];
            for row in delta.row_iter() {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            grads.push(Dense {
                weights: Matrix::from_raw(fan_in, fan_out, gw),
                bias: gb,
            });
            let mut prev = vec![0.0; n * fan_in];
            gemm_nt(n, fan_out, fan_in, delta.as_slice(), layer.weights.as_slice(), &mut prev);
            if i > 0 {
                // ReLU mask from the stored post-activation
                for (p, &a) in prev.iter_mut().zip(a_prev.as_slice()) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = Matrix::from_raw(n, fan_in, prev);
        }
        grads.reverse();
        Ok(Gradients {
            layers: grads,
            input: delta,
        })
    }

    /// Argmax label per row, ties broken towards the lowest index.
    pub fn predict_labels(&self, batch: &Matrix) -> Result<Vec<usize>> {
        Ok(self.forward(batch)?.row_iter().map(argmax).collect())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.rows() * l.weights.cols() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Mutable views over every parameter, layer by layer (weights then bias).
    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }
}

impl Gradients {
    pub(crate) fn params(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut data = Vec::with_capacity(logits.rows() * logits.cols());
    for r in logits.row_iter() {
        data.extend(softmax(r));
    }
    Matrix::from_raw(logits.rows(), logits.cols(), data)
}

/// On-disk model document.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    layer_dims: Vec<usize>,
    /// Row-major `in × out` weight matrix per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

impl MlpModel {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            layer_dims: self.layer_dims.clone(),
            weights: self.layers.iter().map(|l| l.weights.as_slice().to_vec()).collect(),
            biases: self.layers.iter().map(|l| l.bias.clone()).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::FormatVersion(file.format_version));
        }
        let n_layers = file.layer_dims.len().saturating_sub(1);
        if file.weights.len() != n_layers || file.biases.len() != n_layers {
            return Err(Error::InvalidSpec("layer count does not match layer_dims".into()));
        }
        let layers = file
            .layer_dims
            .windows(2)
            .zip(file.weights.into_iter().zip(file.biases))
            .map(|(w, (weights, bias))| {
                Ok(Dense {
                    weights: Matrix::new(w[0], w[1], weights)?,
                    bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Self::from_layers(layers)?;
        if model.layer_dims != file.layer_dims {
            return Err(Error::InvalidSpec("layer_dims do not chain".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
