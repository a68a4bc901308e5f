//! Feed-forward networks, backpropagation and AdamW.
//!
//! A layer maps a batch `X` (rows are samples) to `X·W + b`, with `W` stored
//! as an `in × out` matrix. Hidden layers use ReLU, the output layer is linear.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Weights and biases of every layer. Also used for gradients and moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamsJson", try_from = "ParamsJson")]
pub struct Params {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Checkpoint form: layer sizes plus row-major `in × out` weight arrays.
#[derive(Serialize, Deserialize)]
struct ParamsJson {
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl From<Params> for ParamsJson {
    fn from(p: Params) -> Self {
        Self {
            sizes: p.sizes(),
            weights: p.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: p.biases.iter().map(|b| b.to_vec()).collect(),
        }
    }
}

impl TryFrom<ParamsJson> for Params {
    type Error = Error;

    fn try_from(j: ParamsJson) -> Result<Self> {
        let n = j.sizes.len().saturating_sub(1);
        if n == 0 || j.weights.len() != n || j.biases.len() != n {
            return Err(Error::Config(format!("checkpoint has {} sizes for {} layers", j.sizes.len(), j.weights.len())));
        }
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        for (i, (w, b)) in j.weights.into_iter().zip(j.biases).enumerate() {
            let (fan_in, fan_out) = (j.sizes[i], j.sizes[i + 1]);
            if b.len() != fan_out {
                return Err(Error::Shape { expected: fan_out, actual: b.len() });
            }
            let w = Array2::from_shape_vec((fan_in, fan_out), w)
                .map_err(|e| Error::Config(format!("layer {i} weights: {e}")))?;
            weights.push(w);
            biases.push(Array1::from(b));
        }
        Ok(Self { weights, biases })
    }
}

impl Params {
    pub fn zeros(sizes: &[usize]) -> Self {
        let pairs = sizes.windows(2);
        Self {
            weights: pairs.clone().map(|p| Array2::zeros((p[0], p[1]))).collect(),
            biases: pairs.map(|p| Array1::zeros(p[1])).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.weights.iter().map(|w| w.nrows()).collect();
        sizes.extend(self.weights.last().map(|w| w.ncols()));
        sizes
    }

    pub fn count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.weights.len() == other.weights.len()
            && self.weights.iter().zip(&other.weights).all(|(a, b)| a.dim() == b.dim())
            && self.biases.iter().zip(&other.biases).all(|(a, b)| a.len() == b.len())
    }

    /// All parameters in layer order, weights (row-major) before biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.count() {
            return Err(Error::Shape { expected: self.count(), actual: values.len() });
        }
        let mut it = values.iter();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().chain(b.iter_mut()).for_each(|x| *x = *it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.flat_iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|w| *w *= s);
        self.biases.iter_mut().for_each(|b| *b *= s);
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &Params, s: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(s, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(s, b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flat_iter().all(|x| x.is_finite())
    }

    fn flat_iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }

    /// SHA-256 over the little-endian bytes of every parameter.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for x in self.flat_iter() {
            h.update(x.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Multi-layer perceptron with ReLU hidden layers and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    params: Params,
    /// Bumped on every parameter change; tapes remember it.
    #[serde(skip)]
    version: u64,
}

/// Layer inputs recorded by [`Mlp::forward`].
#[derive(Clone, Debug)]
pub struct Tape {
    version: u64,
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    /// He-uniform weights `U(-√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(sizes)?.params;
        for w in &mut params.weights {
            let bound = (6.0 / w.nrows() as f64).sqrt();
            w.iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));
        }
        Ok(Self { params, version: 0 })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self { params: Params::zeros(sizes), version: 0 })
    }

    pub fn from_params(params: Params) -> Result<Self> {
        let sizes = params.sizes();
        if sizes.len() < 2 || params.biases.len() != params.weights.len() {
            return Err(Error::Config("parameters have no layers".into()));
        }
        for (i, pair) in params.weights.windows(2).enumerate() {
            if pair[0].ncols() != pair[1].nrows() {
                return Err(Error::Config(format!("layer {i} output does not feed layer {}", i + 1)));
            }
        }
        for (w, b) in params.weights.iter().zip(&params.biases) {
            if w.ncols() != b.len() {
                return Err(Error::Shape { expected: w.ncols(), actual: b.len() });
            }
        }
        Ok(Self { params, version: 0 })
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.params.sizes()
    }

    pub fn input_dim(&self) -> usize {
        self.params.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.params.weights.last().expect("at least one layer").ncols()
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mutable access; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut Params {
        self.version += 1;
        &mut self.params
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), actual: x.ncols() });
        }
        Ok(())
    }

    /// Batched forward pass without a tape.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.params.weights.len() - 1;
        let mut h = x.to_owned();
        for (i, (w, b)) in self.params.weights.iter().zip(&self.params.biases).enumerate() {
            h = h.dot(w) + b;
            if i < last {
                h.mapv_inplace(relu);
            }
        }
        Ok(h)
    }

    pub fn predict_one(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        let out = self.predict(x.view().insert_axis(Axis(0)))?;
        Ok(out.row(0).to_owned())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(&x)?;
        let last = self.params.weights.len() - 1;
        let mut inputs = Vec::with_capacity(last + 1);
        let mut h = x.to_owned();
        for (i, (w, b)) in self.params.weights.iter().zip(&self.params.biases).enumerate() {
            let mut z = h.dot(w) + b;
            if i < last {
                z.mapv_inplace(relu);
            }
            inputs.push(h);
            h = z;
        }
        Ok((h, Tape { version: self.version, inputs }))
    }

    /// Gradients of the parameters and of the input, given `∂loss/∂output`.
    pub fn backward(&self, tape: &Tape, grad_output: ArrayView2<f64>) -> Result<(Params, Array2<f64>)> {
        if tape.version != self.version {
            return Err(Error::StaleTape { tape: tape.version, network: self.version });
        }
        let batch = tape.inputs[0].nrows();
        if grad_output.dim() != (batch, self.output_dim()) {
            let actual = if grad_output.nrows() == batch { grad_output.ncols() } else { grad_output.nrows() };
            let expected = if grad_output.nrows() == batch { self.output_dim() } else { batch };
            return Err(Error::Shape { expected, actual });
        }
        let mut grads = self.params.zeros_like();
        let mut delta = grad_output.to_owned();
        for i in (0..self.params.weights.len()).rev() {
            let input = &tape.inputs[i];
            grads.weights[i] = input.t().dot(&delta);
            grads.biases[i] = delta.sum_axis(Axis(0));
            let mut upstream = delta.dot(&self.params.weights[i].t());
            if i > 0 {
                // ReLU derivative: the recorded activation is positive iff the unit was live.
                ndarray::Zip::from(&mut upstream).and(input).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            delta = upstream;
        }
        Ok((grads, delta))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mlp: Mlp = serde_json::from_str(s)?;
        Self::from_params(mlp.params)
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Scales `grads` to global L2 norm `max_norm` if it is larger. Returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut Params, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub m: Params,
    pub v: Params,
    pub step: u64,
}

impl AdamW {
    pub fn new(mlp: &Mlp, config: AdamWConfig) -> Self {
        Self { config, m: mlp.params.zeros_like(), v: mlp.params.zeros_like(), step: 0 }
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &Params) -> Result<()> {
        if !grads.same_shape(&mlp.params) || !self.m.same_shape(&mlp.params) {
            return Err(Error::Shape { expected: mlp.param_count(), actual: grads.count() });
        }
        if let Some(pos) = grads.flat_iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient at parameter {pos} of {} (sizes {:?}, optimizer step {})",
                grads.count(),
                mlp.sizes(),
                self.step
            )));
        }
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *p -= lr * weight_decay * *p;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        let params = mlp.params_mut();
        for i in 0..params.weights.len() {
            ndarray::Zip::from(&mut params.weights[i])
                .and(&grads.weights[i])
                .and(&mut self.m.weights[i])
                .and(&mut self.v.weights[i])
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut params.biases[i])
                .and(&grads.biases[i])
                .and(&mut self.m.biases[i])
                .and(&mut self.v.biases[i])
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}
