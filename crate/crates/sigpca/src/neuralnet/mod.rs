//! Dense feedforward regression in f64: affine layers with optional batch
//! normalization and ReLU, MSE loss (optionally masked), and Adam.
//!
//! Everything is seeded and sequential, so training is bit-reproducible.
//! Gradients are derived analytically, including the path through the batch
//! statistics, and are checked against central finite differences in the
//! test suites.

mod train;

pub use train::{mlp_train, TrainConfig, TrainTrace};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid spec: {0}")]
    BadSpec(String),
    #[error("dimension mismatch: expected {expected} columns, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("batch normalization needs at least 2 rows in train mode, got {0}")]
    BatchTooSmall(usize),
    #[error("rows of inputs ({x}) and targets ({y}) differ")]
    RowMismatch { x: usize, y: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("every target entry is masked")]
    AllMasked,
    #[error("invalid training config: {0}")]
    BadTrainConfig(String),
    #[error("{0}")]
    Container(#[from] crate::container::ContainerError),
    #[error("shape error: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    /// Clamp outputs at zero, for non-negative targets like wind speed.
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    /// One flag per hidden layer.
    pub batch_norm: Vec<bool>,
    pub output_activation: OutputActivation,
    pub seed: u64,
}

impl MlpSpec {
    /// Spec with batch norm after every hidden layer and identity output.
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, output_dim: usize, seed: u64) -> Self {
        let batch_norm = vec![true; hidden_widths.len()];
        Self {
            input_dim,
            hidden_widths,
            output_dim,
            batch_norm,
            output_activation: OutputActivation::Identity,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(NetError::BadSpec("zero input or output dim".into()));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(NetError::BadSpec("zero hidden width".into()));
        }
        if self.batch_norm.len() != self.hidden_widths.len() {
            return Err(NetError::BadSpec(format!(
                "{} batch_norm flags for {} hidden layers",
                self.batch_norm.len(),
                self.hidden_widths.len()
            )));
        }
        Ok(())
    }

    fn uses_batch_norm(&self) -> bool {
        self.batch_norm.iter().any(|&b| b)
    }
}

pub const BATCH_NORM_EPSILON: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Linear {
    /// `in x out`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    /// First and second moments, flat in parameter order.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub spec: MlpSpec,
    pub(crate) layers: Vec<Linear>,
    pub(crate) batch_norms: Vec<Option<BatchNorm>>,
    pub(crate) adam: AdamState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Initialize a model: He-uniform weights from the spec's seed, zero
/// biases, unit gamma, zero beta, running stats `(0, 1)`.
pub fn mlp_init(spec: &MlpSpec) -> Result<MlpModel, NetError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut dims = Vec::with_capacity(spec.hidden_widths.len() + 2);
    dims.push(spec.input_dim);
    dims.extend_from_slice(&spec.hidden_widths);
    dims.push(spec.output_dim);

    let mut layers = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / fan_in as f64).sqrt();
        let weights =
            Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit));
        layers.push(Linear {
            weights,
            biases: Array1::zeros(fan_out),
        });
    }
    let batch_norms = spec
        .hidden_widths
        .iter()
        .zip(&spec.batch_norm)
        .map(|(&width, &enabled)| {
            enabled.then(|| BatchNorm {
                gamma: Array1::ones(width),
                beta: Array1::zeros(width),
                running_mean: Array1::zeros(width),
                running_var: Array1::ones(width),
                epsilon: BATCH_NORM_EPSILON,
                momentum: BATCH_NORM_MOMENTUM,
            })
        })
        .collect();
    let mut model = MlpModel {
        spec: spec.clone(),
        layers,
        batch_norms,
        adam: AdamState {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        },
    };
    let count = model.param_count();
    model.adam.m = vec![0.0; count];
    model.adam.v = vec![0.0; count];
    Ok(model)
}

pub(crate) struct LayerCache {
    pub input: Array2<f64>,
    pub affine: Array2<f64>,
    pub batch_mean: Option<Array1<f64>>,
    /// Biased batch variance (denominator B).
    pub batch_var: Option<Array1<f64>>,
    pub normalized: Option<Array2<f64>>,
    /// Post-batch-norm (or affine) values entering ReLU.
    pub pre_activation: Array2<f64>,
}

pub(crate) struct ForwardCache {
    pub hidden: Vec<LayerCache>,
    pub output_input: Array2<f64>,
    /// Output-layer affine values, before the optional output ReLU.
    pub output_affine: Array2<f64>,
}

impl MlpModel {
    pub fn n_hidden(&self) -> usize {
        self.spec.hidden_widths.len()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), NetError> {
        if x.dim().1 != self.spec.input_dim {
            return Err(NetError::DimMismatch {
                expected: self.spec.input_dim,
                found: x.dim().1,
            });
        }
        Ok(())
    }

    /// Forward pass. Train mode normalizes with batch statistics and is a
    /// pure function (running statistics are updated only by training
    /// steps); eval mode uses the stored running statistics.
    pub fn forward(&self, x: &ArrayView2<f64>, mode: Mode) -> Result<Array2<f64>, NetError> {
        match mode {
            Mode::Eval => {
                self.check_input(x)?;
                Ok(self.forward_eval(x))
            }
            Mode::Train => self.forward_train(x).map(|(out, _)| out),
        }
    }

    fn forward_eval(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = h.dot(&layer.weights) + &layer.biases;
            if l < self.n_hidden() {
                if let Some(bn) = &self.batch_norms[l] {
                    for (mut col, j) in a.axis_iter_mut(Axis(1)).zip(0..) {
                        let denom = (bn.running_var[j] + bn.epsilon).sqrt();
                        col.mapv_inplace(|v| {
                            bn.gamma[j] * (v - bn.running_mean[j]) / denom + bn.beta[j]
                        });
                    }
                }
                a.mapv_inplace(|v| v.max(0.0));
            } else if self.spec.output_activation == OutputActivation::Relu {
                a.mapv_inplace(|v| v.max(0.0));
            }
            h = a;
        }
        h
    }

    pub(crate) fn forward_train(
        &self,
        x: &ArrayView2<f64>,
    ) -> Result<(Array2<f64>, ForwardCache), NetError> {
        self.check_input(x)?;
        let batch = x.dim().0;
        if batch < 2 && self.spec.uses_batch_norm() {
            return Err(NetError::BatchTooSmall(batch));
        }
        let mut h = x.to_owned();
        let mut hidden = Vec::with_capacity(self.n_hidden());
        for l in 0..self.n_hidden() {
            let layer = &self.layers[l];
            let input = h.clone();
            let affine = h.dot(&layer.weights) + &layer.biases;
            let (pre_activation, batch_mean, batch_var, normalized) =
                if let Some(bn) = &self.batch_norms[l] {
                    let mean = affine.mean_axis(Axis(0)).expect("batch >= 2");
                    let var = affine
                        .axis_iter(Axis(1))
                        .zip(mean.iter())
                        .map(|(col, &mu)| {
                            col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / batch as f64
                        })
                        .collect::<Array1<f64>>();
                    let mut normalized = affine.clone();
                    for (mut col, j) in normalized.axis_iter_mut(Axis(1)).zip(0..) {
                        let denom = (var[j] + bn.epsilon).sqrt();
                        col.mapv_inplace(|v| (v - mean[j]) / denom);
                    }
                    let mut scaled = normalized.clone();
                    for (mut col, j) in scaled.axis_iter_mut(Axis(1)).zip(0..) {
                        col.mapv_inplace(|v| bn.gamma[j] * v + bn.beta[j]);
                    }
                    (scaled, Some(mean), Some(var), Some(normalized))
                } else {
                    (affine.clone(), None, None, None)
                };
            let activated = pre_activation.mapv(|v| v.max(0.0));
            hidden.push(LayerCache {
                input,
                affine,
                batch_mean,
                batch_var,
                normalized,
                pre_activation,
            });
            h = activated;
        }
        let output_input = h.clone();
        let out_layer = self.layers.last().expect("at least output layer");
        let output_affine = h.dot(&out_layer.weights) + &out_layer.biases;
        let output = match self.spec.output_activation {
            OutputActivation::Identity => output_affine.clone(),
            OutputActivation::Relu => output_affine.mapv(|v| v.max(0.0)),
        };
        Ok((
            output,
            ForwardCache {
                hidden,
                output_input,
                output_affine,
            },
        ))
    }

    /// Eval-mode forward; the prediction path.
    pub fn predict(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>, NetError> {
        self.forward(x, Mode::Eval)
    }

    /// Update running batch-norm statistics from the cached batch
    /// statistics of one training step. The running variance uses the
    /// unbiased batch variance.
    pub(crate) fn update_running_stats(&mut self, cache: &ForwardCache, batch: usize) {
        for (l, layer_cache) in cache.hidden.iter().enumerate() {
            if let Some(bn) = self.batch_norms[l].as_mut() {
                let mean = layer_cache.batch_mean.as_ref().expect("bn cache");
                let var = layer_cache.batch_var.as_ref().expect("bn cache");
                let unbias = batch as f64 / (batch as f64 - 1.0);
                for j in 0..bn.gamma.len() {
                    bn.running_mean[j] =
                        (1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * mean[j];
                    bn.running_var[j] =
                        (1.0 - bn.momentum) * bn.running_var[j] + bn.momentum * var[j] * unbias;
                }
            }
        }
    }

    /// Total number of trainable parameters.
    pub fn param_count(&self) -> usize {
        let mut count = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            count += layer.weights.len() + layer.biases.len();
            if l < self.n_hidden() {
                if let Some(bn) = &self.batch_norms[l] {
                    count += bn.gamma.len() + bn.beta.len();
                }
            }
        }
        count
    }

    /// Flatten parameters in layer order: weights (row-major), biases,
    /// then gamma and beta where batch norm is present.
    pub fn params_to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (l, layer) in self.layers.iter().enumerate() {
            out.extend(layer.weights.iter());
            out.extend(layer.biases.iter());
            if l < self.n_hidden() {
                if let Some(bn) = &self.batch_norms[l] {
                    out.extend(bn.gamma.iter());
                    out.extend(bn.beta.iter());
                }
            }
        }
        out
    }

    pub fn set_params_from_vec(&mut self, params: &[f64]) -> Result<(), NetError> {
        if params.len() != self.param_count() {
            return Err(NetError::Shape(format!(
                "{} parameters for a model with {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        let hidden = self.n_hidden();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for w in layer.weights.iter_mut() {
                *w = params[at];
                at += 1;
            }
            for b in layer.biases.iter_mut() {
                *b = params[at];
                at += 1;
            }
            if l < hidden {
                if let Some(bn) = self.batch_norms[l].as_mut() {
                    for g in bn.gamma.iter_mut() {
                        *g = params[at];
                        at += 1;
                    }
                    for b in bn.beta.iter_mut() {
                        *b = params[at];
                        at += 1;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-column affine input transform `(x - shift) / scale`, fitted once on
/// the training inputs and stored with the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub shift: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: Array1::zeros(dim),
            scale: Array1::ones(dim),
        }
    }

    /// Z-score parameters for a column set; constant columns keep scale 1.
    pub fn fit_zscore(x: &ArrayView2<f64>) -> Self {
        let n = x.dim().0.max(1);
        let shift = x.sum_axis(Axis(0)) / n as f64;
        let scale = x
            .axis_iter(Axis(1))
            .zip(shift.iter())
            .map(|(col, &mu)| {
                let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
                let sd = var.sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { shift, scale }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (mut col, j) in out.axis_iter_mut(Axis(1)).zip(0..) {
            col.mapv_inplace(|v| (v - self.shift[j]) / self.scale[j]);
        }
        out
    }
}

/// A trained network plus the input standardization it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkBundle {
    pub model: MlpModel,
    pub standardizer: Standardizer,
}

impl NetworkBundle {
    /// Standardize then predict in eval mode.
    pub fn predict(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>, NetError> {
        let z = self.standardizer.apply(x);
        self.model.predict(&z.view())
    }
}

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    schema_version: u32,
    kind: String,
    spec: MlpSpec,
    adam_step: u64,
    standardizer_dim: usize,
    param_count: usize,
    byte_order: String,
    dtype: String,
}

impl NetworkBundle {
    /// Blob layout: parameters, running stats (mean then var per
    /// batch-norm layer), Adam moments, standardizer shift and scale.
    pub fn save(&self, dir: &std::path::Path) -> Result<(), NetError> {
        let manifest = BundleManifest {
            schema_version: 1,
            kind: "mlp_bundle".into(),
            spec: self.model.spec.clone(),
            adam_step: self.model.adam.step,
            standardizer_dim: self.standardizer.dim(),
            param_count: self.model.param_count(),
            byte_order: "LE".into(),
            dtype: "f64".into(),
        };
        container::save_manifest(dir, &manifest)?;
        let mut blob = self.model.params_to_vec();
        for bn in self.model.batch_norms.iter().flatten() {
            blob.extend(bn.running_mean.iter());
            blob.extend(bn.running_var.iter());
        }
        blob.extend(&self.model.adam.m);
        blob.extend(&self.model.adam.v);
        blob.extend(self.standardizer.shift.iter());
        blob.extend(self.standardizer.scale.iter());
        container::save_blob(dir, &blob)?;
        Ok(())
    }

    pub fn load(dir: &std::path::Path) -> Result<NetworkBundle, NetError> {
        let manifest: BundleManifest = container::load_manifest(dir)?;
        let mut model = mlp_init(&manifest.spec)?;
        let p = model.param_count();
        if p != manifest.param_count {
            return Err(NetError::Shape("parameter count mismatch".into()));
        }
        let running: usize = model
            .batch_norms
            .iter()
            .flatten()
            .map(|bn| 2 * bn.gamma.len())
            .sum();
        let total = p + running + 2 * p + 2 * manifest.standardizer_dim;
        let blob = container::load_blob(dir, total)?;
        model.set_params_from_vec(&blob[..p])?;
        let mut at = p;
        for bn in model.batch_norms.iter_mut().flatten() {
            let width = bn.gamma.len();
            for j in 0..width {
                bn.running_mean[j] = blob[at + j];
            }
            at += width;
            for j in 0..width {
                bn.running_var[j] = blob[at + j];
            }
            at += width;
        }
        model.adam.m = blob[at..at + p].to_vec();
        at += p;
        model.adam.v = blob[at..at + p].to_vec();
        at += p;
        model.adam.step = manifest.adam_step;
        let dim = manifest.standardizer_dim;
        let standardizer = Standardizer {
            shift: Array1::from_vec(blob[at..at + dim].to_vec()),
            scale: Array1::from_vec(blob[at + dim..at + 2 * dim].to_vec()),
        };
        Ok(NetworkBundle {
            model,
            standardizer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn init_is_deterministic_per_seed() {
        let spec = MlpSpec::new(4, vec![3], 2, 99);
        let a = mlp_init(&spec).unwrap();
        let b = mlp_init(&spec).unwrap();
        assert_eq!(a.params_to_vec(), b.params_to_vec());
        let other = mlp_init(&MlpSpec { seed: 100, ..spec }).unwrap();
        assert_ne!(a.params_to_vec(), other.params_to_vec());
    }

    #[test]
    fn init_shapes_follow_spec() {
        let spec = MlpSpec::new(4, vec![3], 2, 1);
        let model = mlp_init(&spec).unwrap();
        assert_eq!(model.layers[0].weights.dim(), (4, 3));
        assert_eq!(model.layers[1].weights.dim(), (3, 2));
        assert_eq!(model.layers[0].biases.len(), 3);
        assert_eq!(model.layers[1].biases.len(), 2);
    }

    #[test]
    fn init_variance_close_to_he() {
        // He-uniform targets Var = 2 / fan_in.
        let fan_in = 50;
        let spec = MlpSpec::new(fan_in, vec![2000], 1, 5);
        let model = mlp_init(&spec).unwrap();
        let w = &model.layers[0].weights;
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let want = 2.0 / fan_in as f64;
        assert!(
            (var - want).abs() < 0.2 * want,
            "sample variance {var} vs He target {want}"
        );
    }

    #[test]
    fn zero_weights_emit_bias_rows() {
        let spec = MlpSpec {
            batch_norm: vec![false],
            ..MlpSpec::new(3, vec![4], 2, 0)
        };
        let mut model = mlp_init(&spec).unwrap();
        let zeros = vec![0.0; model.param_count()];
        model.set_params_from_vec(&zeros).unwrap();
        let mut params = zeros;
        // Output biases are the last two parameters of the flat layout.
        let p = params.len();
        params[p - 2] = 1.5;
        params[p - 1] = -2.5;
        model.set_params_from_vec(&params).unwrap();
        let x = arr2(&[[0.3, -0.4, 2.0], [1.0, 1.0, 1.0]]);
        let out = model.predict(&x.view()).unwrap();
        for r in 0..2 {
            assert_eq!(out[[r, 0]], 1.5);
            assert_eq!(out[[r, 1]], -2.5);
        }
    }

    #[test]
    fn output_relu_clamps_to_zero() {
        let spec = MlpSpec {
            batch_norm: vec![false],
            output_activation: OutputActivation::Relu,
            ..MlpSpec::new(2, vec![3], 2, 0)
        };
        let mut model = mlp_init(&spec).unwrap();
        let mut params = vec![0.0; model.param_count()];
        let p = params.len();
        params[p - 2] = -4.0;
        params[p - 1] = -0.5;
        model.set_params_from_vec(&params).unwrap();
        let x = arr2(&[[1.0, 2.0]]);
        let out = model.predict(&x.view()).unwrap();
        assert_eq!(out[[0, 0]], 0.0);
        assert_eq!(out[[0, 1]], 0.0);
    }

    #[test]
    fn eval_forward_matches_hand_rolled_oracle() {
        let spec = MlpSpec {
            batch_norm: vec![true],
            ..MlpSpec::new(2, vec![2], 1, 3)
        };
        let mut model = mlp_init(&spec).unwrap();
        // Install hand-picked parameters and running stats.
        let params = vec![
            0.5, -0.3, 0.2, 0.8, // W0 (2x2 row-major)
            0.1, -0.1, // b0
            1.5, 0.7, // gamma
            0.2, -0.4, // beta
            1.0, -1.0, // W1 (2x1)
            0.25, // b1
        ];
        model.set_params_from_vec(&params).unwrap();
        {
            let bn = model.batch_norms[0].as_mut().unwrap();
            bn.running_mean = Array1::from_vec(vec![0.3, -0.2]);
            bn.running_var = Array1::from_vec(vec![1.4, 0.6]);
        }
        let x = arr2(&[[0.7, -1.2]]);
        let got = model.predict(&x.view()).unwrap()[[0, 0]];

        // Independent scalar arithmetic.
        let a0 = 0.7 * 0.5 + (-1.2) * 0.2 + 0.1;
        let a1 = 0.7 * (-0.3) + (-1.2) * 0.8 + (-0.1);
        let n0 = 1.5 * (a0 - 0.3) / (1.4f64 + 1e-5).sqrt() + 0.2;
        let n1 = 0.7 * (a1 + 0.2) / (0.6f64 + 1e-5).sqrt() - 0.4;
        let h0 = n0.max(0.0);
        let h1 = n1.max(0.0);
        let want = h0 * 1.0 + h1 * (-1.0) + 0.25;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn batch_norm_identity_parameterization() {
        // gamma = sqrt(running_var + eps), beta = running_mean makes
        // eval-mode batch norm the identity.
        let spec = MlpSpec::new(3, vec![3], 3, 8);
        let mut model = mlp_init(&spec).unwrap();
        {
            let bn = model.batch_norms[0].as_mut().unwrap();
            bn.running_mean = Array1::from_vec(vec![0.4, -1.0, 2.0]);
            bn.running_var = Array1::from_vec(vec![0.5, 2.0, 0.1]);
            for j in 0..3 {
                bn.gamma[j] = (bn.running_var[j] + bn.epsilon).sqrt();
                bn.beta[j] = bn.running_mean[j];
            }
        }
        // Identity weights on both layers isolate the batch-norm map;
        // inputs are positive so ReLU passes them through.
        let mut params = model.params_to_vec();
        for p in params.iter_mut() {
            *p = 0.0;
        }
        for j in 0..3 {
            params[j * 3 + j] = 1.0; // W0 identity
        }
        {
            let bn = model.batch_norms[0].as_ref().unwrap();
            for j in 0..3 {
                params[9 + 3 + j] = bn.gamma[j];
                params[9 + 3 + 3 + j] = bn.beta[j];
            }
        }
        for j in 0..3 {
            params[9 + 3 + 6 + j * 3 + j] = 1.0; // W1 identity
        }
        model.set_params_from_vec(&params).unwrap();
        let x = arr2(&[[0.5, 1.0, 3.0], [2.0, 0.25, 1.0]]);
        let out = model.predict(&x.view()).unwrap();
        for (a, b) in x.iter().zip(out.iter()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn duplicated_rows_predict_identically() {
        let spec = MlpSpec::new(3, vec![4, 2], 2, 11);
        let model = mlp_init(&spec).unwrap();
        let row = [0.3, -0.7, 1.1];
        let x = arr2(&[row, row, row]);
        let out = model.predict(&x.view()).unwrap();
        for r in 1..3 {
            for c in 0..2 {
                assert_eq!(out[[0, c]].to_bits(), out[[r, c]].to_bits());
            }
        }
    }

    #[test]
    fn eval_is_invariant_to_batch_composition() {
        let spec = MlpSpec::new(3, vec![4], 2, 12);
        let model = mlp_init(&spec).unwrap();
        let rows = arr2(&[
            [0.1, 0.2, 0.3],
            [-1.0, 0.5, 2.0],
            [0.0, 0.0, 1.0],
            [3.0, -2.0, 0.7],
        ]);
        let batch_out = model.predict(&rows.view()).unwrap();
        for r in 0..4 {
            let single = rows.row(r).insert_axis(Axis(0)).to_owned();
            let one = model.predict(&single.view()).unwrap();
            for c in 0..2 {
                assert!((one[[0, c]] - batch_out[[r, c]]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn train_mode_with_single_row_and_bn_fails() {
        let spec = MlpSpec::new(2, vec![2], 1, 0);
        let model = mlp_init(&spec).unwrap();
        let x = arr2(&[[1.0, 2.0]]);
        assert!(matches!(
            model.forward(&x.view(), Mode::Train),
            Err(NetError::BatchTooSmall(1))
        ));
    }

    #[test]
    fn bundle_round_trip() {
        let spec = MlpSpec::new(3, vec![4, 2], 2, 21);
        let model = mlp_init(&spec).unwrap();
        let bundle = NetworkBundle {
            model,
            standardizer: Standardizer {
                shift: Array1::from_vec(vec![0.1, 0.2, 0.3]),
                scale: Array1::from_vec(vec![1.0, 2.0, 0.5]),
            },
        };
        let dir = tempfile::tempdir().unwrap();
        bundle.save(dir.path()).unwrap();
        let back = NetworkBundle::load(dir.path()).unwrap();
        assert_eq!(back, bundle);
    }
}
