//! MSE training with Adam: analytic backward pass (through the batch
//! statistics of batch normalization) and a seeded minibatch loop.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ForwardCache, MlpModel, NetError, OutputActivation};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.01,
            batch_size: 256,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), NetError> {
        if self.epochs < 1 {
            return Err(NetError::BadTrainConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) && self.learning_rate != 0.0 {
            return Err(NetError::BadTrainConfig(
                "learning rate must be finite and >= 0".into(),
            ));
        }
        if self.batch_size < 1 {
            return Err(NetError::BadTrainConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss after each epoch (mean of batch losses weighted by the number of
/// contributing target entries).
#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub epoch_losses: Vec<f64>,
}

struct Gradients {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    gammas: Vec<Option<Array1<f64>>>,
    betas: Vec<Option<Array1<f64>>>,
}

impl Gradients {
    fn to_flat(&self, model: &MlpModel) -> Vec<f64> {
        let mut out = Vec::with_capacity(model.param_count());
        for l in 0..model.layers.len() {
            out.extend(self.weights[l].iter());
            out.extend(self.biases[l].iter());
            if l < model.n_hidden() {
                if let Some(g) = &self.gammas[l] {
                    out.extend(g.iter());
                    out.extend(self.betas[l].as_ref().expect("paired with gamma").iter());
                }
            }
        }
        out
    }
}

/// MSE over unmasked entries and its gradient with respect to predictions.
/// Unmasked: mean over every entry. Masked: sum over present entries divided
/// by their count; masked entries contribute nothing to loss or gradient.
fn mse_and_grad(
    pred: &Array2<f64>,
    target: &ArrayView2<f64>,
    mask: Option<&ArrayView2<bool>>,
) -> (f64, Array2<f64>, usize) {
    let mut grad = Array2::zeros(pred.raw_dim());
    let mut acc = 0.0;
    let mut count = 0usize;
    for ((idx, &p), &t) in pred.indexed_iter().zip(target.iter()) {
        if let Some(m) = mask {
            if !m[idx] {
                continue;
            }
        }
        let diff = p - t;
        acc += diff * diff;
        grad[idx] = diff;
        count += 1;
    }
    if count == 0 {
        return (0.0, grad, 0);
    }
    let scale = 2.0 / count as f64;
    grad.mapv_inplace(|g| g * scale);
    (acc / count as f64, grad, count)
}

impl MlpModel {
    /// Training-mode loss as a pure function of the parameters; the anchor
    /// for finite-difference checks.
    pub fn training_loss(
        &self,
        x: &ArrayView2<f64>,
        y: &ArrayView2<f64>,
        mask: Option<&ArrayView2<bool>>,
    ) -> Result<f64, NetError> {
        let (pred, _) = self.forward_train(x)?;
        let (loss, _, _) = mse_and_grad(&pred, y, mask);
        Ok(loss)
    }

    /// Training-mode loss and the analytic gradient of every parameter,
    /// flattened in parameter order.
    pub fn loss_and_gradients(
        &self,
        x: &ArrayView2<f64>,
        y: &ArrayView2<f64>,
        mask: Option<&ArrayView2<bool>>,
    ) -> Result<(f64, Vec<f64>), NetError> {
        if x.dim().0 != y.dim().0 {
            return Err(NetError::RowMismatch {
                x: x.dim().0,
                y: y.dim().0,
            });
        }
        let (pred, cache) = self.forward_train(x)?;
        let (loss, dl_dpred, _) = mse_and_grad(&pred, y, mask);
        let grads = self.backward(&cache, dl_dpred);
        Ok((loss, grads.to_flat(self)))
    }

    fn backward(&self, cache: &ForwardCache, dl_dpred: Array2<f64>) -> Gradients {
        let n_layers = self.layers.len();
        let mut weights = vec![Array2::zeros((0, 0)); n_layers];
        let mut biases = vec![Array1::zeros(0); n_layers];
        let mut gammas: Vec<Option<Array1<f64>>> = vec![None; self.n_hidden()];
        let mut betas: Vec<Option<Array1<f64>>> = vec![None; self.n_hidden()];

        // Output layer: optional ReLU, then affine.
        let mut dz = dl_dpred;
        if self.spec.output_activation == OutputActivation::Relu {
            for (d, &a) in dz.iter_mut().zip(cache.output_affine.iter()) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let out_idx = n_layers - 1;
        weights[out_idx] = cache.output_input.t().dot(&dz);
        biases[out_idx] = dz.sum_axis(Axis(0));
        let mut dh = dz.dot(&self.layers[out_idx].weights.t());

        // Hidden layers, last to first: ReLU, batch norm, affine.
        for l in (0..self.n_hidden()).rev() {
            let lc = &cache.hidden[l];
            let mut dpre = dh;
            for (d, &a) in dpre.iter_mut().zip(lc.pre_activation.iter()) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let da = if let Some(bn) = &self.batch_norms[l] {
                let normalized = lc.normalized.as_ref().expect("bn cache");
                let mean = lc.batch_mean.as_ref().expect("bn cache");
                let var = lc.batch_var.as_ref().expect("bn cache");
                let batch = dpre.dim().0 as f64;
                let width = bn.gamma.len();

                let mut dgamma = Array1::zeros(width);
                let mut dbeta = Array1::zeros(width);
                for j in 0..width {
                    for b in 0..dpre.dim().0 {
                        dgamma[j] += dpre[[b, j]] * normalized[[b, j]];
                        dbeta[j] += dpre[[b, j]];
                    }
                }

                let mut da = Array2::zeros(dpre.raw_dim());
                for j in 0..width {
                    let inv_std = 1.0 / (var[j] + bn.epsilon).sqrt();
                    let mut dxhat_sum = 0.0;
                    let mut dxhat_dev_sum = 0.0;
                    let mut dev_sum = 0.0;
                    for b in 0..dpre.dim().0 {
                        let dxhat = dpre[[b, j]] * bn.gamma[j];
                        let dev = lc.affine[[b, j]] - mean[j];
                        dxhat_sum += dxhat;
                        dxhat_dev_sum += dxhat * dev;
                        dev_sum += dev;
                    }
                    let dvar = dxhat_dev_sum * (-0.5) * inv_std.powi(3);
                    let dmean = -dxhat_sum * inv_std + dvar * (-2.0 / batch) * dev_sum;
                    for b in 0..dpre.dim().0 {
                        let dxhat = dpre[[b, j]] * bn.gamma[j];
                        let dev = lc.affine[[b, j]] - mean[j];
                        da[[b, j]] =
                            dxhat * inv_std + dvar * 2.0 * dev / batch + dmean / batch;
                    }
                }
                gammas[l] = Some(dgamma);
                betas[l] = Some(dbeta);
                da
            } else {
                dpre
            };
            weights[l] = lc.input.t().dot(&da);
            biases[l] = da.sum_axis(Axis(0));
            dh = da.dot(&self.layers[l].weights.t());
        }

        Gradients {
            weights,
            biases,
            gammas,
            betas,
        }
    }

    fn adam_step(&mut self, grads: &[f64], learning_rate: f64) {
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let (b1, b2, eps) = (self.adam.beta1, self.adam.beta2, self.adam.epsilon);
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        let mut params = self.params_to_vec();
        for (i, g) in grads.iter().enumerate() {
            self.adam.m[i] = b1 * self.adam.m[i] + (1.0 - b1) * g;
            self.adam.v[i] = b2 * self.adam.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.adam.m[i] / bias1;
            let v_hat = self.adam.v[i] / bias2;
            params[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
        self.set_params_from_vec(&params).expect("same length");
    }
}

/// Train with minibatch Adam on (optionally masked) MSE.
///
/// Rows are shuffled per epoch with a seeded generator. A trailing batch of
/// one row is folded into the previous batch when the model uses batch
/// normalization. Returns the per-epoch loss trace.
pub fn mlp_train(
    model: &mut MlpModel,
    x: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
    mask: Option<&ArrayView2<bool>>,
    cfg: &TrainConfig,
) -> Result<TrainTrace, NetError> {
    cfg.validate()?;
    let rows = x.dim().0;
    if rows != y.dim().0 {
        return Err(NetError::RowMismatch {
            x: rows,
            y: y.dim().0,
        });
    }
    if rows == 0 {
        return Err(NetError::BadTrainConfig("no training rows".into()));
    }
    if let Some(m) = mask {
        if m.dim() != y.dim() {
            return Err(NetError::Shape("mask shape differs from targets".into()));
        }
        if !m.iter().any(|&b| b) {
            return Err(NetError::AllMasked);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..rows).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        // Fisher-Yates with our own generator keeps the permutation stable
        // across dependency upgrades.
        for i in (1..rows).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        if batches.len() >= 2 && batches.last().map(|b| b.len()) == Some(1) {
            // Merge a trailing singleton into the previous batch so batch
            // norm always sees at least two rows.
            let start = order.len() - 1 - cfg.batch_size;
            let merged = &order[start..];
            batches.pop();
            batches.pop();
            batches.push(merged);
        }

        let mut loss_acc = 0.0;
        let mut weight_acc = 0usize;
        for batch in batches {
            let xb = gather_rows(x, batch);
            let yb = gather_rows(y, batch);
            let mb = mask.map(|m| gather_rows_bool(m, batch));
            let (pred, cache) = model.forward_train(&xb.view())?;
            let (loss, dl_dpred, count) = match &mb {
                Some(m) => mse_and_grad(&pred, &yb.view(), Some(&m.view())),
                None => mse_and_grad(&pred, &yb.view(), None),
            };
            if count == 0 {
                continue;
            }
            if !loss.is_finite() {
                return Err(NetError::NonFiniteLoss { epoch });
            }
            model.update_running_stats(&cache, xb.dim().0);
            let grads = model.backward(&cache, dl_dpred).to_flat(model);
            model.adam_step(&grads, cfg.learning_rate);
            loss_acc += loss * count as f64;
            weight_acc += count;
        }
        let epoch_loss = if weight_acc > 0 {
            loss_acc / weight_acc as f64
        } else {
            0.0
        };
        if !epoch_loss.is_finite() {
            return Err(NetError::NonFiniteLoss { epoch });
        }
        epoch_losses.push(epoch_loss);
    }
    Ok(TrainTrace { epoch_losses })
}

fn gather_rows(x: &ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.dim().1));
    for (r, &src) in rows.iter().enumerate() {
        out.row_mut(r).assign(&x.row(src));
    }
    out
}

fn gather_rows_bool(x: &ArrayView2<bool>, rows: &[usize]) -> Array2<bool> {
    let mut out = Array2::from_elem((rows.len(), x.dim().1), false);
    for (r, &src) in rows.iter().enumerate() {
        out.row_mut(r).assign(&x.row(src));
    }
    out
}
