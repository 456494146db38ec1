//! Class-weighted logistic regression trained by full-batch gradient descent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_training_shape, ClassWeight, LabelVector, TrainConfig};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Largest number of step-size halvings tried within one epoch.
const MAX_HALVINGS: usize = 40;
/// Predicted probabilities are kept this far from 0 and 1.
const PROBA_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub column_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Per-feature z-score parameters captured at fit time.
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl LogisticModel {
    /// A model with every parameter zero and identity normalization.
    pub fn zeros(column_names: Vec<String>) -> Self {
        let d = column_names.len();
        Self {
            column_names,
            weights: vec![0.0; d],
            bias: 0.0,
            means: vec![0.0; d],
            stds: vec![1.0; d],
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Weighted binary cross-entropy over normalized features.
///
/// Parameters are packed as `[w_0, .., w_{d-1}, bias]`. The loss is
/// `(1/n) * sum_i c_i * (softplus(z_i) - y_i * z_i)` with `z_i = w.x_i + b`
/// and `c_i` the weight of row i's class.
pub struct LogisticObjective {
    columns: Vec<Vec<f64>>,
    labels: Vec<f64>,
    row_weights: Vec<f64>,
    /// Features excluded from training (zero variance).
    frozen: Vec<bool>,
}

impl LogisticObjective {
    pub fn new(columns: Vec<Vec<f64>>, labels: &[u8], class_weights: (f64, f64)) -> Self {
        let labels: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
        let row_weights = labels
            .iter()
            .map(|&y| {
                if y > 0.5 {
                    class_weights.1
                } else {
                    class_weights.0
                }
            })
            .collect();
        let frozen = vec![false; columns.len()];
        Self {
            columns,
            labels,
            row_weights,
            frozen,
        }
    }

    pub fn n_params(&self) -> usize {
        self.columns.len() + 1
    }

    fn logits(&self, params: &[f64]) -> Vec<f64> {
        let d = self.columns.len();
        let mut z = vec![params[d]; self.labels.len()];
        for (col, &w) in self.columns.iter().zip(&params[..d]) {
            if w != 0.0 {
                z.iter_mut().zip(col).for_each(|(zi, &x)| *zi += w * x);
            }
        }
        z
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        let z = self.logits(params);
        let n = self.labels.len() as f64;
        z.iter()
            .zip(&self.labels)
            .zip(&self.row_weights)
            .map(|((&z, &y), &c)| c * (softplus(z) - y * z))
            .sum::<f64>()
            / n
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let z = self.logits(params);
        let n = self.labels.len() as f64;
        let residual: Vec<f64> = z
            .iter()
            .zip(&self.labels)
            .zip(&self.row_weights)
            .map(|((&z, &y), &c)| c * (sigmoid(z) - y) / n)
            .collect();
        let mut g: Vec<f64> = self
            .columns
            .par_iter()
            .zip(&self.frozen)
            .map(|(col, &frozen)| {
                if frozen {
                    0.0
                } else {
                    col.iter().zip(&residual).map(|(&x, &r)| x * r).sum()
                }
            })
            .collect();
        g.push(residual.iter().sum());
        g
    }
}

fn class_weights(mode: ClassWeight, y: &LabelVector) -> Result<(f64, f64)> {
    match mode {
        ClassWeight::Uniform => Ok((1.0, 1.0)),
        ClassWeight::Explicit(a, b) => Ok((a, b)),
        ClassWeight::Balanced => {
            let n = y.len() as f64;
            let n1 = y.count(1);
            let n0 = y.len() - n1;
            if n0 == 0 {
                return Err(Error::MissingClass(0));
            }
            if n1 == 0 {
                return Err(Error::MissingClass(1));
            }
            Ok((n / (2.0 * n0 as f64), n / (2.0 * n1 as f64)))
        }
    }
}

fn mean_std(col: &[f64]) -> (f64, f64) {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trains and also returns the loss after every epoch.
///
/// A step that would raise the loss is retried with half the learning rate,
/// so the returned history is non-increasing.
pub fn fit_logistic(
    x: &FeatureMatrix,
    y: &LabelVector,
    cfg: &TrainConfig,
) -> Result<(LogisticModel, Vec<f64>)> {
    cfg.validate()?;
    check_training_shape(x, y)?;
    let weights_by_class = class_weights(cfg.class_weight, y)?;

    let mut means = Vec::with_capacity(x.n_cols());
    let mut stds = Vec::with_capacity(x.n_cols());
    let mut frozen = Vec::with_capacity(x.n_cols());
    let columns: Vec<Vec<f64>> = x
        .columns
        .iter()
        .map(|col| {
            let (m, s) = mean_std(col);
            let flat = !(s > 0.0 && s.is_finite());
            let s = if flat { 1.0 } else { s };
            means.push(m);
            stds.push(s);
            frozen.push(flat);
            col.iter().map(|v| (v - m) / s).collect()
        })
        .collect();

    let mut objective = LogisticObjective::new(columns, &y.values, weights_by_class);
    objective.frozen = frozen;

    let mut params = vec![0.0; objective.n_params()];
    let mut loss = objective.loss(&params);
    let mut lr = cfg.learning_rate;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let g = objective.gradient(&params);
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = params.iter().zip(&g).map(|(p, gi)| p - lr * gi).collect();
            let trial_loss = objective.loss(&trial);
            if trial_loss <= loss {
                params = trial;
                loss = trial_loss;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        history.push(loss);
        if !accepted {
            break;
        }
    }

    let d = x.n_cols();
    Ok((
        LogisticModel {
            column_names: x.column_names.clone(),
            weights: params[..d].to_vec(),
            bias: params[d],
            means,
            stds,
        },
        history,
    ))
}

pub fn train_logistic(
    x: &FeatureMatrix,
    y: &LabelVector,
    cfg: &TrainConfig,
) -> Result<LogisticModel> {
    fit_logistic(x, y, cfg).map(|(m, _)| m)
}

pub fn predict_proba_logistic(model: &LogisticModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    let cols = x.aligned_to(&model.column_names)?;
    let mut z = vec![model.bias; x.n_rows()];
    for (j, col) in cols.iter().enumerate() {
        let (w, m, s) = (model.weights[j], model.means[j], model.stds[j]);
        z.iter_mut()
            .zip(col.iter())
            .for_each(|(zi, &v)| *zi += w * (v - m) / s);
    }
    Ok(z.into_iter()
        .map(|z| sigmoid(z).clamp(PROBA_EPS, 1.0 - PROBA_EPS))
        .collect())
}
