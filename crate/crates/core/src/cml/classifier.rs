//! Multinomial logistic regression trained by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::CmlError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.1,
            l2: 1e-4,
        }
    }
}

/// Softmax-linear model. `weights` is row-major `classes x feature_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub class_ids: Vec<u32>,
    pub feature_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    pub fn zeros(class_ids: Vec<u32>, feature_dim: usize) -> Self {
        let c = class_ids.len();
        Self {
            weights: vec![0.0; c * feature_dim],
            bias: vec![0.0; c],
            class_ids,
            feature_dim,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn class_index(&self, label: u32) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == label)
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.feature_dim.max(1))
            .take(self.num_classes())
            .zip(&self.bias)
            .map(|(row, b)| {
                if self.feature_dim == 0 {
                    *b
                } else {
                    row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b
                }
            })
            .collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Argmax class id and its probability. Ties go to the lower index.
    pub fn predict_one(&self, x: &[f64]) -> Result<(u32, f64), CmlError> {
        if x.len() != self.feature_dim {
            return Err(CmlError::DimMismatch {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        let p = self.probabilities(x);
        let (best, conf) = p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        Ok((self.class_ids[best], conf))
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy plus `l2 / 2 * |W|^2` (bias unregularized), and its
/// gradient. `targets` are class indices.
pub fn loss_and_gradient(m: &LinearClassifier, xs: &[Vec<f64>], targets: &[usize], l2: f64) -> (f64, Gradient) {
    let c = m.num_classes();
    let d = m.feature_dim;
    let n = xs.len() as f64;
    let mut gw = vec![0.0; c * d];
    let mut gb = vec![0.0; c];
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(targets) {
        let z = m.logits(x);
        loss += log_sum_exp(&z) - z[y];
        let p = softmax(&z);
        for k in 0..c {
            let delta = p[k] - if k == y { 1.0 } else { 0.0 };
            gb[k] += delta / n;
            for j in 0..d {
                gw[k * d + j] += delta * x[j] / n;
            }
        }
    }
    loss /= n;
    let mut reg = 0.0;
    for (g, w) in gw.iter_mut().zip(&m.weights) {
        *g += l2 * w;
        reg += w * w;
    }
    loss += 0.5 * l2 * reg;
    (loss, Gradient { weights: gw, bias: gb })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trained {
    pub model: LinearClassifier,
    /// Loss before each epoch's update, then the final loss.
    pub losses: Vec<f64>,
}

/// Fits a classifier from zero initialization.
pub fn train(xs: &[Vec<f64>], labels: &[u32], class_ids: &[u32], cfg: &TrainConfig) -> Result<Trained, CmlError> {
    if xs.is_empty() || class_ids.is_empty() {
        return Err(CmlError::Empty);
    }
    if xs.len() != labels.len() {
        return Err(CmlError::DimMismatch {
            expected: xs.len(),
            got: labels.len(),
        });
    }
    let d = xs[0].len();
    for x in xs {
        if x.len() != d {
            return Err(CmlError::DimMismatch { expected: d, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CmlError::NonFinite);
        }
    }
    let mut model = LinearClassifier::zeros(class_ids.to_vec(), d);
    let targets = labels
        .iter()
        .map(|&l| model.class_index(l).ok_or(CmlError::UnknownLabel(l)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        let (loss, g) = loss_and_gradient(&model, xs, &targets, cfg.l2);
        losses.push(loss);
        for (w, gw) in model.weights.iter_mut().zip(&g.weights) {
            *w -= cfg.learning_rate * gw;
        }
        for (b, gb) in model.bias.iter_mut().zip(&g.bias) {
            *b -= cfg.learning_rate * gb;
        }
    }
    losses.push(loss_and_gradient(&model, xs, &targets, cfg.l2).0);
    if model.weights.iter().chain(&model.bias).any(|v| !v.is_finite()) {
        return Err(CmlError::NonFinite);
    }
    Ok(Trained { model, losses })
}
