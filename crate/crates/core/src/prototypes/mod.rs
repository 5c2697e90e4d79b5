//! Category prototypes, prototype radiuses and the joint training objective.
//!
//! With features `f_i` (the net's logits) and prototype rows `p_j`:
//!
//! - `loss1`  = cross entropy of `softmax(f_i)`;
//! - `loss21` = `(1/2S) Σ ‖f_i − p_{y_i}‖²`;
//! - `D_ij`   = `1 / (‖f_i − p_j‖² + ε)` with `ε = 0.001`;
//! - `loss22` = cross entropy of `softmax(D_i)`;
//! - `loss3`  = `(1/2T) Σ (r_{y_t} − d_t)²` over the `T` rows whose distance
//!   argmax equals the label, `d_t` being that row's top value;
//! - `total`  = `loss1 + w1·(ω·loss21 + loss22) + w2·loss3`.
//!
//! `loss21` and `loss3` are positive mean squared errors. All gradients are
//! derived by hand and checked against central differences in the tests.

mod bank;
mod train;

pub use bank::{PrototypeBank, EPSILON_DIST};
pub use train::{fit, train_initial, EpochRecord, InitialModel, TrainConfig, TrainingLog};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExpandableNet, NetGradients};
use crate::numerics::{argmax, cross_entropy_mean, softmax_rows, Matrix};

/// Reciprocal smoothed squared distances, plus the raw squared distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub values: Matrix,
    pub sq_dist: Matrix,
}

impl DistanceMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    /// Row-wise argmax of `D`, i.e. nearest-prototype classification.
    pub fn predictions(&self) -> Vec<usize> {
        self.values.row_iter().map(argmax).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub omega: f64,
    pub w1: f64,
    pub w2: f64,
    /// Also push the radius loss back into features and prototypes. Off by
    /// default, in which case `loss3` only moves the radiuses.
    pub radius_backprop: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            omega: 1.0,
            w1: 0.1,
            w2: 0.01,
            radius_backprop: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("omega", self.omega), ("w1", self.w1), ("w2", self.w2)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss1: f64,
    pub loss21: f64,
    pub loss22: f64,
    pub loss2: f64,
    pub loss3: f64,
    pub total: f64,
    /// Number of rows contributing to `loss3`.
    pub correct: usize,
}

/// A scalar loss with its gradients w.r.t. features (S×N) and prototypes (N×N).
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub d_features: Matrix,
    pub d_prototypes: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusLoss {
    pub loss: f64,
    pub count: usize,
    pub d_radii: Vec<f64>,
    /// ∂loss3/∂D, nonzero only at `(t, y_t)` of contributing rows.
    pub d_distance: Matrix,
}

pub fn distance_matrix(features: &Matrix, bank: &PrototypeBank) -> Result<DistanceMatrix> {
    distance_matrix_with(features, bank.prototypes(), bank.epsilon_dist())
}

pub fn distance_matrix_with(
    features: &Matrix,
    prototypes: &Matrix,
    epsilon: f64,
) -> Result<DistanceMatrix> {
    if features.cols() != prototypes.cols() {
        return Err(Error::Shape {
            op: "distance_matrix",
            left: features.shape(),
            right: prototypes.shape(),
        });
    }
    let (s, n) = (features.rows(), prototypes.rows());
    let mut values = Matrix::zeros(s, n);
    let mut sq_dist = Matrix::zeros(s, n);
    for i in 0..s {
        let f = features.row(i);
        for j in 0..n {
            let q: f64 = f
                .iter()
                .zip(prototypes.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            sq_dist.set(i, j, q);
            values.set(i, j, 1.0 / (q + epsilon));
        }
    }
    Ok(DistanceMatrix { values, sq_dist })
}

fn check_labels(labels: &[usize], rows: usize, categories: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape {
            op: "labels",
            left: (rows, categories),
            right: (labels.len(), 1),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= categories) {
        return Err(Error::LabelOutOfRange { label, categories });
    }
    Ok(())
}

/// `(1/2S) Σ ‖f_i − p_{y_i}‖²` with its gradients.
pub fn prototype_l2_loss(
    features: &Matrix,
    prototypes: &Matrix,
    labels: &[usize],
) -> Result<LossGrad> {
    if features.cols() != prototypes.cols() {
        return Err(Error::Shape {
            op: "prototype_l2_loss",
            left: features.shape(),
            right: prototypes.shape(),
        });
    }
    check_labels(labels, features.rows(), prototypes.rows())?;
    let s = features.rows() as f64;
    let mut d_features = Matrix::zeros(features.rows(), features.cols());
    let mut d_prototypes = Matrix::zeros(prototypes.rows(), prototypes.cols());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let f = features.row(i);
        let p = prototypes.row(y);
        for (k, (a, b)) in f.iter().zip(p).enumerate() {
            let r = a - b;
            loss += r * r;
            d_features.set(i, k, r / s);
            let dp = d_prototypes.get(y, k) - r / s;
            d_prototypes.set(y, k, dp);
        }
    }
    Ok(LossGrad {
        loss: loss / (2.0 * s),
        d_features,
        d_prototypes,
    })
}

/// Chains `∂L/∂D` through `D_ij = 1/(q_ij + ε)` into features and prototypes.
pub fn distance_backward(
    features: &Matrix,
    prototypes: &Matrix,
    dist: &DistanceMatrix,
    d_values: &Matrix,
) -> (Matrix, Matrix) {
    let mut d_features = Matrix::zeros(features.rows(), features.cols());
    let mut d_prototypes = Matrix::zeros(prototypes.rows(), prototypes.cols());
    for i in 0..features.rows() {
        for j in 0..prototypes.rows() {
            let g = d_values.get(i, j);
            if g == 0.0 {
                continue;
            }
            let d = dist.values.get(i, j);
            // ∂L/∂q = g·(−D²), ∂q/∂f_i = 2(f_i − p_j), ∂q/∂p_j = −2(f_i − p_j)
            let c = -2.0 * g * d * d;
            for k in 0..features.cols() {
                let diff = features.get(i, k) - prototypes.get(j, k);
                let df = d_features.get(i, k) + c * diff;
                d_features.set(i, k, df);
                let dp = d_prototypes.get(j, k) - c * diff;
                d_prototypes.set(j, k, dp);
            }
        }
    }
    (d_features, d_prototypes)
}

/// Cross entropy over softmaxed distance rows, chained back through `D`.
pub fn distance_classification_loss(
    features: &Matrix,
    prototypes: &Matrix,
    dist: &DistanceMatrix,
    labels: &[usize],
) -> Result<LossGrad> {
    check_labels(labels, dist.rows(), dist.values.cols())?;
    let probs = softmax_rows(&dist.values);
    let (loss, d_values) = cross_entropy_mean(&probs, labels)?;
    let (d_features, d_prototypes) = distance_backward(features, prototypes, dist, &d_values);
    Ok(LossGrad {
        loss,
        d_features,
        d_prototypes,
    })
}

/// Radius tracking loss over rows whose distance prediction equals the label.
/// With no such rows the loss and every gradient are zero.
pub fn radius_loss(
    dist: &DistanceMatrix,
    labels: &[usize],
    predictions: &[usize],
    radii: &[f64],
) -> Result<RadiusLoss> {
    let n = dist.values.cols();
    check_labels(labels, dist.rows(), n)?;
    if predictions.len() != labels.len() || radii.len() != n {
        return Err(Error::Shape {
            op: "radius_loss",
            left: (predictions.len(), radii.len()),
            right: (labels.len(), n),
        });
    }
    let contributors: Vec<usize> = (0..labels.len())
        .filter(|&i| predictions[i] == labels[i])
        .collect();
    let mut d_radii = vec![0.0; n];
    let mut d_distance = Matrix::zeros(dist.rows(), n);
    if contributors.is_empty() {
        return Ok(RadiusLoss {
            loss: 0.0,
            count: 0,
            d_radii,
            d_distance,
        });
    }
    let t = contributors.len() as f64;
    let mut loss = 0.0;
    for &i in &contributors {
        let y = labels[i];
        let resid = radii[y] - dist.values.get(i, y);
        loss += resid * resid;
        d_radii[y] += resid / t;
        d_distance.set(i, y, -resid / t);
    }
    Ok(RadiusLoss {
        loss: loss / (2.0 * t),
        count: contributors.len(),
        d_radii,
        d_distance,
    })
}

/// Loss breakdown and gradients for the net, the prototypes and the radiuses.
#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub breakdown: LossBreakdown,
    pub net: NetGradients,
    pub prototypes: Matrix,
    pub radii: Vec<f64>,
}

impl TotalLoss {
    /// Gradient tensors in the order used by [`fit`]: net, prototypes, radiuses.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.net.tensors();
        out.push(self.prototypes.as_slice());
        out.push(&self.radii);
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }
}

pub fn total_loss(
    net: &ExpandableNet,
    bank: &PrototypeBank,
    batch: &Matrix,
    labels: &[usize],
    weights: &LossWeights,
) -> Result<TotalLoss> {
    if bank.num_categories() != net.num_categories() {
        return Err(Error::InvalidInput(format!(
            "bank has {} categories, net has {}",
            bank.num_categories(),
            net.num_categories()
        )));
    }
    let trace = net.forward_trace(batch)?;
    let features = trace.logits();
    let prototypes = bank.prototypes();

    let (loss1, mut upstream) = cross_entropy_mean(&softmax_rows(features), labels)?;
    let l21 = prototype_l2_loss(features, prototypes, labels)?;
    let dist = distance_matrix(features, bank)?;
    let l22 = distance_classification_loss(features, prototypes, &dist, labels)?;
    let l3 = radius_loss(&dist, labels, &dist.predictions(), bank.radii())?;

    let mut d_prototypes = Matrix::zeros(prototypes.rows(), prototypes.cols());
    {
        let up = upstream.as_mut_slice();
        let dp = d_prototypes.as_mut_slice();
        let w21 = weights.w1 * weights.omega;
        for (u, (a, b)) in up
            .iter_mut()
            .zip(l21.d_features.as_slice().iter().zip(l22.d_features.as_slice()))
        {
            *u += w21 * a + weights.w1 * b;
        }
        for (p, (a, b)) in dp
            .iter_mut()
            .zip(l21.d_prototypes.as_slice().iter().zip(l22.d_prototypes.as_slice()))
        {
            *p += w21 * a + weights.w1 * b;
        }
    }
    if weights.radius_backprop && weights.w2 > 0.0 && l3.count > 0 {
        let (df, dp) = distance_backward(features, prototypes, &dist, &l3.d_distance);
        for (u, g) in upstream.as_mut_slice().iter_mut().zip(df.as_slice()) {
            *u += weights.w2 * g;
        }
        for (p, g) in d_prototypes.as_mut_slice().iter_mut().zip(dp.as_slice()) {
            *p += weights.w2 * g;
        }
    }
    let radii = l3.d_radii.iter().map(|g| weights.w2 * g).collect();

    let net_grads = net.backward(&trace, &upstream)?;
    let loss2 = weights.omega * l21.loss + l22.loss;
    // w2 = 0 disables the radius module entirely
    let loss3 = if weights.w2 == 0.0 { 0.0 } else { l3.loss };
    let breakdown = LossBreakdown {
        loss1,
        loss21: l21.loss,
        loss22: l22.loss,
        loss2,
        loss3,
        total: loss1 + weights.w1 * loss2 + weights.w2 * loss3,
        correct: l3.count,
    };
    Ok(TotalLoss {
        breakdown,
        net: net_grads,
        prototypes: d_prototypes,
        radii,
    })
}
