//! Dense linear algebra and the loss / optimizer primitives the rest of the
//! crate builds on. Everything is `f64`, row-major, and allocation is explicit.

mod gradcheck;
mod matrix;
mod optim;

pub use gradcheck::{finite_diff_grad, relative_error};
pub use matrix::Matrix;
pub use optim::{clip_global_norm, sgd_momentum_step, OptimizerState};

use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Largest and second largest entries of a row with at least two entries.
pub fn top_two(row: &[f64]) -> (usize, f64, f64) {
    let top = argmax(row);
    let second = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    (top, row[top], second)
}

/// Mean cross entropy of `probs` (softmax outputs) against integer labels.
///
/// Returns the loss and its gradient with respect to the pre-softmax logits,
/// `(probs - onehot) / S`.
pub fn cross_entropy_mean(probs: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if probs.rows() != labels.len() {
        return Err(Error::Shape {
            op: "cross_entropy_mean",
            left: probs.shape(),
            right: (labels.len(), 1),
        });
    }
    let s = probs.rows() as f64;
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= probs.cols() {
            return Err(Error::LabelOutOfRange {
                label,
                categories: probs.cols(),
            });
        }
        // Clamp keeps the loss finite when a probability underflows to zero.
        loss -= probs.get(i, label).max(f64::MIN_POSITIVE).ln();
        let row = grad.row_mut(i);
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Ok((loss / s, grad))
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
