use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dataset::{inputs_of, Sample};
use crate::error::{Error, Result};
use crate::model::ExpandableNet;
use crate::numerics::{argmax, Matrix};
use crate::prototypes::{distance_matrix_with, PrototypeBank};

/// Closed-set top-1 accuracy split by the original known/unknown partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Top1Report {
    pub known_accuracy: f64,
    pub unknown_accuracy: f64,
    pub combined_accuracy: f64,
    pub known_samples: usize,
    pub unknown_samples: usize,
    /// Test samples whose label has no head column (always misclassified).
    pub missing_from_head: usize,
    pub per_category: BTreeMap<String, f64>,
}

/// Plain argmax classification, no rejection. Accuracy over an empty subset
/// is reported as 0 and carries zero weight in the combined figure.
pub fn evaluate_top1(
    net: &ExpandableNet,
    test: &[Sample],
    known_labels: &[String],
) -> Result<Top1Report> {
    if test.is_empty() {
        return Err(Error::InvalidInput("top-1 test set is empty".into()));
    }
    let dim = net.config().input_dim;
    let logits = net.forward(&inputs_of(test, dim))?;
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    let mut missing = 0;
    let mut per_cat: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (row, s) in logits.row_iter().zip(test) {
        let group = usize::from(!known_labels.contains(&s.label));
        totals[group] += 1;
        let correct = match net.category_index(&s.label) {
            Some(c) => argmax(row) == c,
            None => {
                missing += 1;
                false
            }
        };
        hits[group] += usize::from(correct);
        let e = per_cat.entry(s.label.clone()).or_default();
        e.0 += usize::from(correct);
        e.1 += 1;
    }
    let ratio = |h: usize, t: usize| if t == 0 { 0.0 } else { h as f64 / t as f64 };
    Ok(Top1Report {
        known_accuracy: ratio(hits[0], totals[0]),
        unknown_accuracy: ratio(hits[1], totals[1]),
        combined_accuracy: ratio(hits[0] + hits[1], totals[0] + totals[1]),
        known_samples: totals[0],
        unknown_samples: totals[1],
        missing_from_head: missing,
        per_category: per_cat
            .into_iter()
            .map(|(k, (h, t))| (k, ratio(h, t)))
            .collect(),
    })
}

/// How strongly prototypes separate categories compared with mean features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationStats {
    /// Mean diagonal entry of the category-mean distance matrix.
    pub diagonal_mean: f64,
    /// Mean off-diagonal entry of the same matrix.
    pub off_diagonal_mean: f64,
    /// Mean pairwise Euclidean distance between prototype rows.
    pub prototype_distance: f64,
    /// Mean pairwise Euclidean distance between per-category mean features.
    pub mean_feature_distance: f64,
}

/// Separation statistics computed from the net's features on a labeled set.
pub fn separation_stats(
    bank: &PrototypeBank,
    net: &ExpandableNet,
    inputs: &Matrix,
    labels: &[usize],
) -> Result<SeparationStats> {
    let features = net.forward(inputs)?;
    separation_from_features(bank, &features, labels)
}

/// Same as [`separation_stats`] for precomputed features. Categories without
/// samples are skipped in the category-mean statistics.
pub fn separation_from_features(
    bank: &PrototypeBank,
    features: &Matrix,
    labels: &[usize],
) -> Result<SeparationStats> {
    let n = bank.num_categories();
    let dist = distance_matrix_with(features, bank.prototypes(), bank.epsilon_dist())?;
    let mut mean_d = vec![vec![0.0; n]; n];
    let mut mean_f = vec![vec![0.0; features.cols()]; n];
    let mut counts = vec![0usize; n];
    for (i, &y) in labels.iter().enumerate() {
        if y >= n {
            return Err(Error::LabelOutOfRange {
                label: y,
                categories: n,
            });
        }
        counts[y] += 1;
        for (a, v) in mean_d[y].iter_mut().zip(dist.values.row(i)) {
            *a += v;
        }
        for (a, v) in mean_f[y].iter_mut().zip(features.row(i)) {
            *a += v;
        }
    }
    let present: Vec<usize> = (0..n).filter(|&c| counts[c] > 0).collect();
    for &c in &present {
        let k = counts[c] as f64;
        mean_d[c].iter_mut().for_each(|v| *v /= k);
        mean_f[c].iter_mut().for_each(|v| *v /= k);
    }

    let (mut diag, mut off, mut off_count) = (0.0, 0.0, 0usize);
    for &c in &present {
        for &j in &present {
            if c == j {
                diag += mean_d[c][j];
            } else {
                off += mean_d[c][j];
                off_count += 1;
            }
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let proto_rows: Vec<&[f64]> = all.iter().map(|&c| bank.prototypes().row(c)).collect();
    let feat_rows: Vec<&[f64]> = present.iter().map(|&c| mean_f[c].as_slice()).collect();
    Ok(SeparationStats {
        diagonal_mean: if present.is_empty() { 0.0 } else { diag / present.len() as f64 },
        off_diagonal_mean: if off_count == 0 { 0.0 } else { off / off_count as f64 },
        prototype_distance: mean_pairwise_distance(&proto_rows),
        mean_feature_distance: mean_pairwise_distance(&feat_rows),
    })
}

fn mean_pairwise_distance(rows: &[&[f64]]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            total += rows[i]
                .iter()
                .zip(rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}
