//! Incremental training phase.
//!
//! Streamed samples are scored and passed through the detector. Samples
//! flagged unknown go to a labeling oracle; once one new category has
//! collected `trigger` labeled samples the head gains a column, the prototype
//! bank gains a row, the model is fine-tuned on a balanced few-shot set and
//! the thresholds are recalibrated for the enlarged category set.

mod init;
mod memory;
mod stream;

pub use init::{distance_weight_init, mean_normalized_alpha, odn_weight_init, WeightInit};
pub use memory::{CategoryBuffer, LabelOracle, MemoryBank};
pub use stream::{
    run_incremental_phase, IncrementalConfig, IncrementalOutcome, IncrementalSummary,
    IterationRecord, StreamSample,
};

use serde::{Deserialize, Serialize};

use crate::detector::{category_triplet, correct_rows, score_rows, ThresholdSet};
use crate::error::{Error, Result};
use crate::model::ExpandableNet;
use crate::numerics::Matrix;
use crate::prototypes::{distance_matrix, fit, LossWeights, PrototypeBank, TrainConfig, TrainingLog};

/// Adds `label` to the net and the prototype bank using `samples` (the
/// labeled trigger samples of the new category).
///
/// The new head column comes from `init`, the new bias is the mean of the
/// existing biases, the new prototype row is the mean post-expansion logit
/// vector of `samples`, and the new radius is the mean existing radius.
pub fn expand_category(
    net: &mut ExpandableNet,
    bank: &mut PrototypeBank,
    label: &str,
    samples: &Matrix,
    init: &WeightInit,
) -> Result<()> {
    if net.category_index(label).is_some() || bank.categories().iter().any(|c| c == label) {
        return Err(Error::DuplicateCategory(label.to_string()));
    }
    if samples.rows() == 0 {
        return Err(Error::InvalidInput("expansion needs at least one sample".into()));
    }
    let logits = net.forward(samples)?;
    let column = match *init {
        WeightInit::Distance => {
            let dist = distance_matrix(&logits, bank)?;
            let alpha = mean_normalized_alpha(&dist.values.to_rows())?;
            distance_weight_init(&alpha, net.head_columns())?
        }
        WeightInit::Odn { alpha, beta, m } => {
            let m = m.min(net.num_categories());
            odn_weight_init(&logits.to_rows(), net.head_columns(), alpha, beta, m)?
        }
    };
    let bias = net.head_bias().iter().sum::<f64>() / net.num_categories() as f64;
    net.expand_output_dim(label, column, bias)?;

    let expanded = net.forward(samples)?;
    let n1 = expanded.cols();
    let mut row = vec![0.0; n1];
    for r in expanded.row_iter() {
        for (acc, v) in row.iter_mut().zip(r) {
            *acc += v;
        }
    }
    let count = samples.rows() as f64;
    row.iter_mut().for_each(|v| *v /= count);
    bank.expand(label, &row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Learning-rate multiplier for the new head column.
    pub allometry: f64,
    pub weights: LossWeights,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.01,
            momentum: 0.9,
            allometry: 10.0,
            weights: LossWeights::default(),
            grad_clip: None,
            seed: 0,
        }
    }
}

/// Fine-tunes on `K` memory samples per existing category plus the `K`
/// samples of `new_category`, with the new head column trained `allometry`
/// times faster than everything else.
pub fn finetune_balanced(
    net: &mut ExpandableNet,
    bank: &mut PrototypeBank,
    memory: &MemoryBank,
    new_category: &str,
    new_samples: &Matrix,
    config: &FinetuneConfig,
) -> Result<TrainingLog> {
    let new_index = net
        .category_index(new_category)
        .ok_or_else(|| Error::InvalidInput(format!("`{new_category}` is not in the model")))?;
    let k = memory.k();
    if new_samples.rows() != k {
        return Err(Error::InvalidInput(format!(
            "balance training needs {k} new samples, got {}",
            new_samples.rows()
        )));
    }
    let mut inputs = Matrix::zeros(0, new_samples.cols());
    let mut labels = Vec::new();
    for (idx, name) in net.categories().iter().enumerate() {
        if idx == new_index {
            for r in new_samples.row_iter() {
                inputs.push_row(r)?;
            }
            labels.extend(std::iter::repeat_n(idx, k));
            continue;
        }
        let samples = memory.samples(name).ok_or_else(|| {
            Error::InvalidInput(format!("memory bank has no samples for `{name}`"))
        })?;
        if samples.len() != k {
            return Err(Error::InvalidInput(format!(
                "memory bank holds {} samples for `{name}`, expected {k}",
                samples.len()
            )));
        }
        for s in samples {
            inputs.push_row(s)?;
        }
        labels.extend(std::iter::repeat_n(idx, k));
    }
    let train = TrainConfig {
        epochs: config.epochs,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        momentum: config.momentum,
        weights: config.weights,
        grad_clip: config.grad_clip,
        seed: config.seed,
    };
    let scales = [(net.head_column_tensor(new_index), config.allometry)];
    fit(net, bank, &inputs, &labels, &train, &scales)
}

/// Recalibrates thresholds on the memory bank for the current category set.
///
/// A category without any correctly classified memory sample keeps its
/// previous triplet; a brand-new one falls back to all of its memory rows.
pub fn recalibrate(
    net: &ExpandableNet,
    bank: &PrototypeBank,
    memory: &MemoryBank,
    previous: &ThresholdSet,
) -> Result<ThresholdSet> {
    let (inputs, labels) = memory.labeled_set(net.categories())?;
    let scores = score_rows(net, bank, &inputs, previous.space)?;
    let n = net.num_categories();
    let correct = correct_rows(&scores, &labels, n);
    let mut triplets = Vec::with_capacity(n);
    for (c, rows) in correct.iter().enumerate() {
        let t = match category_triplet(rows, n, previous.eps_mu, previous.rho)? {
            Some(t) => t,
            None if c < previous.len() => previous.triplets[c],
            None => {
                let all: Vec<Vec<f64>> = labels
                    .iter()
                    .zip(scores.row_iter())
                    .filter(|(&y, _)| y == c)
                    .map(|(_, r)| r.to_vec())
                    .collect();
                category_triplet(&all, n, previous.eps_mu, previous.rho)?.ok_or_else(|| {
                    Error::EmptyCalibration {
                        category: net.categories()[c].clone(),
                    }
                })?
            }
        };
        triplets.push(t);
    }
    Ok(ThresholdSet {
        space: previous.space,
        eps_mu: previous.eps_mu,
        rho: previous.rho,
        categories: net.categories().to_vec(),
        triplets,
    })
}
