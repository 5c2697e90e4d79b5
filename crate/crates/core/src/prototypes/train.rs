use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{distance_matrix, total_loss, LossBreakdown, LossWeights, PrototypeBank};
use crate::error::{Error, Result};
use crate::model::{ExpandableNet, ModelConfig};
use crate::numerics::{argmax, clip_global_norm, sgd_momentum_step, Matrix, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weights: LossWeights,
    /// Joint L2 norm cap on each step's gradient; no cap when absent.
    pub grad_clip: Option<f64>,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            weights: LossWeights::default(),
            grad_clip: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        self.weights.validate()
    }
}

/// Full-set statistics recorded after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    /// Argmax-of-logits accuracy.
    pub accuracy: f64,
    /// Nearest-prototype (argmax of D) accuracy.
    pub distance_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone)]
pub struct InitialModel {
    pub net: ExpandableNet,
    pub bank: PrototypeBank,
    pub log: TrainingLog,
}

/// Initial training phase: builds a fresh net and a zero prototype bank for
/// the known categories and trains them jointly on `total_loss`.
pub fn train_initial(
    inputs: &Matrix,
    labels: &[usize],
    categories: Vec<String>,
    model_config: ModelConfig,
    train_config: &TrainConfig,
) -> Result<InitialModel> {
    if inputs.rows() == 0 {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let n = categories.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "at least 2 known categories are required, got {n}"
        )));
    }
    if labels.len() != inputs.rows() {
        return Err(Error::Shape {
            op: "train_initial",
            left: inputs.shape(),
            right: (labels.len(), 1),
        });
    }
    let mut counts = vec![0usize; n];
    for &l in labels {
        if l >= n {
            return Err(Error::LabelOutOfRange {
                label: l,
                categories: n,
            });
        }
        counts[l] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidInput(format!(
            "category `{}` has no training samples",
            categories[empty]
        )));
    }
    let mut net = ExpandableNet::new(model_config, categories.clone())?;
    let mut bank = PrototypeBank::new(categories);
    let log = fit(&mut net, &mut bank, inputs, labels, train_config, &[])?;
    Ok(InitialModel { net, bank, log })
}

/// Mini-batch SGD with momentum on `total_loss`, updating the net, the
/// prototypes and the radiuses.
///
/// `lr_scales` lists `(tensor index, multiplier)` pairs over the net's tensor
/// order; prototypes and radiuses always use scale 1. A zero learning rate
/// evaluates without updating.
pub fn fit(
    net: &mut ExpandableNet,
    bank: &mut PrototypeBank,
    inputs: &Matrix,
    labels: &[usize],
    config: &TrainConfig,
    lr_scales: &[(usize, f64)],
) -> Result<TrainingLog> {
    config.validate()?;
    if inputs.rows() == 0 {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let mut shapes = net.parameter_shapes();
    shapes.push(bank.prototypes().as_slice().len());
    shapes.push(bank.radii().len());
    let mut optimizer = if config.learning_rate > 0.0 {
        let mut state = OptimizerState::new(&shapes, config.learning_rate, config.momentum)?;
        for &(tensor, scale) in lr_scales {
            state.set_lr_scale(tensor, scale)?;
        }
        Some(state)
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..inputs.rows()).collect();
    let mut log = TrainingLog::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        if let Some(state) = optimizer.as_mut() {
            for chunk in order.chunks(config.batch_size) {
                let batch = inputs.select_rows(chunk);
                let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let grads = total_loss(net, bank, &batch, &batch_labels, &config.weights)?;
                let mut owned: Vec<Vec<f64>> = grads.tensors().iter().map(|g| g.to_vec()).collect();
                if let Some(c) = config.grad_clip {
                    clip_global_norm(&mut owned, c);
                }
                let grad_refs: Vec<&[f64]> = owned.iter().map(Vec::as_slice).collect();
                let mut params = net.parameter_tensors_mut();
                let (p, r) = bank.tensors_mut();
                params.push(p);
                params.push(r);
                sgd_momentum_step(&mut params, &grad_refs, state)?;
                bank.clamp_radii();
            }
        }
        log.epochs.push(evaluate_epoch(epoch, net, bank, inputs, labels, &config.weights)?);
    }
    Ok(log)
}

fn evaluate_epoch(
    epoch: usize,
    net: &ExpandableNet,
    bank: &PrototypeBank,
    inputs: &Matrix,
    labels: &[usize],
    weights: &LossWeights,
) -> Result<EpochRecord> {
    let losses = total_loss(net, bank, inputs, labels, weights)?.breakdown;
    let logits = net.forward(inputs)?;
    let dist = distance_matrix(&logits, bank)?;
    let s = labels.len() as f64;
    let accuracy = logits
        .row_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count() as f64
        / s;
    let distance_accuracy = dist
        .predictions()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count() as f64
        / s;
    Ok(EpochRecord {
        epoch,
        losses,
        accuracy,
        distance_accuracy,
    })
}
