use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{inputs_of, label_indices, load_dataset, Dataset, Sample};
use super::eval::{evaluate_top1, separation_stats, SeparationStats, Top1Report};
use super::split::{open_split, OpenSplit, SplitConfig};
use super::synthetic::{generate_synthetic, SyntheticSpec};
use crate::detector::{
    calibrate_model, evaluate_detection, DetectionMetrics, DetectionRecord, ScoreSpace,
    DEFAULT_EPS_MU, DEFAULT_RHO,
};
use crate::error::{Error, Result};
use crate::incremental::{
    run_incremental_phase, FinetuneConfig, IncrementalConfig, IncrementalSummary,
    IterationRecord, LabelOracle, MemoryBank, WeightInit,
};
use crate::model::{ExpandableNet, ModelConfig};
use crate::prototypes::{train_initial, LossWeights, PrototypeBank, TrainConfig, TrainingLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Full objective, distance-space detection, distance-based init.
    PodnRadius,
    /// As `PodnRadius` with the radius term switched off.
    Podn,
    /// Plain cross-entropy training, logit-space detection, ODN init.
    OdnBaseline,
    /// Closed-set training on a label budget matched to a `PodnRadius` run.
    ClosedBaseline,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::PodnRadius,
        Method::Podn,
        Method::OdnBaseline,
        Method::ClosedBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::PodnRadius => "podn_radius",
            Method::Podn => "podn",
            Method::OdnBaseline => "odn_baseline",
            Method::ClosedBaseline => "closed_baseline",
        }
    }

    /// Loss weights this method trains with, given the configured ones.
    pub fn loss_weights(self, configured: LossWeights) -> LossWeights {
        match self {
            Method::PodnRadius => configured,
            Method::Podn => LossWeights {
                w2: 0.0,
                ..configured
            },
            Method::OdnBaseline | Method::ClosedBaseline => LossWeights {
                w1: 0.0,
                w2: 0.0,
                ..configured
            },
        }
    }

    pub fn score_space(self) -> ScoreSpace {
        match self {
            Method::OdnBaseline => ScoreSpace::Feature,
            _ => ScoreSpace::Distance,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// The generator seed is derived from both `spec.seed` and the run seed.
    Synthetic(SyntheticSpec),
    Csv(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSettings {
    pub eps_mu: f64,
    pub rho: f64,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            eps_mu: DEFAULT_EPS_MU,
            rho: DEFAULT_RHO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IncrementalSettings {
    pub trigger: usize,
    pub memory_k: usize,
    pub allometry: f64,
    pub finetune_epochs: usize,
    pub finetune_learning_rate: f64,
    pub finetune_batch_size: usize,
    pub odn_alpha: f64,
    pub odn_beta: f64,
    pub odn_m: usize,
}

impl Default for IncrementalSettings {
    fn default() -> Self {
        let ft = FinetuneConfig::default();
        Self {
            trigger: 5,
            memory_k: 5,
            allometry: ft.allometry,
            finetune_epochs: ft.epochs,
            finetune_learning_rate: ft.learning_rate,
            finetune_batch_size: ft.batch_size,
            odn_alpha: 0.5,
            odn_beta: 0.5,
            odn_m: 3,
        }
    }
}

/// Everything that determines a run, together with `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: u64,
    pub data: DataSource,
    pub split: SplitConfig,
    pub hidden_dims: Vec<usize>,
    pub train: TrainConfig,
    pub detector: DetectorSettings,
    pub incremental: IncrementalSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::PodnRadius,
            seed: 0,
            data: DataSource::default(),
            split: SplitConfig::default(),
            hidden_dims: vec![32],
            train: TrainConfig::default(),
            detector: DetectorSettings::default(),
            incremental: IncrementalSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn with_method(&self, method: Method) -> Self {
        Self {
            method,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelBudget {
    /// Labeled samples in the initial training set.
    pub initial_train: usize,
    /// Stream labels used: oracle answers, or the matched budget for the
    /// closed baseline.
    pub stream_labels: usize,
    pub total: usize,
    pub oracle_consulted: bool,
    pub expansions: usize,
    pub labels_per_new_category: Option<f64>,
    pub labels_per_category: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: Method,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub known_labels: Vec<String>,
    pub unknown_labels: Vec<String>,
    /// Phase 1. Absent for the closed baseline, which has no detector.
    pub detection: Option<DetectionMetrics>,
    /// Phase 2.
    pub top1: Top1Report,
    pub budget: LabelBudget,
    pub incremental: Option<IncrementalSummary>,
    pub initial_training: Option<TrainingSummary>,
    /// Model right after initial training, on its own training set.
    pub separation: SeparationStats,
    /// Final model on the test samples whose category is in the head.
    pub separation_final: SeparationStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub final_distance_accuracy: f64,
    pub max_loss3: f64,
}

impl TrainingSummary {
    fn from_log(log: &TrainingLog) -> Option<Self> {
        let last = log.last()?;
        Some(Self {
            epochs: log.epochs.len(),
            final_loss: last.losses.total,
            final_accuracy: last.accuracy,
            final_distance_accuracy: last.distance_accuracy,
            max_loss3: log
                .epochs
                .iter()
                .map(|e| e.losses.loss3)
                .fold(0.0, f64::max),
        })
    }
}

/// A report plus the per-epoch and per-sample logs behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub training_log: TrainingLog,
    pub detection_records: Vec<DetectionRecord>,
    pub iterations: Vec<IterationRecord>,
}

const STAGE_DATA: u64 = 1;
const STAGE_SPLIT: u64 = 2;
const STAGE_MODEL: u64 = 3;
const STAGE_TRAIN: u64 = 4;
const STAGE_MEMORY: u64 = 5;
const STAGE_FINETUNE: u64 = 6;

/// Independent per-stage seeds so that changing one stage's consumption of
/// randomness leaves the others untouched.
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng.next_u64()
}

fn load_data(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.data {
        DataSource::Synthetic(spec) => generate_synthetic(&SyntheticSpec {
            seed: derive_seed(config.seed, STAGE_DATA) ^ spec.seed,
            ..spec.clone()
        }),
        DataSource::Csv(path) => load_dataset(path),
    }
}

fn categories_of(samples: &[Sample], categories: &[String]) -> Result<Vec<usize>> {
    label_indices(samples, categories)
        .into_iter()
        .zip(samples)
        .map(|(idx, s)| {
            idx.ok_or_else(|| {
                Error::InvalidInput(format!("sample {} has unregistered label `{}`", s.id, s.label))
            })
        })
        .collect()
}

struct Trained {
    net: ExpandableNet,
    bank: PrototypeBank,
    log: TrainingLog,
}

fn train_on(
    config: &ExperimentConfig,
    samples: &[Sample],
    categories: Vec<String>,
    dim: usize,
) -> Result<Trained> {
    let labels = categories_of(samples, &categories)?;
    let model_config = ModelConfig {
        input_dim: dim,
        hidden_dims: config.hidden_dims.clone(),
        initial_categories: categories.len(),
        seed: derive_seed(config.seed, STAGE_MODEL),
    };
    let train = TrainConfig {
        weights: config.method.loss_weights(config.train.weights),
        seed: derive_seed(config.seed, STAGE_TRAIN),
        ..config.train.clone()
    };
    let m = train_initial(&inputs_of(samples, dim), &labels, categories, model_config, &train)?;
    Ok(Trained {
        net: m.net,
        bank: m.bank,
        log: m.log,
    })
}

fn in_head<'a>(net: &ExpandableNet, samples: &'a [Sample]) -> Vec<&'a Sample> {
    samples
        .iter()
        .filter(|s| net.category_index(&s.label).is_some())
        .collect()
}

fn separation_on(
    net: &ExpandableNet,
    bank: &PrototypeBank,
    samples: &[&Sample],
    dim: usize,
) -> Result<SeparationStats> {
    let labels: Vec<usize> = samples
        .iter()
        .filter_map(|s| net.category_index(&s.label))
        .collect();
    separation_stats(bank, net, &inputs_of(samples.iter().copied(), dim), &labels)
}

/// Runs the two-phase pipeline for one (config, seed).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRun> {
    config.train.validate()?;
    let data = load_data(config)?;
    let split = open_split(&data, &config.split, derive_seed(config.seed, STAGE_SPLIT))?;
    match config.method {
        Method::ClosedBaseline => run_closed(config, &data, &split),
        _ => run_open(config, &data, &split),
    }
}

fn run_open(config: &ExperimentConfig, data: &Dataset, split: &OpenSplit) -> Result<ExperimentRun> {
    let dim = data.feature_dim;
    let method = config.method;
    let Trained {
        mut net,
        mut bank,
        log,
    } = train_on(config, &split.initial_train, split.known_labels.clone(), dim)?;

    let train_inputs = inputs_of(&split.initial_train, dim);
    let train_labels = categories_of(&split.initial_train, &split.known_labels)?;
    let thresholds = calibrate_model(
        &net,
        &bank,
        &train_inputs,
        &train_labels,
        method.score_space(),
        config.detector.eps_mu,
        config.detector.rho,
    )?;

    let test_inputs = inputs_of(&split.test, dim);
    let ids: Vec<usize> = split.test.iter().map(|s| s.id).collect();
    let truth: Vec<String> = split.test.iter().map(|s| s.label.clone()).collect();
    let detection = evaluate_detection(&net, &bank, &thresholds, &test_inputs, &ids, &truth)?;

    let separation = separation_stats(&bank, &net, &train_inputs, &train_labels)?;

    let inc = &config.incremental;
    let init = match method {
        Method::OdnBaseline => WeightInit::Odn {
            alpha: inc.odn_alpha,
            beta: inc.odn_beta,
            m: inc.odn_m,
        },
        _ => WeightInit::Distance,
    };
    let inc_config = IncrementalConfig {
        trigger: inc.trigger,
        init,
        finetune: FinetuneConfig {
            epochs: inc.finetune_epochs,
            batch_size: inc.finetune_batch_size,
            learning_rate: inc.finetune_learning_rate,
            momentum: config.train.momentum,
            allometry: inc.allometry,
            weights: method.loss_weights(config.train.weights),
            grad_clip: config.train.grad_clip,
            seed: derive_seed(config.seed, STAGE_FINETUNE),
        },
    };
    let mut memory = MemoryBank::from_training(
        &train_inputs,
        &train_labels,
        &split.known_labels,
        inc.memory_k,
        derive_seed(config.seed, STAGE_MEMORY),
    )?;
    let mut oracle = LabelOracle::new(split.oracle_labels.clone());
    let outcome = run_incremental_phase(
        &mut net,
        &mut bank,
        thresholds,
        &split.incremental,
        &mut oracle,
        &mut memory,
        &inc_config,
    )?;

    let top1 = evaluate_top1(&net, &split.test, &split.known_labels)?;
    let separation_final = separation_on(&net, &bank, &in_head(&net, &split.test), dim)?;
    let summary = outcome.summary;
    let budget = LabelBudget {
        initial_train: split.initial_train.len(),
        stream_labels: summary.labels_consumed,
        total: split.initial_train.len() + summary.labels_consumed,
        oracle_consulted: summary.labels_consumed > 0,
        expansions: summary.expansions.len(),
        labels_per_new_category: summary.labels_per_new_category,
        labels_per_category: summary.labels_per_category.clone(),
    };
    Ok(ExperimentRun {
        report: ExperimentReport {
            method,
            seed: config.seed,
            config: config.clone(),
            known_labels: split.known_labels.clone(),
            unknown_labels: split.unknown_labels.clone(),
            detection: Some(detection.metrics),
            top1,
            budget,
            incremental: Some(summary),
            initial_training: TrainingSummary::from_log(&log),
            separation,
            separation_final,
        },
        training_log: log,
        detection_records: detection.records,
        iterations: outcome.records,
    })
}

/// Trains from scratch on the initial set plus the first `B` stream samples
/// with their true labels, where `B` is the oracle budget a `podn_radius`
/// run with the same config and seed consumed. The oracle is never used.
fn run_closed(config: &ExperimentConfig, data: &Dataset, split: &OpenSplit) -> Result<ExperimentRun> {
    let reference = run_open(&config.with_method(Method::PodnRadius), data, split)?;
    let budget = reference.report.budget.stream_labels;
    let dim = data.feature_dim;

    let mut samples = split.initial_train.clone();
    let mut categories = split.known_labels.clone();
    let mut per_category: BTreeMap<String, usize> = BTreeMap::new();
    for s in split.incremental.iter().take(budget) {
        let label = split.oracle_labels.get(&s.id).ok_or(Error::OracleMiss(s.id))?;
        if !categories.contains(label) {
            categories.push(label.clone());
        }
        *per_category.entry(label.clone()).or_default() += 1;
        samples.push(Sample {
            id: s.id,
            label: label.clone(),
            features: s.input.clone(),
        });
    }
    let added = categories.len() - split.known_labels.len();
    let Trained { net, bank, log } = train_on(config, &samples, categories, dim)?;

    let top1 = evaluate_top1(&net, &split.test, &split.known_labels)?;
    let train_refs: Vec<&Sample> = samples.iter().collect();
    let separation = separation_on(&net, &bank, &train_refs, dim)?;
    let separation_final = separation_on(&net, &bank, &in_head(&net, &split.test), dim)?;
    Ok(ExperimentRun {
        report: ExperimentReport {
            method: Method::ClosedBaseline,
            seed: config.seed,
            config: config.clone(),
            known_labels: split.known_labels.clone(),
            unknown_labels: split.unknown_labels.clone(),
            detection: None,
            top1,
            budget: LabelBudget {
                initial_train: split.initial_train.len(),
                stream_labels: budget,
                total: split.initial_train.len() + budget,
                oracle_consulted: false,
                expansions: added,
                labels_per_new_category: None,
                labels_per_category: per_category,
            },
            incremental: None,
            initial_training: TrainingSummary::from_log(&log),
            separation,
            separation_final,
        },
        training_log: log,
        detection_records: Vec::new(),
        iterations: Vec::new(),
    })
}

/// Mean of each headline metric across the runs of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub mean_f1: Option<f64>,
    pub mean_combined_top1: f64,
    pub mean_known_top1: f64,
    pub mean_unknown_top1: f64,
    pub mean_labels_per_new_category: Option<f64>,
    /// Seeds where prototypes are spread at least as far apart as the
    /// per-category mean features.
    pub separation_wins: usize,
}

impl SuiteSummary {
    pub fn from_reports(method: Method, reports: &[&ExperimentReport]) -> Self {
        let mean = |v: Vec<f64>| {
            if v.is_empty() {
                None
            } else {
                Some(v.iter().sum::<f64>() / v.len() as f64)
            }
        };
        let f1 = reports.iter().filter_map(|r| r.detection.map(|d| d.f1)).collect();
        let lpc = reports
            .iter()
            .filter_map(|r| r.budget.labels_per_new_category)
            .collect();
        Self {
            method,
            seeds: reports.iter().map(|r| r.seed).collect(),
            mean_f1: mean(f1),
            mean_combined_top1: mean(reports.iter().map(|r| r.top1.combined_accuracy).collect())
                .unwrap_or(0.0),
            mean_known_top1: mean(reports.iter().map(|r| r.top1.known_accuracy).collect())
                .unwrap_or(0.0),
            mean_unknown_top1: mean(reports.iter().map(|r| r.top1.unknown_accuracy).collect())
                .unwrap_or(0.0),
            mean_labels_per_new_category: mean(lpc),
            separation_wins: reports
                .iter()
                .filter(|r| r.separation.prototype_distance >= r.separation.mean_feature_distance)
                .count(),
        }
    }
}

/// Runs every (method, seed) pair in parallel. Results come back in
/// method-major, seed-minor order regardless of scheduling.
pub fn run_suite(
    base: &ExperimentConfig,
    methods: &[Method],
    seeds: &[u64],
) -> Result<(Vec<ExperimentRun>, Vec<SuiteSummary>)> {
    let jobs: Vec<ExperimentConfig> = methods
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| base.with_method(m).with_seed(s)))
        .collect();
    let runs: Vec<ExperimentRun> = jobs
        .par_iter()
        .map(run_experiment)
        .collect::<Result<_>>()?;
    let summaries = methods
        .iter()
        .map(|&m| {
            let reports: Vec<&ExperimentReport> = runs
                .iter()
                .filter(|r| r.report.method == m)
                .map(|r| &r.report)
                .collect();
            SuiteSummary::from_reports(m, &reports)
        })
        .collect();
    Ok((runs, summaries))
}
