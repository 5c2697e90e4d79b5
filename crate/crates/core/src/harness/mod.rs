//! Datasets, open-world splits, evaluation and the experiment runner.

mod dataset;
mod eval;
mod experiment;
mod output;
mod split;
mod synthetic;

pub use dataset::{inputs_of, label_indices, load_dataset, save_dataset, Dataset, Sample};
pub use eval::{
    evaluate_top1, separation_from_features, separation_stats, SeparationStats, Top1Report,
};
pub use experiment::{
    derive_seed, run_experiment, run_suite, DataSource, DetectorSettings, ExperimentConfig, ExperimentReport,
    ExperimentRun, IncrementalSettings, LabelBudget, Method, SuiteSummary, TrainingSummary,
};
pub use output::{write_csv, write_json, write_run, write_training_log};
pub use split::{open_split, OpenSplit, SplitConfig};
pub use synthetic::{generate_synthetic, generate_with_centers, SyntheticSpec};
