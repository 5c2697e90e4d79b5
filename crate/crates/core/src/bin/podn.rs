use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use podn::detector::{calibrate_model, evaluate_detection, ScoreSpace, ThresholdSet};
use podn::harness::{
    generate_synthetic, inputs_of, label_indices, load_dataset, run_experiment, run_suite,
    save_dataset, write_csv, write_json, write_run, write_training_log, ExperimentConfig, Method, SyntheticSpec,
};
use podn::model::{ExpandableNet, ModelConfig};
use podn::prototypes::{train_initial, PrototypeBank};
use podn::{Error, Result};

#[derive(Parser)]
#[command(name = "podn", version, about = "Prototype-based open-set recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic Gaussian-cluster dataset as CSV.
    Generate {
        #[arg(long, default_value_t = 11)]
        clusters: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        per_cluster: usize,
        #[arg(long, default_value_t = 6.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full two-phase experiment once.
    Run {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run several methods over a range of seeds and summarize.
    Suite {
        #[command(flatten)]
        overrides: Overrides,
        /// Seeds 0..seeds.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Comma-separated method names; all methods by default.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train a model and prototypes on every category of a CSV dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Thresholds are calibrated in this score space.
        #[arg(long, default_value = "distance", value_parser = parse_space)]
        space: ScoreSpace,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Apply a trained model and thresholds to a CSV dataset.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        prototypes: PathBuf,
        #[arg(long)]
        thresholds: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Config file plus per-field overrides; flags win over the file.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eps_mu: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    w1: Option<f64>,
    #[arg(long)]
    w2: Option<f64>,
    #[arg(long)]
    trigger: Option<usize>,
    #[arg(long)]
    allometry: Option<f64>,
    #[arg(long)]
    memory_k: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
                serde_json::from_str(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.method {
            c.method = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.eps_mu {
            c.detector.eps_mu = v;
        }
        if let Some(v) = self.rho {
            c.detector.rho = v;
        }
        if let Some(v) = self.omega {
            c.train.weights.omega = v;
        }
        if let Some(v) = self.w1 {
            c.train.weights.w1 = v;
        }
        if let Some(v) = self.w2 {
            c.train.weights.w2 = v;
        }
        if let Some(v) = self.trigger {
            c.incremental.trigger = v;
        }
        if let Some(v) = self.allometry {
            c.incremental.allometry = v;
        }
        if let Some(v) = self.memory_k {
            c.incremental.memory_k = v;
        }
        Ok(c)
    }
}

fn parse_space(s: &str) -> std::result::Result<ScoreSpace, String> {
    match s {
        "distance" => Ok(ScoreSpace::Distance),
        "feature" => Ok(ScoreSpace::Feature),
        _ => Err(format!("expected `distance` or `feature`, got `{s}`")),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            clusters,
            dim,
            per_cluster,
            separation,
            sigma,
            seed,
            out,
        } => {
            let ds = generate_synthetic(&SyntheticSpec {
                clusters,
                dim,
                per_cluster,
                separation,
                sigma,
                seed,
            })?;
            save_dataset(&ds, &out)?;
            print_json(&json!({ "samples": ds.len(), "path": out }))
        }
        Command::Run { overrides, out_dir } => {
            let run = run_experiment(&overrides.resolve()?)?;
            if let Some(dir) = out_dir {
                write_run(&run, &dir)?;
            }
            print_json(&serde_json::to_value(&run.report)?)
        }
        Command::Suite {
            overrides,
            seeds,
            methods,
            out_dir,
        } => {
            let base = overrides.resolve()?;
            let methods = if methods.is_empty() {
                Method::ALL.to_vec()
            } else {
                methods
            };
            let seeds: Vec<u64> = (0..seeds).collect();
            let (runs, summaries) = run_suite(&base, &methods, &seeds)?;
            if let Some(dir) = out_dir {
                for run in &runs {
                    let sub = dir.join(format!("{}_seed{}", run.report.method.name(), run.report.seed));
                    write_run(run, &sub)?;
                }
                write_json(&summaries, &dir.join("suite_summary.json"))?;
            }
            print_json(&serde_json::to_value(&summaries)?)
        }
        Command::Train {
            data,
            overrides,
            space,
            out_dir,
        } => {
            let config = overrides.resolve()?;
            let ds = load_dataset(&data)?;
            let categories = ds.labels();
            let labels: Vec<usize> = label_indices(&ds.samples, &categories)
                .into_iter()
                .flatten()
                .collect();
            let inputs = inputs_of(&ds.samples, ds.feature_dim);
            let model_config = ModelConfig {
                input_dim: ds.feature_dim,
                hidden_dims: config.hidden_dims.clone(),
                initial_categories: categories.len(),
                seed: config.seed,
            };
            let train = podn::prototypes::TrainConfig {
                weights: config.method.loss_weights(config.train.weights),
                seed: config.seed,
                ..config.train.clone()
            };
            let model = train_initial(&inputs, &labels, categories, model_config, &train)?;
            let thresholds = calibrate_model(
                &model.net,
                &model.bank,
                &inputs,
                &labels,
                space,
                config.detector.eps_mu,
                config.detector.rho,
            )?;
            create_dir(&out_dir)?;
            model.net.save_json(&out_dir.join("model.json"))?;
            model.bank.save_json(&out_dir.join("prototypes.json"))?;
            thresholds.save_json(&out_dir.join("thresholds.json"))?;
            write_training_log(&model.log, &out_dir.join("training_log.csv"))?;
            let last = model.log.last().map(|e| e.accuracy);
            print_json(&json!({ "epochs": model.log.epochs.len(), "train_accuracy": last }))
        }
        Command::Detect {
            model,
            prototypes,
            thresholds,
            data,
            out_dir,
        } => {
            let net = ExpandableNet::load_json(&model)?;
            let bank = PrototypeBank::load_json(&prototypes)?;
            let thresholds = ThresholdSet::load_json(&thresholds)?;
            let ds = load_dataset(&data)?;
            let ids: Vec<usize> = ds.samples.iter().map(|s| s.id).collect();
            let truth: Vec<String> = ds.samples.iter().map(|s| s.label.clone()).collect();
            let report = evaluate_detection(
                &net,
                &bank,
                &thresholds,
                &inputs_of(&ds.samples, ds.feature_dim),
                &ids,
                &truth,
            )?;
            create_dir(&out_dir)?;
            write_csv(&report.records, &out_dir.join("detection.csv"))?;
            write_json(&report.metrics, &out_dir.join("detection_summary.json"))?;
            print_json(&serde_json::to_value(report.metrics)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let obj = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{obj}");
            ExitCode::from(2)
        }
    }
}
