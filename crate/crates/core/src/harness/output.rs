use std::fs;
use std::path::Path;

use serde::Serialize;

use super::experiment::ExperimentRun;
use crate::error::{Error, Result};
use crate::prototypes::TrainingLog;

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// One CSV row per record; nested structs must be flattened by the caller.
pub fn write_csv<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    loss1: f64,
    loss21: f64,
    loss22: f64,
    loss2: f64,
    loss3: f64,
    total: f64,
    accuracy: f64,
    distance_accuracy: f64,
}

#[derive(Serialize)]
struct IterationRow<'a> {
    iteration: usize,
    id: usize,
    decision: &'a str,
    top: f64,
    margin: f64,
    oracle: &'a str,
    expansion: &'a str,
    categories: usize,
}

/// Per-epoch loss components and accuracies, one row per epoch.
pub fn write_training_log(log: &TrainingLog, path: &Path) -> Result<()> {
    let rows: Vec<EpochRow> = log
        .epochs
        .iter()
        .map(|e| EpochRow {
            epoch: e.epoch,
            loss1: e.losses.loss1,
            loss21: e.losses.loss21,
            loss22: e.losses.loss22,
            loss2: e.losses.loss2,
            loss3: e.losses.loss3,
            total: e.losses.total,
            accuracy: e.accuracy,
            distance_accuracy: e.distance_accuracy,
        })
        .collect();
    write_csv(&rows, path)
}

/// Writes the report and its logs into `dir`:
/// `report.json`, `training_log.csv`, `detection.csv`,
/// `detection_summary.json`, `incremental_log.csv`, `incremental_summary.json`.
/// Files that do not apply to the run's method are skipped.
pub fn write_run(run: &ExperimentRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    write_json(&run.report, &dir.join("report.json"))?;
    write_training_log(&run.training_log, &dir.join("training_log.csv"))?;
    if let Some(metrics) = &run.report.detection {
        write_csv(&run.detection_records, &dir.join("detection.csv"))?;
        write_json(metrics, &dir.join("detection_summary.json"))?;
    }
    if let Some(summary) = &run.report.incremental {
        let rows: Vec<IterationRow> = run
            .iterations
            .iter()
            .map(|r| IterationRow {
                iteration: r.iteration,
                id: r.id,
                decision: &r.decision,
                top: r.top,
                margin: r.margin,
                oracle: r.oracle.as_deref().unwrap_or(""),
                expansion: r.expansion.as_deref().unwrap_or(""),
                categories: r.categories,
            })
            .collect();
        write_csv(&rows, &dir.join("incremental_log.csv"))?;
        write_json(summary, &dir.join("incremental_summary.json"))?;
    }
    Ok(())
}
