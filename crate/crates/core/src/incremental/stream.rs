use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{expand_category, finetune_balanced, recalibrate, FinetuneConfig, WeightInit};
use super::{CategoryBuffer, LabelOracle, MemoryBank};
use crate::detector::{decide, score_rows, Outcome, ThresholdSet};
use crate::error::{Error, Result};
use crate::model::ExpandableNet;
use crate::numerics::Matrix;
use crate::prototypes::PrototypeBank;

/// An unlabeled stream sample; its label is known only to the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSample {
    pub id: usize,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IncrementalConfig {
    /// Labeled samples of one new category that trigger an expansion.
    pub trigger: usize,
    pub init: WeightInit,
    pub finetune: FinetuneConfig,
}

impl Default for IncrementalConfig {
    fn default() -> Self {
        Self {
            trigger: 5,
            init: WeightInit::Distance,
            finetune: FinetuneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub id: usize,
    pub decision: String,
    pub top: f64,
    pub margin: f64,
    /// Label returned by the oracle, when it was consulted.
    pub oracle: Option<String>,
    /// Category incorporated right after this sample, if any.
    pub expansion: Option<String>,
    /// Category count after processing this sample.
    pub categories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalSummary {
    pub samples: usize,
    pub unknown_decisions: usize,
    pub labels_consumed: usize,
    /// Labels spent on samples of categories the model started with.
    pub labels_on_initial: usize,
    pub labels_per_category: BTreeMap<String, usize>,
    /// Incorporated categories in order.
    pub expansions: Vec<String>,
    /// Labels spent on categories outside the initial head, divided by the
    /// number of expansions; absent without expansions.
    pub labels_per_new_category: Option<f64>,
    pub final_categories: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalOutcome {
    pub thresholds: ThresholdSet,
    pub records: Vec<IterationRecord>,
    pub summary: IncrementalSummary,
}

/// Processes the stream in order, growing `net` and `bank` in place.
pub fn run_incremental_phase(
    net: &mut ExpandableNet,
    bank: &mut PrototypeBank,
    thresholds: ThresholdSet,
    stream: &[StreamSample],
    oracle: &mut LabelOracle,
    memory: &mut MemoryBank,
    config: &IncrementalConfig,
) -> Result<IncrementalOutcome> {
    if config.trigger == 0 || config.trigger < memory.k() {
        return Err(Error::Config(format!(
            "trigger ({}) must be at least the memory size K ({})",
            config.trigger,
            memory.k()
        )));
    }
    let initial: Vec<String> = net.categories().to_vec();
    let mut thresholds = thresholds;
    let mut buffer = CategoryBuffer::default();
    let mut records = Vec::with_capacity(stream.len());
    let mut expansions = Vec::new();
    let mut unknown_decisions = 0;

    for (iteration, sample) in stream.iter().enumerate() {
        let x = Matrix::new(1, sample.input.len(), sample.input.clone())?;
        let scores = score_rows(net, bank, &x, thresholds.space)?;
        let decision = decide(scores.row(0), &thresholds);
        let mut record = IterationRecord {
            iteration,
            id: sample.id,
            decision: match decision.outcome {
                Outcome::Accept(c) => net.categories()[c].clone(),
                Outcome::Unknown => "unknown".into(),
            },
            top: decision.top_value,
            margin: decision.margin,
            oracle: None,
            expansion: None,
            categories: net.num_categories(),
        };

        if decision.is_unknown() {
            unknown_decisions += 1;
            let label = oracle.label(sample.id)?;
            record.oracle = Some(label.clone());
            // Labels of categories the model already has do not start a buffer.
            if net.category_index(&label).is_none()
                && buffer.push(&label, sample.id, sample.input.clone()) == config.trigger
            {
                let rows: Vec<Vec<f64>> = buffer.take(&label).into_iter().map(|(_, r)| r).collect();
                let trigger_samples = Matrix::from_rows(&rows)?;
                expand_category(net, bank, &label, &trigger_samples, &config.init)?;

                let k = memory.k();
                let new_samples = Matrix::from_rows(&rows[..k])?;
                let mut finetune = config.finetune.clone();
                finetune.seed = finetune.seed.wrapping_add(expansions.len() as u64);
                finetune_balanced(net, bank, memory, &label, &new_samples, &finetune)?;
                memory.insert(&label, rows[..k].to_vec())?;
                thresholds = recalibrate(net, bank, memory, &thresholds)?;

                record.expansion = Some(label.clone());
                record.categories = net.num_categories();
                expansions.push(label);
            }
        }
        records.push(record);
    }

    let labels_consumed = oracle.labels_consumed();
    let labels_on_initial: usize = oracle
        .consumption()
        .iter()
        .filter(|(label, _)| initial.contains(label))
        .map(|(_, n)| n)
        .sum();
    let labels_on_new = labels_consumed - labels_on_initial;
    let summary = IncrementalSummary {
        samples: stream.len(),
        unknown_decisions,
        labels_consumed,
        labels_on_initial,
        labels_per_category: oracle.consumption().clone(),
        labels_per_new_category: (!expansions.is_empty())
            .then(|| labels_on_new as f64 / expansions.len() as f64),
        expansions,
        final_categories: net.num_categories(),
    };
    Ok(IncrementalOutcome {
        thresholds,
        records,
        summary,
    })
}
