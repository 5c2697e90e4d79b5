use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::incremental::StreamSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub known_count: usize,
    /// Stream samples drawn from every category, known or unknown.
    pub min_incremental_per_category: usize,
    /// Fraction of each category held out for testing.
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            known_count: 6,
            min_incremental_per_category: 10,
            test_fraction: 0.3,
        }
    }
}

/// Known/unknown partition of a dataset.
///
/// Stream samples carry no label; their labels live in `oracle_labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenSplit {
    pub known_labels: Vec<String>,
    pub unknown_labels: Vec<String>,
    pub initial_train: Vec<Sample>,
    pub incremental: Vec<StreamSample>,
    pub oracle_labels: BTreeMap<usize, String>,
    pub test: Vec<Sample>,
}

impl OpenSplit {
    pub fn is_known(&self, label: &str) -> bool {
        self.known_labels.iter().any(|l| l == label)
    }
}

/// Seeded category partition followed by a per-category sample partition.
///
/// Each category gives `round(test_fraction·n)` test samples and
/// `min_incremental_per_category` stream samples. The rest of a known
/// category forms the initial training set; the rest of an unknown category
/// is left out.
pub fn open_split(dataset: &Dataset, config: &SplitConfig, seed: u64) -> Result<OpenSplit> {
    let labels = dataset.labels();
    if config.known_count == 0 || config.known_count >= labels.len() {
        return Err(Error::Config(format!(
            "known_count must lie in [1, {}), got {}",
            labels.len(),
            config.known_count
        )));
    }
    if !(0.0..1.0).contains(&config.test_fraction) {
        return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = labels.clone();
    shuffled.shuffle(&mut rng);
    let mut known_labels = shuffled[..config.known_count].to_vec();
    let mut unknown_labels = shuffled[config.known_count..].to_vec();
    known_labels.sort();
    unknown_labels.sort();

    let mut by_label: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
    for s in &dataset.samples {
        by_label.entry(s.label.as_str()).or_default().push(s);
    }

    let mut initial_train = Vec::new();
    let mut stream_samples = Vec::new();
    let mut test = Vec::new();
    for label in &labels {
        let mut samples = by_label[label.as_str()].clone();
        samples.shuffle(&mut rng);
        let n = samples.len();
        let n_test = (config.test_fraction * n as f64).round() as usize;
        let n_inc = config.min_incremental_per_category;
        let known = known_labels.contains(label);
        let needed = n_test + n_inc + usize::from(known);
        if n < needed {
            return Err(Error::InvalidInput(format!(
                "category `{label}` has {n} samples, the split needs {needed}"
            )));
        }
        test.extend(samples[..n_test].iter().map(|s| (*s).clone()));
        stream_samples.extend(samples[n_test..n_test + n_inc].iter().map(|s| (*s).clone()));
        if known {
            initial_train.extend(samples[n_test + n_inc..].iter().map(|s| (*s).clone()));
        }
    }
    stream_samples.shuffle(&mut rng);

    let oracle_labels = stream_samples.iter().map(|s| (s.id, s.label.clone())).collect();
    let incremental = stream_samples
        .into_iter()
        .map(|s| StreamSample {
            id: s.id,
            input: s.features,
        })
        .collect();
    Ok(OpenSplit {
        known_labels,
        unknown_labels,
        initial_train,
        incremental,
        oracle_labels,
        test,
    })
}
