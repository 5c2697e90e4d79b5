use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Ground-truth labels for streamed samples, metering every lookup.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelOracle {
    labels: BTreeMap<usize, String>,
    consumed: usize,
    per_category: BTreeMap<String, usize>,
}

impl LabelOracle {
    pub fn new(labels: BTreeMap<usize, String>) -> Self {
        Self {
            labels,
            consumed: 0,
            per_category: BTreeMap::new(),
        }
    }

    /// Reveals the label of `id` and charges one label to the budget.
    pub fn label(&mut self, id: usize) -> Result<String> {
        let label = self.labels.get(&id).cloned().ok_or(Error::OracleMiss(id))?;
        self.consumed += 1;
        *self.per_category.entry(label.clone()).or_default() += 1;
        Ok(label)
    }

    pub fn labels_consumed(&self) -> usize {
        self.consumed
    }

    pub fn consumption(&self) -> &BTreeMap<String, usize> {
        &self.per_category
    }
}

/// Labeled samples of not-yet-incorporated categories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryBuffer {
    pending: BTreeMap<String, Vec<(usize, Vec<f64>)>>,
}

impl CategoryBuffer {
    /// Adds a sample and returns the new buffer length for `label`.
    pub fn push(&mut self, label: &str, id: usize, input: Vec<f64>) -> usize {
        let entry = self.pending.entry(label.to_string()).or_default();
        entry.push((id, input));
        entry.len()
    }

    pub fn len(&self, label: &str) -> usize {
        self.pending.get(label).map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.pending.values().all(Vec::is_empty)
    }

    /// Removes and returns everything buffered for `label`.
    pub fn take(&mut self, label: &str) -> Vec<(usize, Vec<f64>)> {
        self.pending.remove(label).unwrap_or_default()
    }
}

/// Exactly `k` retained samples per category for balance training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    k: usize,
    samples: BTreeMap<String, Vec<Vec<f64>>>,
}

impl MemoryBank {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("memory bank size K must be at least 1".into()));
        }
        Ok(Self {
            k,
            samples: BTreeMap::new(),
        })
    }

    /// Draws `k` samples per category (seeded) from a labeled training set.
    pub fn from_training(
        inputs: &Matrix,
        labels: &[usize],
        categories: &[String],
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut bank = Self::new(k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (c, name) in categories.iter().enumerate() {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if idx.len() < k {
                return Err(Error::InvalidInput(format!(
                    "category `{name}` has {} samples, memory bank needs {k}",
                    idx.len()
                )));
            }
            idx.shuffle(&mut rng);
            let rows = idx[..k].iter().map(|&i| inputs.row(i).to_vec()).collect();
            bank.insert(name, rows)?;
        }
        Ok(bank)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn insert(&mut self, label: &str, rows: Vec<Vec<f64>>) -> Result<()> {
        if rows.len() != self.k {
            return Err(Error::InvalidInput(format!(
                "memory bank holds exactly {} samples per category, got {}",
                self.k,
                rows.len()
            )));
        }
        self.samples.insert(label.to_string(), rows);
        Ok(())
    }

    pub fn samples(&self, label: &str) -> Option<&[Vec<f64>]> {
        self.samples.get(label).map(Vec::as_slice)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.samples.keys().map(String::as_str)
    }

    /// Stacks the samples of `categories` in that order with index labels.
    pub fn labeled_set(&self, categories: &[String]) -> Result<(Matrix, Vec<usize>)> {
        let mut inputs = Matrix::zeros(0, 0);
        let mut labels = Vec::with_capacity(categories.len() * self.k);
        for (c, name) in categories.iter().enumerate() {
            let rows = self.samples.get(name).ok_or_else(|| {
                Error::InvalidInput(format!("memory bank has no samples for `{name}`"))
            })?;
            for r in rows {
                inputs.push_row(r)?;
                labels.push(c);
            }
        }
        Ok((inputs, labels))
    }
}
