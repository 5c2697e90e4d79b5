use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Smoothing constant of the distance matrix.
pub const EPSILON_DIST: f64 = 1e-3;

/// One prototype row and one radius per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    categories: Vec<String>,
    prototypes: Matrix,
    radii: Vec<f64>,
    epsilon_dist: f64,
}

impl PrototypeBank {
    /// Zero prototypes (N×N) and zero radiuses.
    pub fn new(categories: Vec<String>) -> Self {
        let n = categories.len();
        Self {
            categories,
            prototypes: Matrix::zeros(n, n),
            radii: vec![0.0; n],
            epsilon_dist: EPSILON_DIST,
        }
    }

    pub fn from_parts(
        categories: Vec<String>,
        prototypes: Matrix,
        radii: Vec<f64>,
        epsilon_dist: f64,
    ) -> Result<Self> {
        let bank = Self {
            categories,
            prototypes,
            radii,
            epsilon_dist,
        };
        bank.check()?;
        Ok(bank)
    }

    fn check(&self) -> Result<()> {
        let n = self.categories.len();
        if self.prototypes.shape() != (n, n) || self.radii.len() != n {
            return Err(Error::Shape {
                op: "PrototypeBank",
                left: self.prototypes.shape(),
                right: (n, self.radii.len()),
            });
        }
        if !(self.epsilon_dist > 0.0) {
            return Err(Error::InvalidInput("epsilon_dist must be positive".into()));
        }
        let cap = 1.0 / self.epsilon_dist;
        if self.radii.iter().any(|r| !(0.0..=cap).contains(r)) {
            return Err(Error::InvalidInput(format!("radiuses must lie in [0, {cap}]")));
        }
        Ok(())
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn prototypes(&self) -> &Matrix {
        &self.prototypes
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn epsilon_dist(&self) -> f64 {
        self.epsilon_dist
    }

    pub(crate) fn tensors_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.prototypes.as_mut_slice(), &mut self.radii)
    }

    /// Keeps radiuses inside `[0, 1/ε]`, the range of any distance score.
    pub(crate) fn clamp_radii(&mut self) {
        let cap = 1.0 / self.epsilon_dist;
        for r in &mut self.radii {
            *r = r.clamp(0.0, cap);
        }
    }

    /// Adds a category: every existing row gains a trailing zero, the new row
    /// is `row`, and the new radius is the mean of the existing radiuses.
    pub fn expand(&mut self, label: impl Into<String>, row: &[f64]) -> Result<()> {
        let label = label.into();
        if self.categories.contains(&label) {
            return Err(Error::DuplicateCategory(label));
        }
        let n = self.categories.len();
        if row.len() != n + 1 {
            return Err(Error::Shape {
                op: "PrototypeBank::expand",
                left: (1, row.len()),
                right: (n + 1, n + 1),
            });
        }
        let radius = if n == 0 {
            0.0
        } else {
            self.radii.iter().sum::<f64>() / n as f64
        };
        self.prototypes.push_col(0.0);
        self.prototypes.push_row(row)?;
        self.radii.push(radius);
        self.categories.push(label);
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let bank: Self = serde_json::from_str(&text)?;
        bank.check()?;
        Ok(bank)
    }
}
