use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the head column of a new category is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightInit {
    /// `w_new = (1/N) Σ α_n·w_n` with α the normalized mean distance row.
    Distance,
    /// `w_new = alpha·mean(all w_n) + beta·mean(w_m over the m best-scoring categories)`.
    Odn { alpha: f64, beta: f64, m: usize },
}

impl WeightInit {
    pub fn odn_default() -> Self {
        WeightInit::Odn {
            alpha: 0.5,
            beta: 0.5,
            m: 3,
        }
    }
}

/// Averages distance rows elementwise and normalizes the mean row to sum 1.
pub fn mean_normalized_alpha(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidInput("alpha needs at least one distance row".into()))?;
    let n = first.len();
    if n == 0 {
        return Err(Error::InvalidInput("distance rows are empty".into()));
    }
    let mut mean = vec![0.0; n];
    for row in rows {
        if row.len() != n {
            return Err(Error::Shape {
                op: "mean_normalized_alpha",
                left: (1, row.len()),
                right: (1, n),
            });
        }
        if row.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("distance rows must be positive".into()));
        }
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let count = rows.len() as f64;
    mean.iter_mut().for_each(|m| *m /= count);
    let total: f64 = mean.iter().sum();
    Ok(mean.into_iter().map(|m| m / total).collect())
}

/// `(1/N) Σ α_n·w_n`, the outer `1/N` included.
pub fn distance_weight_init(alpha: &[f64], columns: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = columns.len();
    if alpha.len() != n || n == 0 {
        return Err(Error::Shape {
            op: "distance_weight_init",
            left: (alpha.len(), 1),
            right: (n, 1),
        });
    }
    let sum: f64 = alpha.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!("alpha must sum to 1, sums to {sum}")));
    }
    let dim = columns[0].len();
    let mut out = vec![0.0; dim];
    for (a, col) in alpha.iter().zip(columns) {
        if col.len() != dim {
            return Err(Error::Shape {
                op: "distance_weight_init",
                left: (col.len(), 1),
                right: (dim, 1),
            });
        }
        for (o, w) in out.iter_mut().zip(col) {
            *o += a * w;
        }
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    Ok(out)
}

/// Feature-score based initialization used by the ODN baseline.
///
/// Categories are ranked by their mean logit over `feature_scores` (ties to
/// the lower index) and the top `m` columns form the similarity term.
pub fn odn_weight_init(
    feature_scores: &[Vec<f64>],
    columns: &[Vec<f64>],
    alpha: f64,
    beta: f64,
    m: usize,
) -> Result<Vec<f64>> {
    let n = columns.len();
    if m == 0 || m > n {
        return Err(Error::Config(format!("need 1 <= M <= N, got M = {m}, N = {n}")));
    }
    if feature_scores.is_empty() || feature_scores.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput(format!(
            "feature score rows must be nonempty with length {n}"
        )));
    }
    let mut mean_score = vec![0.0; n];
    for row in feature_scores {
        for (s, v) in mean_score.iter_mut().zip(row) {
            *s += v;
        }
    }
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| mean_score[b].total_cmp(&mean_score[a]).then(a.cmp(&b)));

    let dim = columns[0].len();
    let mut all = vec![0.0; dim];
    for col in columns {
        for (o, w) in all.iter_mut().zip(col) {
            *o += w;
        }
    }
    let mut similar = vec![0.0; dim];
    for &c in &ranked[..m] {
        for (o, w) in similar.iter_mut().zip(&columns[c]) {
            *o += w;
        }
    }
    Ok(all
        .iter()
        .zip(&similar)
        .map(|(a, s)| alpha * a / n as f64 + beta * s / m as f64)
        .collect())
}
