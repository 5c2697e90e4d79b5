//! Triplet-threshold unknown detection.
//!
//! For each category `i`, over the `X_i` calibration rows that were correctly
//! classified: the accept threshold `η_i` is the mean top score, the reject
//! threshold is `μ_i = eps_mu·η_i`, and the margin threshold `δ_i` is `rho`
//! times the mean gap between the top and second scores.
//!
//! A row with argmax `l` is accepted as `l` when its top score exceeds `η_l`,
//! rejected when every score `j` is below `μ_j`, and otherwise (a hard sample)
//! accepted only if its top-minus-second margin exceeds `δ_l`.
//!
//! Score rows are distance rows (`D`, prototype mode) or raw logits (feature
//! mode); the decision logic is the same for both.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ExpandableNet;
use crate::numerics::{argmax, top_two, Matrix};
use crate::prototypes::{distance_matrix, PrototypeBank};

pub const DEFAULT_EPS_MU: f64 = 0.5;
pub const DEFAULT_RHO: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSpace {
    /// Rows of the prototype distance matrix.
    Distance,
    /// Rows of logits.
    Feature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    /// η: accept threshold.
    pub accept: f64,
    /// μ: reject threshold.
    pub reject: f64,
    /// δ: margin threshold for hard samples.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub space: ScoreSpace,
    pub eps_mu: f64,
    pub rho: f64,
    pub categories: Vec<String>,
    pub triplets: Vec<Triplet>,
}

impl ThresholdSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let set: Self = serde_json::from_str(&text)?;
        if set.categories.len() != set.triplets.len() {
            return Err(Error::InvalidInput("threshold categories and triplets differ in length".into()));
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "category", rename_all = "snake_case")]
pub enum Outcome {
    Accept(usize),
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    pub top_value: f64,
    /// Top score minus second score.
    pub margin: f64,
}

impl Decision {
    pub fn is_unknown(&self) -> bool {
        self.outcome == Outcome::Unknown
    }
}

fn check_params(eps_mu: f64, rho: f64) -> Result<()> {
    if !eps_mu.is_finite() || !rho.is_finite() || eps_mu < 0.0 || rho < 0.0 {
        return Err(Error::Config(format!(
            "eps_mu and rho must be finite and nonnegative, got {eps_mu} and {rho}"
        )));
    }
    Ok(())
}

/// Computes one triplet per category from that category's correctly
/// classified score rows.
pub fn calibrate(
    rows_per_category: &[Vec<Vec<f64>>],
    categories: &[String],
    space: ScoreSpace,
    eps_mu: f64,
    rho: f64,
) -> Result<ThresholdSet> {
    check_params(eps_mu, rho)?;
    let n = categories.len();
    if rows_per_category.len() != n || n < 2 {
        return Err(Error::InvalidInput(format!(
            "{} row sets for {n} categories",
            rows_per_category.len()
        )));
    }
    let mut triplets = Vec::with_capacity(n);
    for (rows, name) in rows_per_category.iter().zip(categories) {
        let t = category_triplet(rows, n, eps_mu, rho)?.ok_or_else(|| Error::EmptyCalibration {
            category: name.clone(),
        })?;
        triplets.push(t);
    }
    Ok(ThresholdSet {
        space,
        eps_mu,
        rho,
        categories: categories.to_vec(),
        triplets,
    })
}

/// Triplet for one category, or `None` when `rows` is empty.
pub fn category_triplet(
    rows: &[Vec<f64>],
    categories: usize,
    eps_mu: f64,
    rho: f64,
) -> Result<Option<Triplet>> {
    if rows.is_empty() {
        return Ok(None);
    }
    let mut top_sum = 0.0;
    let mut gap_sum = 0.0;
    for row in rows {
        if row.len() != categories {
            return Err(Error::Shape {
                op: "calibrate",
                left: (1, row.len()),
                right: (1, categories),
            });
        }
        let (_, top, second) = top_two(row);
        top_sum += top;
        gap_sum += top - second;
    }
    let x = rows.len() as f64;
    let accept = top_sum / x;
    Ok(Some(Triplet {
        accept,
        reject: eps_mu * accept,
        margin: rho * (gap_sum / x),
    }))
}

/// The three-branch accept / reject / hard-sample rule.
pub fn decide(row: &[f64], thresholds: &ThresholdSet) -> Decision {
    debug_assert_eq!(row.len(), thresholds.len());
    let (l, top, second) = top_two(row);
    let margin = top - second;
    let t = thresholds.triplets[l];
    let outcome = if top > t.accept {
        Outcome::Accept(l)
    } else if row
        .iter()
        .zip(&thresholds.triplets)
        .all(|(v, tj)| *v < tj.reject)
    {
        Outcome::Unknown
    } else if margin > t.margin {
        Outcome::Accept(l)
    } else {
        Outcome::Unknown
    };
    Decision {
        outcome,
        top_value: top,
        margin,
    }
}

/// Score rows for a batch: distance rows or logits.
pub fn score_rows(
    net: &ExpandableNet,
    bank: &PrototypeBank,
    inputs: &Matrix,
    space: ScoreSpace,
) -> Result<Matrix> {
    let logits = net.forward(inputs)?;
    match space {
        ScoreSpace::Feature => Ok(logits),
        ScoreSpace::Distance => Ok(distance_matrix(&logits, bank)?.values),
    }
}

/// Groups the rows whose argmax equals their label by category.
pub fn correct_rows(scores: &Matrix, labels: &[usize], categories: usize) -> Vec<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); categories];
    for (row, &y) in scores.row_iter().zip(labels) {
        if y < categories && argmax(row) == y {
            out[y].push(row.to_vec());
        }
    }
    out
}

/// Scores `inputs` with the model and calibrates on the correctly classified rows.
pub fn calibrate_model(
    net: &ExpandableNet,
    bank: &PrototypeBank,
    inputs: &Matrix,
    labels: &[usize],
    space: ScoreSpace,
    eps_mu: f64,
    rho: f64,
) -> Result<ThresholdSet> {
    let scores = score_rows(net, bank, inputs, space)?;
    let rows = correct_rows(&scores, labels, net.num_categories());
    calibrate(&rows, net.categories(), space, eps_mu, rho)
}

/// Binary detection counts and scores with "unknown" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Fraction of known samples that were accepted.
    pub known_accept_rate: f64,
}

impl DetectionMetrics {
    /// Undefined ratios (empty denominators) are reported as 0.
    pub fn from_flags(truth_unknown: &[bool], flagged_unknown: &[bool]) -> Self {
        let mut m = DetectionMetrics::default();
        for (&t, &p) in truth_unknown.iter().zip(flagged_unknown) {
            match (t, p) {
                (true, true) => m.true_positive += 1,
                (false, true) => m.false_positive += 1,
                (false, false) => m.true_negative += 1,
                (true, false) => m.false_negative += 1,
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        m.precision = ratio(m.true_positive, m.true_positive + m.false_positive);
        m.recall = ratio(m.true_positive, m.true_positive + m.false_negative);
        m.f1 = if m.precision + m.recall > 0.0 {
            2.0 * m.precision * m.recall / (m.precision + m.recall)
        } else {
            0.0
        };
        m.known_accept_rate = ratio(m.true_negative, m.true_negative + m.false_positive);
        m
    }
}

/// One line of the per-sample detection log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub id: usize,
    pub truth: String,
    pub decision: String,
    pub top: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub metrics: DetectionMetrics,
    pub records: Vec<DetectionRecord>,
}

/// Runs the detector over a labeled test set. `truth` holds the true label
/// of each sample; samples whose label is not a model category are unknowns.
pub fn evaluate_detection(
    net: &ExpandableNet,
    bank: &PrototypeBank,
    thresholds: &ThresholdSet,
    inputs: &Matrix,
    ids: &[usize],
    truth: &[String],
) -> Result<DetectionReport> {
    if inputs.rows() == 0 {
        return Err(Error::InvalidInput("detection test set is empty".into()));
    }
    if ids.len() != inputs.rows() || truth.len() != inputs.rows() {
        return Err(Error::Shape {
            op: "evaluate_detection",
            left: inputs.shape(),
            right: (ids.len(), truth.len()),
        });
    }
    if thresholds.len() != net.num_categories() {
        return Err(Error::InvalidInput(format!(
            "{} thresholds for {} categories",
            thresholds.len(),
            net.num_categories()
        )));
    }
    let scores = score_rows(net, bank, inputs, thresholds.space)?;
    let mut truth_unknown = Vec::with_capacity(ids.len());
    let mut flagged = Vec::with_capacity(ids.len());
    let mut records = Vec::with_capacity(ids.len());
    for ((row, &id), label) in scores.row_iter().zip(ids).zip(truth) {
        let d = decide(row, thresholds);
        truth_unknown.push(net.category_index(label).is_none());
        flagged.push(d.is_unknown());
        records.push(DetectionRecord {
            id,
            truth: label.clone(),
            decision: match d.outcome {
                Outcome::Accept(c) => net.categories()[c].clone(),
                Outcome::Unknown => "unknown".into(),
            },
            top: d.top_value,
            margin: d.margin,
        });
    }
    Ok(DetectionReport {
        metrics: DetectionMetrics::from_flags(&truth_unknown, &flagged),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        crate::model::default_labels(n)
    }

    fn uniform(n: usize, accept: f64, reject: f64, margin: f64) -> ThresholdSet {
        ThresholdSet {
            space: ScoreSpace::Distance,
            eps_mu: 0.5,
            rho: 0.5,
            categories: names(n),
            triplets: vec![
                Triplet {
                    accept,
                    reject,
                    margin
                };
                n
            ],
        }
    }

    #[test]
    fn accept_threshold_is_mean_top() {
        let rows = vec![
            vec![vec![0.8, 0.1], vec![1.0, 0.2], vec![0.6, 0.3]],
            vec![vec![0.1, 2.0]],
        ];
        let t = calibrate(&rows, &names(2), ScoreSpace::Distance, 0.5, 0.5).unwrap();
        assert!((t.triplets[0].accept - 0.8).abs() < 1e-15);
        assert!((t.triplets[0].reject - 0.4).abs() < 1e-15);
        assert_eq!(t.triplets[1].accept, 2.0);
    }

    #[test]
    fn margin_threshold_is_scaled_mean_gap() {
        // gaps 0.5 and 0.7, rho 0.5
        let rows = vec![vec![vec![1.0, 0.5], vec![0.9, 0.2]], vec![vec![0.0, 1.0]]];
        let t = calibrate(&rows, &names(2), ScoreSpace::Distance, 0.5, 0.5).unwrap();
        assert!((t.triplets[0].margin - 0.3).abs() < 1e-15);
    }

    #[test]
    fn empty_category_is_named() {
        let rows = vec![vec![vec![1.0, 0.0]], vec![]];
        let err = calibrate(&rows, &names(2), ScoreSpace::Distance, 0.5, 0.5).unwrap_err();
        assert!(matches!(err, Error::EmptyCalibration { ref category } if category == "c1"));
    }

    #[test]
    fn decision_branches() {
        let clear = uniform(2, 900.0, 450.0, 100.0);
        assert_eq!(decide(&[1000.0, 0.5], &clear).outcome, Outcome::Accept(0));

        let reject = uniform(2, 0.8, 0.4, 0.3);
        assert_eq!(decide(&[0.1, 0.1], &reject).outcome, Outcome::Unknown);

        let hard = uniform(3, 0.8, 0.4, 0.3);
        let d = decide(&[0.6, 0.55, 0.0], &hard);
        assert_eq!(d.outcome, Outcome::Unknown);
        assert!((d.margin - 0.05).abs() < 1e-12);
        assert_eq!(decide(&[0.6, 0.1, 0.0], &hard).outcome, Outcome::Accept(0));
    }

    #[test]
    fn constant_rows_calibrate_exactly() {
        let (c, s) = (7.5, 1.25);
        let rows = vec![vec![vec![c, s, 0.0]; 4], vec![vec![s, c, 0.0]; 2], vec![vec![0.0, s, c]; 3]];
        let t = calibrate(&rows, &names(3), ScoreSpace::Feature, 0.3, 0.7).unwrap();
        for tr in &t.triplets {
            assert_eq!(tr.accept, c);
            assert_eq!(tr.reject, 0.3 * c);
            assert_eq!(tr.margin, 0.7 * (c - s));
        }
    }

    #[test]
    fn degenerate_detectors() {
        let truth: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let all = DetectionMetrics::from_flags(&truth, &[true; 10]);
        assert_eq!(all.recall, 1.0);
        assert_eq!(all.precision, 0.5);
        assert!((all.f1 - 2.0 / 3.0).abs() < 1e-15);

        let none = DetectionMetrics::from_flags(&truth, &[false; 10]);
        assert_eq!(none.recall, 0.0);
        assert_eq!(none.f1, 0.0);
        assert_eq!(none.known_accept_rate, 1.0);
    }

    fn row_and_thresholds() -> impl Strategy<Value = (Vec<f64>, ThresholdSet)> {
        (2usize..6).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.0f64..10.0, n),
                proptest::collection::vec((0.0f64..10.0, 0.0f64..=1.0, 0.0f64..5.0), n),
            )
                .prop_map(move |(row, params)| {
                    let triplets = params
                        .into_iter()
                        .map(|(accept, eps, margin)| Triplet {
                            accept,
                            reject: eps * accept,
                            margin,
                        })
                        .collect();
                    let set = ThresholdSet {
                        space: ScoreSpace::Distance,
                        eps_mu: 0.5,
                        rho: 0.5,
                        categories: names(n),
                        triplets,
                    };
                    (row, set)
                })
        })
    }

    proptest! {
        #[test]
        fn raising_accept_never_turns_unknown_into_accept(
            (row, set) in row_and_thresholds(),
            bump in 0.0f64..5.0,
        ) {
            let before = decide(&row, &set);
            let mut raised = set.clone();
            for t in &mut raised.triplets {
                t.accept += bump;
            }
            let after = decide(&row, &raised);
            if before.is_unknown() {
                prop_assert!(after.is_unknown());
            }
        }

        #[test]
        fn accepted_category_is_the_argmax((row, set) in row_and_thresholds()) {
            if let Outcome::Accept(c) = decide(&row, &set).outcome {
                prop_assert_eq!(c, argmax(&row));
            }
        }
    }
}
