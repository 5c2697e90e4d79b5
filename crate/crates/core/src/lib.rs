//! Prototype-based open-set recognition.
//!
//! The pipeline has two training phases. The initial phase jointly learns a
//! small feed-forward classifier, one prototype per known category and one
//! radius per prototype. The incremental phase projects streamed samples into
//! the prototype distance space, rejects unknowns with per-category triplet
//! thresholds, and grows the classifier one category at a time once a handful
//! of labeled samples of a new category have been collected.
//!
//! Module map:
//! - [`numerics`]: dense matrices, softmax / cross entropy, SGD with momentum,
//!   finite-difference gradients.
//! - [`model`]: the expandable feed-forward net.
//! - [`prototypes`]: distance matrix, the four losses and initial training.
//! - [`detector`]: triplet threshold calibration and the decision rule.
//! - [`incremental`]: weight initialization for new categories, balanced
//!   fine-tuning and the streaming loop.
//! - [`harness`]: datasets, open-world splits, evaluation and the experiment
//!   runner used by the `podn` binary.

// `!(x > 0.0)` guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detector;
pub mod error;
pub mod harness;
pub mod incremental;
pub mod model;
pub mod numerics;
pub mod prototypes;

pub use error::{Error, Result};
