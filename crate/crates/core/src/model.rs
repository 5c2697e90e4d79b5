//! Feed-forward feature extractor with an expandable classification head.
//!
//! The head stores one weight column per category (`w_n`), so the output
//! features are N-dimensional logits and growing the category set is a matter
//! of pushing one more column. Logit `n` depends only on column `n` and bias
//! `n`, which keeps existing logits bit-identical across an expansion.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, glorot_bound, Matrix};

pub const CHECKPOINT_FORMAT: &str = "podn-net";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub initial_categories: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("layer dimensions must be at least 1".into()));
        }
        if self.initial_categories < 2 {
            return Err(Error::Config(format!(
                "at least 2 categories are required, got {}",
                self.initial_categories
            )));
        }
        Ok(())
    }

    fn last_hidden(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }
}

/// Fully connected layer `y = relu(x·W + b)` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandableNet {
    config: ModelConfig,
    categories: Vec<String>,
    hidden: Vec<DenseLayer>,
    head_columns: Vec<Vec<f64>>,
    head_bias: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Matrix,
    hidden_out: Vec<Matrix>,
    logits: Matrix,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn into_logits(self) -> Matrix {
        self.logits
    }

    /// Input of the head, i.e. the last hidden activation (or the raw input).
    pub fn penultimate(&self) -> &Matrix {
        self.hidden_out.last().unwrap_or(&self.input)
    }
}

/// Parameter gradients in the same tensor order as
/// [`ExpandableNet::parameter_tensors_mut`], plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub hidden: Vec<DenseLayer>,
    pub head_columns: Vec<Vec<f64>>,
    pub head_bias: Vec<f64>,
    pub input: Matrix,
}

impl NetGradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.hidden {
            out.push(layer.weights.as_slice());
            out.push(&layer.bias);
        }
        out.extend(self.head_columns.iter().map(Vec::as_slice));
        out.push(&self.head_bias);
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }
}

impl ExpandableNet {
    /// Glorot-uniform weights, zero biases, deterministic in `config.seed`.
    pub fn new(config: ModelConfig, categories: Vec<String>) -> Result<Self> {
        config.validate()?;
        if categories.len() != config.initial_categories {
            return Err(Error::Config(format!(
                "{} category labels given for {} initial categories",
                categories.len(),
                config.initial_categories
            )));
        }
        check_unique(&categories)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut hidden = Vec::with_capacity(config.hidden_dims.len());
        let mut fan_in = config.input_dim;
        for &width in &config.hidden_dims {
            let bound = glorot_bound(fan_in, width);
            let data = (0..fan_in * width)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            hidden.push(DenseLayer {
                weights: Matrix::new(fan_in, width, data)?,
                bias: vec![0.0; width],
            });
            fan_in = width;
        }
        let n = config.initial_categories;
        let bound = glorot_bound(fan_in, n);
        let head_columns = (0..n)
            .map(|_| (0..fan_in).map(|_| rng.random_range(-bound..bound)).collect())
            .collect();
        Ok(Self {
            config,
            categories,
            hidden,
            head_columns,
            head_bias: vec![0.0; n],
        })
    }

    /// Builds a net from explicit parameters, validating every shape.
    pub fn from_parts(
        config: ModelConfig,
        categories: Vec<String>,
        hidden: Vec<DenseLayer>,
        head_columns: Vec<Vec<f64>>,
        head_bias: Vec<f64>,
    ) -> Result<Self> {
        let net = Self {
            config,
            categories,
            hidden,
            head_columns,
            head_bias,
        };
        net.check()?;
        Ok(net)
    }

    fn check(&self) -> Result<()> {
        self.config.validate()?;
        check_unique(&self.categories)?;
        if self.hidden.len() != self.config.hidden_dims.len() {
            return Err(Error::InvalidInput("hidden layer count differs from config".into()));
        }
        let mut fan_in = self.config.input_dim;
        for (layer, &width) in self.hidden.iter().zip(&self.config.hidden_dims) {
            if layer.weights.shape() != (fan_in, width) || layer.bias.len() != width {
                return Err(Error::Shape {
                    op: "ExpandableNet::check",
                    left: layer.weights.shape(),
                    right: (fan_in, width),
                });
            }
            fan_in = width;
        }
        let n = self.categories.len();
        if n < 2 || self.head_columns.len() != n || self.head_bias.len() != n {
            return Err(Error::InvalidInput(format!(
                "head has {} columns and {} biases for {n} categories",
                self.head_columns.len(),
                self.head_bias.len()
            )));
        }
        if self.head_columns.iter().any(|c| c.len() != fan_in) {
            return Err(Error::InvalidInput(format!(
                "head columns must have length {fan_in}"
            )));
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }

    pub fn num_categories(&self) -> usize {
        self.head_columns.len()
    }

    pub fn head_columns(&self) -> &[Vec<f64>] {
        &self.head_columns
    }

    pub fn head_bias(&self) -> &[f64] {
        &self.head_bias
    }

    pub fn hidden_layers(&self) -> &[DenseLayer] {
        &self.hidden
    }

    pub fn penultimate_dim(&self) -> usize {
        self.config.last_hidden()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward_trace(batch)?.logits)
    }

    pub fn forward_trace(&self, batch: &Matrix) -> Result<ForwardTrace> {
        if batch.cols() != self.config.input_dim {
            return Err(Error::Shape {
                op: "forward",
                left: batch.shape(),
                right: (self.config.input_dim, self.penultimate_dim()),
            });
        }
        let mut hidden_out: Vec<Matrix> = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let x = hidden_out.last().unwrap_or(batch);
            let mut z = x.matmul(&layer.weights)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v = (*v + b).max(0.0);
                }
            }
            hidden_out.push(z);
        }
        let h = hidden_out.last().unwrap_or(batch);
        let n = self.head_columns.len();
        let mut logits = Matrix::zeros(h.rows(), n);
        for s in 0..h.rows() {
            let x = h.row(s);
            for (j, (col, b)) in self.head_columns.iter().zip(&self.head_bias).enumerate() {
                logits.set(s, j, dot(x, col) + b);
            }
        }
        Ok(ForwardTrace {
            input: batch.clone(),
            hidden_out,
            logits,
        })
    }

    /// Backpropagates `upstream` (∂L/∂logits, shape S×N) through the net.
    ///
    /// Gradients from several loss terms that reach the logits should be summed
    /// into `upstream` before calling this.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &Matrix) -> Result<NetGradients> {
        if upstream.shape() != trace.logits.shape() {
            return Err(Error::Shape {
                op: "backward",
                left: upstream.shape(),
                right: trace.logits.shape(),
            });
        }
        let h = trace.penultimate();
        let head_w = h.transpose_matmul(upstream)?;
        let n = self.head_columns.len();
        let head_columns: Vec<Vec<f64>> = (0..n)
            .map(|j| (0..head_w.rows()).map(|k| head_w.get(k, j)).collect())
            .collect();
        let mut head_bias = vec![0.0; n];
        for row in upstream.row_iter() {
            for (b, g) in head_bias.iter_mut().zip(row) {
                *b += g;
            }
        }

        // ∂L/∂h = G · Wᵀ with W laid out as columns.
        let mut grad = Matrix::zeros(h.rows(), h.cols());
        for s in 0..h.rows() {
            let g = upstream.row(s);
            let out = grad.row_mut(s);
            for (gj, col) in g.iter().zip(&self.head_columns) {
                for (o, w) in out.iter_mut().zip(col) {
                    *o += gj * w;
                }
            }
        }

        let mut hidden_grads = Vec::with_capacity(self.hidden.len());
        for (idx, layer) in self.hidden.iter().enumerate().rev() {
            let out = &trace.hidden_out[idx];
            for (g, a) in grad.as_mut_slice().iter_mut().zip(out.as_slice()) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            let x = if idx == 0 {
                &trace.input
            } else {
                &trace.hidden_out[idx - 1]
            };
            let weights = x.transpose_matmul(&grad)?;
            let mut bias = vec![0.0; layer.bias.len()];
            for row in grad.row_iter() {
                for (b, g) in bias.iter_mut().zip(row) {
                    *b += g;
                }
            }
            let next = grad.matmul_transpose(&layer.weights)?;
            hidden_grads.push(DenseLayer { weights, bias });
            grad = next;
        }
        hidden_grads.reverse();

        Ok(NetGradients {
            hidden: hidden_grads,
            head_columns,
            head_bias,
            input: grad,
        })
    }

    /// Appends a category column. Existing columns are left untouched.
    pub fn expand_output_dim(
        &mut self,
        label: impl Into<String>,
        init_column: Vec<f64>,
        init_bias: f64,
    ) -> Result<()> {
        let label = label.into();
        if init_column.len() != self.penultimate_dim() {
            return Err(Error::Shape {
                op: "expand_output_dim",
                left: (init_column.len(), 1),
                right: (self.penultimate_dim(), 1),
            });
        }
        if self.category_index(&label).is_some() {
            return Err(Error::DuplicateCategory(label));
        }
        self.categories.push(label);
        self.head_columns.push(init_column);
        self.head_bias.push(init_bias);
        Ok(())
    }

    /// Closed-set prediction: argmax of the logits, lowest index on ties.
    pub fn predict(&self, batch: &Matrix) -> Result<Vec<usize>> {
        Ok(self.forward(batch)?.row_iter().map(argmax).collect())
    }

    /// Mutable views of every parameter tensor: per hidden layer the weights
    /// then the bias, then one tensor per head column, then the head bias.
    pub fn parameter_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.hidden {
            out.push(layer.weights.as_mut_slice());
            out.push(&mut layer.bias);
        }
        out.extend(self.head_columns.iter_mut().map(Vec::as_mut_slice));
        out.push(&mut self.head_bias);
        out
    }

    pub fn parameter_shapes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for layer in &self.hidden {
            out.push(layer.weights.as_slice().len());
            out.push(layer.bias.len());
        }
        out.extend(self.head_columns.iter().map(Vec::len));
        out.push(self.head_bias.len());
        out
    }

    /// Position of head column `n` in the tensor list.
    pub fn head_column_tensor(&self, n: usize) -> usize {
        2 * self.hidden.len() + n
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.hidden {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        for col in &self.head_columns {
            out.extend_from_slice(col);
        }
        out.extend_from_slice(&self.head_bias);
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.parameter_shapes().iter().sum();
        if flat.len() != total {
            return Err(Error::Shape {
                op: "set_flat_params",
                left: (flat.len(), 1),
                right: (total, 1),
            });
        }
        let mut offset = 0;
        for t in self.parameter_tensors_mut() {
            let len = t.len();
            t.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let doc = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            net: self.clone(),
        };
        let text = serde_json::to_string_pretty(&doc)?;
        fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let doc: Checkpoint = serde_json::from_str(&text)?;
        if doc.format != CHECKPOINT_FORMAT || doc.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint {} v{}",
                doc.format, doc.version
            )));
        }
        doc.net.check()?;
        Ok(doc.net)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    #[serde(flatten)]
    net: ExpandableNet,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_unique(labels: &[String]) -> Result<()> {
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(Error::DuplicateCategory(l.clone()));
        }
    }
    Ok(())
}

/// `"c0", "c1", …`, handy for tests and anonymous datasets.
pub fn default_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}
