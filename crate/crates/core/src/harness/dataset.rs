use std::collections::BTreeSet;
use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub label: String,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub feature_dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let feature_dim = samples.first().map_or(0, |s| s.features.len());
        let mut ids = BTreeSet::new();
        for s in &samples {
            if s.features.len() != feature_dim {
                return Err(Error::InvalidInput(format!(
                    "sample {} has {} features, expected {feature_dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if !ids.insert(s.id) {
                return Err(Error::InvalidInput(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Self {
            samples,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sorted distinct labels.
    pub fn labels(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.samples.iter().map(|s| s.label.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }
}

/// Stacks sample features into a matrix.
pub fn inputs_of<'a>(samples: impl IntoIterator<Item = &'a Sample>, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(0, dim);
    for s in samples {
        m.push_row(&s.features).expect("dataset rows share one width");
    }
    m
}

/// Maps labels to indices in `categories`; `None` for labels outside it.
pub fn label_indices<'a>(
    samples: impl IntoIterator<Item = &'a Sample>,
    categories: &[String],
) -> Vec<Option<usize>> {
    samples
        .into_iter()
        .map(|s| categories.iter().position(|c| *c == s.label))
        .collect()
}

/// Reads a `label,f0,…,f{d-1}` CSV. Sample ids are the 0-based data row index.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let header = reader.headers()?.clone();
    if header.get(0) != Some("label") {
        return Err(parse_err(1, "header must start with `label`".into()));
    }
    let dim = header.len() - 1;
    for (k, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{k}") {
            return Err(parse_err(1, format!("expected column `f{k}`, found `{name}`")));
        }
    }
    if dim == 0 {
        return Err(parse_err(1, "no feature columns".into()));
    }

    let mut samples = Vec::new();
    for (id, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(id + 2, |p| p.line() as usize);
        if record.len() != dim + 1 {
            return Err(parse_err(
                line,
                format!("expected {dim} features, found {}", record.len().saturating_sub(1)),
            ));
        }
        let label = record[0].to_string();
        if label.is_empty() {
            return Err(parse_err(line, "empty label".into()));
        }
        let mut features = Vec::with_capacity(dim);
        for (k, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("f{k}: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("f{k}: non-finite value")));
            }
            features.push(v);
        }
        samples.push(Sample {
            id,
            label,
            features,
        });
    }
    Dataset::new(samples)
}

/// Writes the dataset in the format read by [`load_dataset`].
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..dataset.feature_dim).map(|k| format!("f{k}")));
    writer.write_record(&header)?;
    for s in &dataset.samples {
        let mut row = vec![s.label.clone()];
        // `{}` prints the shortest representation that parses back exactly.
        row.extend(s.features.iter().map(|v| format!("{v}")));
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
