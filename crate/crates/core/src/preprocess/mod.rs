//! Tabular preprocessing: cleaning, encoding, scaling, selection, balancing,
//! and temporal windowing.
//!
//! The working form is a columnar [`Dataset`]. Columns start out as declared
//! by the schema (continuous or categorical) and are progressively imputed,
//! one-hot encoded, scaled, pruned, and selected. Every fitted statistic
//! lives in a [`FittedTransform`] so the exact transform can be replayed on
//! held-out data and serialized as a versioned artifact.

mod artifact;
mod balance;
pub mod stats;
mod transforms;
mod windows;

pub use balance::{smote, stratified_split, stratified_split_indices, SmoteOrigin, SmoteOutcome};
pub use stats::{correlation, mutual_information, CorrelationKind};
pub use transforms::{
    apply_transform, fit_transform, impute_missing, mi_scores, minmax_scale, one_hot_encode,
    prune_collinear, select_top_k, EncodeFit, FittedTransform, ImputeChoice, ImputeFit,
    ImputePolicy, ImputeRule, PipelineOptions, ScaleFit,
};
pub use windows::{make_windows, WindowSet};

use crate::error::{Error, Result};
use crate::ingest::FlowRecord;
use crate::schema::SchemaSpec;

/// One feature column. `Continuous` columns may hold `NaN` missing markers
/// until imputation; `Indicator` columns are 0/1 outputs of one-hot encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Continuous { name: String, values: Vec<f64> },
    Indicator { name: String, values: Vec<f64> },
    Categorical { name: String, values: Vec<Option<String>> },
}

impl Column {
    pub fn name(&self) -> &str {
        match self {
            Column::Continuous { name, .. }
            | Column::Indicator { name, .. }
            | Column::Categorical { name, .. } => name,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Continuous { values, .. } | Column::Indicator { values, .. } => values.len(),
            Column::Categorical { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self, Column::Categorical { .. })
    }

    /// Numeric values, if this column has been (or started) numeric.
    pub fn numeric_values(&self) -> Option<&[f64]> {
        match self {
            Column::Continuous { values, .. } | Column::Indicator { values, .. } => Some(values),
            Column::Categorical { .. } => None,
        }
    }
}

/// Row-major dense matrix view of a fully numeric dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Columnar feature table with labels and an append-only provenance log.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: Vec<Column>,
    /// Class index per row, into `class_names`.
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    /// True for rows synthesized by oversampling.
    pub synthetic: Vec<bool>,
    pub provenance: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from parsed records; the class table is the sorted
    /// set of labels observed in `records`.
    pub fn from_records(records: &[FlowRecord], schema: &SchemaSpec) -> Dataset {
        let mut class_names: Vec<String> = records.iter().map(|r| r.label.clone()).collect();
        class_names.sort();
        class_names.dedup();
        Self::build(records, schema, class_names).expect("labels all drawn from observed set")
    }

    /// Builds a dataset against a fixed class table; labels outside the
    /// table are an error.
    pub fn from_records_with_classes(
        records: &[FlowRecord],
        schema: &SchemaSpec,
        class_names: &[String],
    ) -> Result<Dataset> {
        Self::build(records, schema, class_names.to_vec())
    }

    fn build(
        records: &[FlowRecord],
        schema: &SchemaSpec,
        class_names: Vec<String>,
    ) -> Result<Dataset> {
        let mut labels = Vec::with_capacity(records.len());
        for r in records {
            let idx = class_names
                .iter()
                .position(|c| *c == r.label)
                .ok_or_else(|| {
                    Error::Data(format!("label '{}' not in the class table", r.label))
                })?;
            labels.push(idx);
        }
        let mut columns = Vec::new();
        for (ci, name) in schema.continuous_names().iter().enumerate() {
            columns.push(Column::Continuous {
                name: name.to_string(),
                values: records.iter().map(|r| r.continuous[ci]).collect(),
            });
        }
        for (ci, name) in schema.categorical_names().iter().enumerate() {
            columns.push(Column::Categorical {
                name: name.to_string(),
                values: records.iter().map(|r| r.categorical[ci].clone()).collect(),
            });
        }
        Ok(Dataset {
            columns,
            synthetic: vec![false; records.len()],
            labels,
            class_names,
            provenance: Vec::new(),
        })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name() == name)
    }

    pub fn column_position(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name() == name)
    }

    /// Appends a provenance entry.
    pub fn log(&mut self, entry: impl Into<String>) {
        self.provenance.push(entry.into());
    }

    /// Row-major matrix of all feature columns. Errors while any categorical
    /// column remains un-encoded.
    pub fn matrix(&self) -> Result<Matrix> {
        let rows = self.rows();
        let cols = self.columns.len();
        let mut data = vec![0.0; rows * cols];
        for (j, col) in self.columns.iter().enumerate() {
            let values = col.numeric_values().ok_or_else(|| {
                Error::Data(format!(
                    "column '{}' is still categorical; encode before building a matrix",
                    col.name()
                ))
            })?;
            for (i, &v) in values.iter().enumerate() {
                data[i * cols + j] = v;
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    /// New dataset holding the given rows (in the given order).
    pub fn take_rows(&self, idx: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                Column::Continuous { name, values } => Column::Continuous {
                    name: name.clone(),
                    values: idx.iter().map(|&i| values[i]).collect(),
                },
                Column::Indicator { name, values } => Column::Indicator {
                    name: name.clone(),
                    values: idx.iter().map(|&i| values[i]).collect(),
                },
                Column::Categorical { name, values } => Column::Categorical {
                    name: name.clone(),
                    values: idx.iter().map(|&i| values[i].clone()).collect(),
                },
            })
            .collect();
        Dataset {
            columns,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            synthetic: idx.iter().map(|&i| self.synthetic[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Per-class row counts, indexed by class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_names.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}
