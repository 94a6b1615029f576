//! Analyses of learned class representations: the rows of a probe's weight
//! matrix (or any other per-class vectors) compared by cosine similarity,
//! clustered into dendrograms and projected with t-SNE.

mod cluster;
mod render;
mod tsne;

pub use cluster::{agglomerate, Dendrogram, Distance, Linkage, Merge};
pub use render::{render_dendrogram, render_heatmap, DendrogramStyle};
pub use tsne::{tsne, TsneConfig, TsneOutput};

use std::collections::HashSet;
use std::fmt::Write as _;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::probe::ProbeModel;

/// Named class vectors, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVectorSet {
    matrix: Array2<f64>,
    names: Vec<String>,
}

impl LabelVectorSet {
    pub fn new(matrix: Array2<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != matrix.nrows() {
            return Err(Error::ShapeError(format!(
                "{} names for {} rows",
                names.len(),
                matrix.nrows()
            )));
        }
        let mut seen = HashSet::new();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::EmptyName(i));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::ShapeError(format!("duplicate label `{n}`")));
            }
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainError("label vectors must be finite".into()));
        }
        Ok(Self { matrix, names })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

/// The probe's weight rows paired with their class names; the bias is dropped.
pub fn extract_label_vectors(model: &ProbeModel) -> LabelVectorSet {
    LabelVectorSet {
        matrix: model.weights().clone(),
        names: model.class_names().to_vec(),
    }
}

/// Axis along which [`mv_normalize`] standardizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MvAxis {
    /// Each dimension across the set's rows.
    #[default]
    Dimensions,
    /// Each row across its own dimensions.
    Rows,
}

impl std::str::FromStr for MvAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dimensions" | "dims" | "columns" => Ok(MvAxis::Dimensions),
            "rows" => Ok(MvAxis::Rows),
            other => Err(Error::InvalidConfig(format!("unknown normalization axis `{other}`"))),
        }
    }
}

/// Mean-variance normalization with population statistics; standard
/// deviations below `epsilon` are clamped, so constant columns become zero.
pub fn mv_normalize(set: &LabelVectorSet, axis: MvAxis, epsilon: f64) -> Result<LabelVectorSet> {
    if set.len() < 2 {
        return Err(Error::TooFewRows(set.len()));
    }
    let ax = match axis {
        MvAxis::Dimensions => Axis(0),
        MvAxis::Rows => Axis(1),
    };
    let mut matrix = set.matrix.clone();
    for mut lane in matrix.lanes_mut(ax) {
        let n = lane.len() as f64;
        let mean = lane.sum() / n;
        let var = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt().max(epsilon);
        lane.mapv_inplace(|v| (v - mean) / std);
    }
    Ok(LabelVectorSet {
        matrix,
        names: set.names.clone(),
    })
}

/// Cosine similarities between two labelled vector sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Array2<f64>,
    pub row_names: Vec<String>,
    pub col_names: Vec<String>,
    /// Rows of `a` (resp. columns from `b`) that had zero norm; their entries are 0.
    pub zero_rows: Vec<usize>,
    pub zero_cols: Vec<usize>,
}

impl SimilarityMatrix {
    /// CSV with a header row of column names and the row name leading each line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for c in &self.col_names {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for (name, row) in self.row_names.iter().zip(self.values.rows()) {
            out.push_str(&csv_field(name));
            for v in row {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }

    /// Reorders rows and columns, e.g. by dendrogram leaf order.
    pub fn reordered(&self, rows: &[usize], cols: &[usize]) -> Self {
        let values = self.values.select(Axis(0), rows).select(Axis(1), cols);
        let pos = |order: &[usize], old: usize| order.iter().position(|&o| o == old);
        Self {
            values,
            row_names: rows.iter().map(|&r| self.row_names[r].clone()).collect(),
            col_names: cols.iter().map(|&c| self.col_names[c].clone()).collect(),
            zero_rows: self.zero_rows.iter().filter_map(|&r| pos(rows, r)).collect(),
            zero_cols: self.zero_cols.iter().filter_map(|&c| pos(cols, c)).collect(),
        }
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn cosine_matrix(a: &LabelVectorSet, b: &LabelVectorSet) -> Result<SimilarityMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let norms = |s: &LabelVectorSet| -> Vec<f64> {
        s.matrix.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()
    };
    let (na, nb) = (norms(a), norms(b));
    let same = a == b;
    let mut values = a.matrix.dot(&b.matrix.t());
    for ((i, j), v) in values.indexed_iter_mut() {
        let denom = na[i] * nb[j];
        *v = if denom == 0.0 {
            0.0
        } else if same && i == j {
            1.0
        } else {
            (*v / denom).clamp(-1.0, 1.0)
        };
    }
    let zeros = |n: &[f64]| n.iter().enumerate().filter(|(_, v)| **v == 0.0).map(|(i, _)| i).collect();
    Ok(SimilarityMatrix {
        values,
        row_names: a.names.clone(),
        col_names: b.names.clone(),
        zero_rows: zeros(&na),
        zero_cols: zeros(&nb),
    })
}
