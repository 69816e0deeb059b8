//! Embedding matrices and their centers.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("embedding set is empty")]
    Empty,
    #[error("embedding width must be positive")]
    ZeroDim,
    #[error("row {row}: expected {expected} values, got {found}")]
    DimensionMismatch { row: usize, expected: usize, found: usize },
    #[error("row {row}: non-finite value")]
    NonFiniteValue { row: usize },
    #[error("{ids} ids for {rows} rows")]
    IdCountMismatch { ids: usize, rows: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Image,
    Text,
}

/// `N × dim` encoder outputs with one id per row.
///
/// Values are kept at the 32-bit precision encoders produce; every
/// arithmetic path widens to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    kind: EmbeddingKind,
    meta: BTreeMap<String, String>,
}

impl EmbeddingSet {
    /// Validates and builds a set from row-major `data`.
    pub fn new(
        kind: EmbeddingKind,
        dim: usize,
        ids: Vec<String>,
        data: Vec<f32>,
    ) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        if data.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if !data.len().is_multiple_of(dim) {
            let row = data.len() / dim;
            return Err(EmbeddingError::DimensionMismatch {
                row,
                expected: dim,
                found: data.len() - row * dim,
            });
        }
        let rows = data.len() / dim;
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFiniteValue { row: pos / dim });
        }
        if ids.len() != rows {
            return Err(EmbeddingError::IdCountMismatch { ids: ids.len(), rows });
        }
        let mut seen = BTreeSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(EmbeddingError::DuplicateId(id.clone()));
            }
        }
        Ok(Self { ids, dim, data, kind, meta: BTreeMap::new() })
    }

    /// Builds a set from `f64` rows, rounding to storage precision.
    pub fn from_rows(
        kind: EmbeddingKind,
        ids: Vec<String>,
        rows: &[Vec<f64>],
    ) -> Result<Self, EmbeddingError> {
        let dim = rows.first().map(Vec::len).ok_or(EmbeddingError::Empty)?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(EmbeddingError::DimensionMismatch { row: i, expected: dim, found: r.len() });
            }
            data.extend(r.iter().map(|&v| v as f32));
        }
        Self::new(kind, dim, ids, data)
    }

    pub fn with_meta(mut self, meta: BTreeMap<String, String>) -> Self {
        self.meta = meta;
        self
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Row `i` widened to `f64`.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }
}

/// Mean embedding of a set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Center {
    pub vector: Vec<f64>,
    pub source_kind: EmbeddingKind,
    pub n_source: usize,
}

impl Center {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Arithmetic mean of the rows, on raw encoder outputs.
pub fn compute_center(set: &EmbeddingSet) -> Center {
    center_of(set, false)
}

/// Mean of the L2-normalized rows. Used for sensitivity studies only.
pub fn compute_center_normalized(set: &EmbeddingSet) -> Center {
    center_of(set, true)
}

fn center_of(set: &EmbeddingSet, normalize: bool) -> Center {
    let dim = set.dim();
    let mut acc = vec![0.0f64; dim];
    for row in set.rows() {
        let scale = if normalize { inv_norm(row) } else { 1.0 };
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += f64::from(v) * scale;
        }
    }
    let n = set.len();
    for a in &mut acc {
        *a /= n as f64;
    }
    Center { vector: acc, source_kind: set.kind(), n_source: n }
}

pub(crate) fn inv_norm(row: &[f32]) -> f64 {
    let sq: f64 = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
    if sq > 0.0 {
        1.0 / libm::sqrt(sq)
    } else {
        1.0
    }
}
