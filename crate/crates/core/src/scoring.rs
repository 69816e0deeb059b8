//! CLIPScore and Heterogeneous CLIPScore.
//!
//! CLIPScore is `100 · cos(image, text)`. Heterogeneous CLIPScore (HCS)
//! subtracts an image center from image embeddings and a separate text
//! center from attribute embeddings before taking the cosine, which spreads
//! scores over the whole `[-100, 100]` range.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{compute_center, compute_center_normalized, inv_norm, Center, EmbeddingKind, EmbeddingSet};
use crate::par;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("zero vector in cosine similarity")]
    ZeroVector,
    #[error("{kind:?} row {index} coincides with its center")]
    DegenerateVector { kind: EmbeddingKind, index: usize },
    #[error("dimension mismatch: images have width {images}, texts have width {texts}")]
    DimMismatch { images: usize, texts: usize },
    #[error("expected a {expected:?} embedding set")]
    WrongKind { expected: EmbeddingKind },
    #[error("shape mismatch: scores are {rows}x{cols}, labels have {labels} entries")]
    ShapeMismatch { rows: usize, cols: usize, labels: usize },
    #[error("attribute column {0} has no positive or no negative label")]
    DegenerateColumn(usize),
    #[error("score at row {row}, column {col} is outside [-100, 100] or not finite")]
    OutOfRange { row: usize, col: usize },
    #[error("score matrix has {values} values for {rows}x{cols}")]
    BadShape { rows: usize, cols: usize, values: usize },
    #[error("HCS scores must record their centers, CS and synthetic scores must not")]
    CenterPresence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// Plain CLIPScore.
    Cs,
    /// Heterogeneous CLIPScore.
    Hcs,
    /// Generated directly as attribute strengths, without embeddings.
    Synthetic,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Cs => "cs",
            ScoreMode::Hcs => "hcs",
            ScoreMode::Synthetic => "synthetic",
        }
    }
}

/// Image and text centers an HCS matrix was computed against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterPair {
    pub image: Center,
    pub text: Center,
}

/// `N × M` attribute strengths, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    mode: ScoreMode,
    attributes: Vec<String>,
    rows: usize,
    values: Vec<f64>,
    centers: Option<CenterPair>,
}

impl ScoreMatrix {
    pub fn new(
        mode: ScoreMode,
        attributes: Vec<String>,
        values: Vec<f64>,
        centers: Option<CenterPair>,
    ) -> Result<Self, ScoreError> {
        let cols = attributes.len();
        if cols == 0 || !values.len().is_multiple_of(cols) || values.is_empty() {
            return Err(ScoreError::BadShape { rows: 0, cols, values: values.len() });
        }
        if (mode == ScoreMode::Hcs) != centers.is_some() {
            return Err(ScoreError::CenterPresence);
        }
        if let Some(pos) = values.iter().position(|v| !(v.abs() <= 100.0)) {
            return Err(ScoreError::OutOfRange { row: pos / cols, col: pos % cols });
        }
        Ok(Self { mode, attributes, rows: values.len() / cols, values, centers })
    }

    pub fn mode(&self) -> ScoreMode {
        self.mode
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn centers(&self) -> Option<&CenterPair> {
        self.centers.as_ref()
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.attributes.len() + col]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.attributes.len();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().skip(j).step_by(self.attributes.len()).copied().collect()
    }

    /// Rows in the given order. Indices may repeat.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.attributes.len());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self { values, rows: indices.len(), ..self.clone() }
    }

    /// Copy with rows `[0, count)` taken from `other`.
    pub fn replace_leading_rows(&self, other: &ScoreMatrix, count: usize) -> Self {
        let m = self.attributes.len();
        let mut values = self.values.clone();
        values[..count * m].copy_from_slice(&other.values[..count * m]);
        Self { values, ..self.clone() }
    }

    /// Copy with column `col` replaced by `column`.
    pub fn with_column(&self, col: usize, column: &[f64]) -> Self {
        let m = self.attributes.len();
        let mut values = self.values.clone();
        for (i, &v) in column.iter().enumerate() {
            values[i * m + col] = v;
        }
        Self { values, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum CenterPolicy {
    /// Image center from the scored images, text center from the attributes.
    #[default]
    TrainImages,
    /// One shared origin, the average of the image and text centers.
    Pooled,
    /// Centers supplied by the caller, typically those of the training set.
    Explicit(CenterPair),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreConfig {
    pub mode: ScoreMode,
    pub centers: CenterPolicy,
    /// L2-normalize embeddings before centering.
    pub l2_normalize: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { mode: ScoreMode::Hcs, centers: CenterPolicy::TrainImages, l2_normalize: false }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

fn scaled_cosine(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    let c = dot(a, b) / (na * nb);
    100.0 * c.clamp(-1.0, 1.0)
}

/// `100 · cos(image_row, text_row)`.
pub fn clip_score(image_row: &[f64], text_row: &[f64]) -> Result<f64, ScoreError> {
    let (ni, nt) = (norm(image_row), norm(text_row));
    if ni == 0.0 || nt == 0.0 {
        return Err(ScoreError::ZeroVector);
    }
    Ok(scaled_cosine(image_row, ni, text_row, nt))
}

/// `100 · cos(image_row − c_img, text_row − c_txt)`.
pub fn hcs(image_row: &[f64], text_row: &[f64], c_img: &Center, c_txt: &Center) -> Result<f64, ScoreError> {
    let vx: Vec<f64> = image_row.iter().zip(&c_img.vector).map(|(a, b)| a - b).collect();
    let va: Vec<f64> = text_row.iter().zip(&c_txt.vector).map(|(a, b)| a - b).collect();
    let (nx, na) = (norm(&vx), norm(&va));
    if nx == 0.0 {
        return Err(ScoreError::DegenerateVector { kind: EmbeddingKind::Image, index: 0 });
    }
    if na == 0.0 {
        return Err(ScoreError::DegenerateVector { kind: EmbeddingKind::Text, index: 0 });
    }
    Ok(scaled_cosine(&vx, nx, &va, na))
}

fn widened_rows(set: &EmbeddingSet, normalize: bool) -> Vec<Vec<f64>> {
    set.rows()
        .map(|r| {
            let s = if normalize { inv_norm(r) } else { 1.0 };
            r.iter().map(|&v| f64::from(v) * s).collect()
        })
        .collect()
}

/// Resolves the centers a matrix would be scored against.
pub fn resolve_centers(
    images: &EmbeddingSet,
    texts: &EmbeddingSet,
    config: &ScoreConfig,
) -> Result<CenterPair, ScoreError> {
    check_inputs(images, texts)?;
    let center = if config.l2_normalize { compute_center_normalized } else { compute_center };
    Ok(match &config.centers {
        CenterPolicy::TrainImages => CenterPair { image: center(images), text: center(texts) },
        CenterPolicy::Pooled => {
            let (ci, ct) = (center(images), center(texts));
            let origin: Vec<f64> = ci.vector.iter().zip(&ct.vector).map(|(a, b)| 0.5 * (a + b)).collect();
            CenterPair {
                image: Center { vector: origin.clone(), ..ci },
                text: Center { vector: origin, ..ct },
            }
        }
        CenterPolicy::Explicit(pair) => {
            if pair.image.dim() != images.dim() || pair.text.dim() != texts.dim() {
                return Err(ScoreError::DimMismatch { images: images.dim(), texts: pair.text.dim() });
            }
            pair.clone()
        }
    })
}

fn check_inputs(images: &EmbeddingSet, texts: &EmbeddingSet) -> Result<(), ScoreError> {
    if images.kind() != EmbeddingKind::Image {
        return Err(ScoreError::WrongKind { expected: EmbeddingKind::Image });
    }
    if texts.kind() != EmbeddingKind::Text {
        return Err(ScoreError::WrongKind { expected: EmbeddingKind::Text });
    }
    if images.dim() != texts.dim() {
        return Err(ScoreError::DimMismatch { images: images.dim(), texts: texts.dim() });
    }
    Ok(())
}

/// Scores every image against every attribute. The attribute names are the
/// ids of `texts`.
pub fn score_matrix(
    images: &EmbeddingSet,
    texts: &EmbeddingSet,
    config: &ScoreConfig,
) -> Result<ScoreMatrix, ScoreError> {
    check_inputs(images, texts)?;
    if config.mode == ScoreMode::Synthetic {
        return Err(ScoreError::CenterPresence);
    }
    let mut img = widened_rows(images, config.l2_normalize);
    let mut txt = widened_rows(texts, config.l2_normalize);
    let centers = if config.mode == ScoreMode::Hcs {
        let pair = resolve_centers(images, texts, config)?;
        for r in &mut img {
            r.iter_mut().zip(&pair.image.vector).for_each(|(v, c)| *v -= c);
        }
        for r in &mut txt {
            r.iter_mut().zip(&pair.text.vector).for_each(|(v, c)| *v -= c);
        }
        Some(pair)
    } else {
        None
    };
    let degenerate = |kind| move |index| ScoreError::DegenerateVector { kind, index };
    let txt_norms: Vec<f64> = txt.iter().map(|r| norm(r)).collect();
    if let Some(j) = txt_norms.iter().position(|&n| n == 0.0) {
        return Err(degenerate(EmbeddingKind::Text)(j));
    }
    let rows = par::map(&img, |r| {
        let nr = norm(r);
        if nr == 0.0 {
            return None;
        }
        Some(txt.iter().zip(&txt_norms).map(|(t, &nt)| scaled_cosine(r, nr, t, nt)).collect::<Vec<f64>>())
    });
    let mut values = Vec::with_capacity(images.len() * texts.len());
    for (i, r) in rows.into_iter().enumerate() {
        values.extend(r.ok_or_else(|| degenerate(EmbeddingKind::Image)(i))?);
    }
    ScoreMatrix::new(config.mode, texts.ids().to_vec(), values, centers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMetrics {
    pub phrase: String,
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub per_attribute: Vec<AttributeMetrics>,
    pub macro_accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
}

/// Top-k binary classification per attribute: with `k` the number of
/// positive labels in a column, the `k` highest-scoring rows are predicted
/// positive (equal scores favour the lower row index).
///
/// `labels` is row-major `N × M`, matching `scores`.
pub fn topk_classification_eval(scores: &ScoreMatrix, labels: &[bool]) -> Result<ClassificationResult, ScoreError> {
    let (n, m) = (scores.n_rows(), scores.n_attributes());
    if labels.len() != n * m {
        return Err(ScoreError::ShapeMismatch { rows: n, cols: m, labels: labels.len() });
    }
    let mut per_attribute = Vec::with_capacity(m);
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    for j in 0..m {
        let col = scores.column(j);
        let truth: Vec<bool> = (0..n).map(|i| labels[i * m + j]).collect();
        let k = truth.iter().filter(|&&t| t).count();
        if k == 0 || k == n {
            return Err(ScoreError::DegenerateColumn(j));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
        let mut predicted = vec![false; n];
        for &i in &order[..k] {
            predicted[i] = true;
        }
        let (mut tp, mut tn, mut fp, mut fneg) = (0usize, 0usize, 0usize, 0usize);
        for (&p, &t) in predicted.iter().zip(&truth) {
            match (p, t) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
            }
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
        per_attribute.push(AttributeMetrics {
            phrase: scores.attributes()[j].clone(),
            accuracy: (tp + tn) as f64 / n as f64,
            f1: f1(tp, fp, fneg),
        });
    }
    let macro_accuracy = per_attribute.iter().map(|a| a.accuracy).sum::<f64>() / m as f64;
    let macro_f1 = per_attribute.iter().map(|a| a.f1).sum::<f64>() / m as f64;
    Ok(ClassificationResult { per_attribute, macro_accuracy, macro_f1, micro_f1: f1(tp_all, fp_all, fn_all) })
}

fn f1(tp: usize, fp: usize, fneg: usize) -> f64 {
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}
