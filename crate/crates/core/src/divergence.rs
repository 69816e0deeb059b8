//! KL divergence between fitted attribute-strength densities.
//!
//! For each attribute (SaD), attribute pair (PaD) or k-tuple, the training
//! and generated columns get their own KDE, both are evaluated on a shared
//! grid, floored, normalized to discrete masses and compared with
//! `KL(train ‖ generated)`. The report total is the mean over keys.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{default_resolution, fit_kde_columns, grid_covering, DensityError, DensityModel, Grid};
use crate::par;
use crate::scoring::ScoreMatrix;

/// Floor applied to grid densities before normalization.
pub const KL_FLOOR: f64 = 1e-12;

/// Below this many rows a k ≥ 3 tuple divergence carries a warning.
pub const DEFAULT_NWAY_SAMPLE_FLOOR: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DivergenceError {
    #[error("attribute lists differ")]
    AttributeMismatch,
    #[error("score modes differ: {0} vs {1}")]
    ModeMismatch(&'static str, &'static str),
    #[error("score matrices were computed against different centers")]
    CenterMismatch,
    #[error("need at least {needed} attributes, found {found}")]
    TooFewAttributes { needed: usize, found: usize },
    #[error("tuple size {k} is outside the configured range 2..={max}")]
    TupleSize { k: usize, max: usize },
    #[error(transparent)]
    Density(#[from] DensityError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceConfig {
    /// Points per axis by dimensionality; `None` uses the default for `d`.
    pub resolution_1d: Option<usize>,
    pub resolution_2d: Option<usize>,
    pub resolution_3d: Option<usize>,
    pub resolution_nd: Option<usize>,
    pub kl_floor: f64,
    /// Cap on rows fed to each KDE; larger matrices are subsampled by a
    /// seeded shuffle.
    pub max_samples: Option<usize>,
    pub subsample_seed: u64,
    pub max_tuple: usize,
    pub nway_sample_floor: usize,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            resolution_1d: None,
            resolution_2d: None,
            resolution_3d: None,
            resolution_nd: None,
            kl_floor: KL_FLOOR,
            max_samples: None,
            subsample_seed: 0,
            max_tuple: 3,
            nway_sample_floor: DEFAULT_NWAY_SAMPLE_FLOOR,
        }
    }
}

impl DivergenceConfig {
    pub fn resolution(&self, d: usize) -> usize {
        let r = match d {
            1 => self.resolution_1d,
            2 => self.resolution_2d,
            3 => self.resolution_3d,
            _ => self.resolution_nd,
        };
        r.unwrap_or_else(|| default_resolution(d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceKind {
    Sad,
    Pad,
    #[serde(rename = "nway")]
    NWay(usize),
}

impl DivergenceKind {
    pub fn tuple_size(self) -> usize {
        match self {
            DivergenceKind::Sad => 1,
            DivergenceKind::Pad => 2,
            DivergenceKind::NWay(k) => k,
        }
    }

    pub fn label(self) -> String {
        match self {
            DivergenceKind::Sad => "SaD".into(),
            DivergenceKind::Pad => "PaD".into(),
            DivergenceKind::NWay(k) => format!("{k}-way"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyDivergence {
    pub attributes: Vec<String>,
    pub kl: f64,
}

/// Training mean minus generated mean for one attribute. Negative means the
/// generated set scores the attribute higher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanDiff {
    pub attribute: String,
    pub train_minus_generated: f64,
}

/// Settings a report was computed with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub resolution: usize,
    pub bandwidth_rule: String,
    pub kl_floor: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub max_samples: Option<usize>,
    pub subsample_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub kind: DivergenceKind,
    pub total: f64,
    pub per_key: Vec<KeyDivergence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_diffs: Option<Vec<MeanDiff>>,
    pub config: ConfigSnapshot,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DivergenceReport {
    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.per_key.iter().flat_map(|k| k.attributes.iter().map(String::as_str))
    }

    pub fn mean_diff(&self, attribute: &str) -> Option<f64> {
        self.mean_diffs.as_ref()?.iter().find(|m| m.attribute == attribute).map(|m| m.train_minus_generated)
    }
}

/// `KL(P ‖ Q)` between two densities discretized on `grid`.
///
/// Both are floored at `floor`, normalized to unit mass over the grid
/// points, and compared as `Σ p·ln(p/q)`.
pub fn kl_on_grid(p: &DensityModel, q: &DensityModel, grid: &Grid, floor: f64) -> Result<f64, DivergenceError> {
    if p.dim() != q.dim() {
        return Err(DensityError::DimensionMismatch { expected: p.dim(), found: q.dim() }.into());
    }
    let pv = p.eval_grid(grid)?;
    let qv = q.eval_grid(grid)?;
    Ok(kl_masses(&pv, &qv, floor))
}

/// Discrete KL between two non-negative weight vectors after flooring and
/// normalization.
pub fn kl_masses(p: &[f64], q: &[f64], floor: f64) -> f64 {
    let sp: f64 = p.iter().map(|v| v.max(floor)).sum();
    let sq: f64 = q.iter().map(|v| v.max(floor)).sum();
    let mut kl = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let pa = a.max(floor) / sp;
        let qb = b.max(floor) / sq;
        kl += pa * libm::log(pa / qb);
    }
    // Gibbs' inequality; only rounding can push the sum below zero.
    kl.max(0.0)
}

fn check_compatible(x: &ScoreMatrix, y: &ScoreMatrix) -> Result<(), DivergenceError> {
    if x.attributes() != y.attributes() {
        return Err(DivergenceError::AttributeMismatch);
    }
    if x.mode() != y.mode() {
        return Err(DivergenceError::ModeMismatch(x.mode().as_str(), y.mode().as_str()));
    }
    if x.centers() != y.centers() {
        return Err(DivergenceError::CenterMismatch);
    }
    Ok(())
}

fn subsample(m: &ScoreMatrix, cap: Option<usize>, seed: u64, stream: u64) -> ScoreMatrix {
    match cap {
        Some(cap) if m.n_rows() > cap => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let mut idx: Vec<usize> = (0..m.n_rows()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(cap);
            m.select_rows(&idx)
        }
        _ => m.clone(),
    }
}

/// Lexicographic k-subsets of `0..m`.
pub fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 || k > m {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + m - k) else {
            return out;
        };
        idx[i] += 1;
        for j in (i + 1)..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// KL for one attribute tuple between two compatible matrices.
pub fn tuple_divergence(
    x: &ScoreMatrix,
    y: &ScoreMatrix,
    tuple: &[usize],
    config: &DivergenceConfig,
) -> Result<f64, DivergenceError> {
    let xc: Vec<Vec<f64>> = tuple.iter().map(|&j| x.column(j)).collect();
    let yc: Vec<Vec<f64>> = tuple.iter().map(|&j| y.column(j)).collect();
    let xr: Vec<&[f64]> = xc.iter().map(Vec::as_slice).collect();
    let yr: Vec<&[f64]> = yc.iter().map(Vec::as_slice).collect();
    let p = fit_kde_columns(&xr)?;
    let q = fit_kde_columns(&yr)?;
    let grid = grid_covering(&p, &q, Some(config.resolution(tuple.len())))?;
    kl_on_grid(&p, &q, &grid, config.kl_floor)
}

fn tuple_report(
    x: &ScoreMatrix,
    y: &ScoreMatrix,
    kind: DivergenceKind,
    config: &DivergenceConfig,
) -> Result<DivergenceReport, DivergenceError> {
    check_compatible(x, y)?;
    let k = kind.tuple_size();
    let m = x.n_attributes();
    if m < k {
        return Err(DivergenceError::TooFewAttributes { needed: k, found: m });
    }
    let xs = subsample(x, config.max_samples, config.subsample_seed, 0);
    let ys = subsample(y, config.max_samples, config.subsample_seed, 1);
    let tuples = combinations(m, k);
    let kls = par::map(&tuples, |t| tuple_divergence(&xs, &ys, t, config));
    let mut per_key = Vec::with_capacity(tuples.len());
    for (t, kl) in tuples.iter().zip(kls) {
        per_key.push(KeyDivergence { attributes: t.iter().map(|&j| x.attributes()[j].clone()).collect(), kl: kl? });
    }
    let total = per_key.iter().map(|e| e.kl).sum::<f64>() / per_key.len() as f64;
    let mut warnings = Vec::new();
    if k >= 3 && xs.n_rows().min(ys.n_rows()) < config.nway_sample_floor {
        warnings.push(format!(
            "SampleCountWarning: {} rows is below the recommended {} for {k}-way densities",
            xs.n_rows().min(ys.n_rows()),
            config.nway_sample_floor
        ));
    }
    Ok(DivergenceReport {
        kind,
        total,
        per_key,
        mean_diffs: None,
        config: ConfigSnapshot {
            resolution: config.resolution(k),
            bandwidth_rule: "scott".into(),
            kl_floor: config.kl_floor,
            n_x: xs.n_rows(),
            n_y: ys.n_rows(),
            max_samples: config.max_samples,
            subsample_seed: config.subsample_seed,
        },
        warnings,
    })
}

/// Single-attribute divergence with per-attribute mean differences.
pub fn sad(x: &ScoreMatrix, y: &ScoreMatrix, config: &DivergenceConfig) -> Result<DivergenceReport, DivergenceError> {
    let mut report = tuple_report(x, y, DivergenceKind::Sad, config)?;
    report.mean_diffs = Some(mean_differences(x, y)?);
    Ok(report)
}

/// Paired-attribute divergence over all unordered attribute pairs.
pub fn pad(x: &ScoreMatrix, y: &ScoreMatrix, config: &DivergenceConfig) -> Result<DivergenceReport, DivergenceError> {
    tuple_report(x, y, DivergenceKind::Pad, config)
}

/// Divergence of joint k-attribute densities over all k-subsets.
pub fn nway_divergence(
    x: &ScoreMatrix,
    y: &ScoreMatrix,
    k: usize,
    config: &DivergenceConfig,
) -> Result<DivergenceReport, DivergenceError> {
    if k < 2 || k > config.max_tuple {
        return Err(DivergenceError::TupleSize { k, max: config.max_tuple });
    }
    tuple_report(x, y, DivergenceKind::NWay(k), config)
}

/// Per attribute: mean training score minus mean generated score.
pub fn mean_differences(x: &ScoreMatrix, y: &ScoreMatrix) -> Result<Vec<MeanDiff>, DivergenceError> {
    check_compatible(x, y)?;
    let col_mean = |s: &ScoreMatrix, j: usize| s.column(j).iter().sum::<f64>() / s.n_rows() as f64;
    Ok(x.attributes()
        .iter()
        .enumerate()
        .map(|(j, a)| MeanDiff { attribute: a.clone(), train_minus_generated: col_mean(x, j) - col_mean(y, j) })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedKey {
    pub attributes: Vec<String>,
    pub kl: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_diff: Option<f64>,
}

/// The `top` largest keys, descending by KL with ties in key order.
pub fn rank_worst(report: &DivergenceReport, top: usize) -> Vec<RankedKey> {
    let mut keys: Vec<&KeyDivergence> = report.per_key.iter().collect();
    keys.sort_by(|a, b| b.kl.total_cmp(&a.kl).then_with(|| a.attributes.cmp(&b.attributes)));
    keys.into_iter()
        .take(top)
        .map(|k| RankedKey {
            attributes: k.attributes.clone(),
            kl: k.kl,
            mean_diff: match (report.kind, k.attributes.as_slice()) {
                (DivergenceKind::Sad, [a]) => report.mean_diff(a),
                _ => None,
            },
        })
        .collect()
}
