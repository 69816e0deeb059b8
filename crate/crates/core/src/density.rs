//! Gaussian kernel density estimation with Scott's-rule bandwidth.
//!
//! A fitted [`DensityModel`] is the equally weighted mixture
//! `(1/n) Σᵢ N(p; sᵢ, H)` with `H = Cov(samples) · f²` and
//! `f = n^(-1/(d+4))`. The covariance is the unbiased (n − 1) estimate.
//!
//! Evaluation works in whitened coordinates `z = L⁻¹ x` (`H = L Lᵀ`), where
//! every kernel is isotropic and the exponent is `|z_p − z_s|² / 2`. Samples
//! are bucketed on a coarse cell grid so a query only visits kernels whose
//! squared distance is within `q_ref + T` of the query, where `q_ref` is the
//! squared distance to some nearby sample. Every skipped kernel is smaller
//! than the nearest one by a factor `e^(-T/2)`, and `T` is chosen so the
//! total relative truncation error is below [`TRUNCATION_REL_TOL`].

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use thiserror::Error;

use crate::linalg;
use crate::par;

/// Variance below which a covariance diagonal counts as degenerate.
pub const EPS_VAR: f64 = 1e-12;
/// Diagonal loading, relative to `trace / d`, for degenerate covariances.
pub const REG_SCALE: f64 = 1e-9;
/// Upper bound on the relative error of one density value from skipped
/// kernels.
pub const TRUNCATION_REL_TOL: f64 = 1e-13;
/// Upper bound on the absolute error of a density evaluated on a grid.
pub const GRID_ABS_TOL: f64 = 1e-26;
/// Largest supported dimensionality.
pub const MAX_DIM: usize = 8;
/// Smallest grid resolution.
pub const MIN_RESOLUTION: usize = 8;

const INDEX_CELLS_PER_AXIS: f64 = 256.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("need at least 2 samples, got {n}")]
    TooFewSamples { n: usize },
    #[error("dimensionality must be between 1 and {MAX_DIM}, got {0}")]
    BadDimension(usize),
    #[error("{len} values do not form rows of width {d}")]
    BadShape { len: usize, d: usize },
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("all samples are identical along dimension {dim}")]
    AllSamplesIdentical { dim: usize },
    #[error("kernel covariance is not positive definite after regularization")]
    Singular,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("grid resolution must be at least {MIN_RESOLUTION}, got {0}")]
    BadResolution(usize),
    #[error("grid axis {0} has an empty range")]
    EmptyRange(usize),
}

/// `n^(-1/(d+4))`.
pub fn scott_factor(n: usize, d: usize) -> Result<f64, DensityError> {
    if n < 2 {
        return Err(DensityError::TooFewSamples { n });
    }
    if d == 0 {
        return Err(DensityError::BadDimension(d));
    }
    Ok(libm::pow(n as f64, -1.0 / (d as f64 + 4.0)))
}

/// Default points per axis for a `d`-dimensional grid.
pub fn default_resolution(d: usize) -> usize {
    match d {
        1 => 512,
        2 => 128,
        3 => 64,
        _ => 16,
    }
}

#[derive(Debug, Clone)]
pub struct DensityModel {
    d: usize,
    n: usize,
    samples: Vec<f64>,
    scott_factor: f64,
    data_cov: Vec<f64>,
    kernel_cov: Vec<f64>,
    kernel_chol: Vec<f64>,
    inv_cov: Vec<f64>,
    log_norm: f64,
    regularized: bool,
    index: KernelIndex,
}

/// Fits a KDE to `n × d` row-major samples.
pub fn fit_kde(samples: &[f64], d: usize) -> Result<DensityModel, DensityError> {
    DensityModel::fit(samples, d)
}

/// Fits a KDE whose dimensions are the given equal-length columns.
pub fn fit_kde_columns(columns: &[&[f64]]) -> Result<DensityModel, DensityError> {
    let d = columns.len();
    if d == 0 || d > MAX_DIM {
        return Err(DensityError::BadDimension(d));
    }
    let n = columns[0].len();
    if let Some(c) = columns.iter().find(|c| c.len() != n) {
        return Err(DensityError::BadShape { len: c.len(), d: n });
    }
    let mut rows = Vec::with_capacity(n * d);
    for i in 0..n {
        rows.extend(columns.iter().map(|c| c[i]));
    }
    DensityModel::fit(&rows, d)
}

impl DensityModel {
    pub fn fit(samples: &[f64], d: usize) -> Result<Self, DensityError> {
        if d == 0 || d > MAX_DIM {
            return Err(DensityError::BadDimension(d));
        }
        if !samples.len().is_multiple_of(d) {
            return Err(DensityError::BadShape { len: samples.len(), d });
        }
        let n = samples.len() / d;
        let factor = scott_factor(n, d)?;
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(DensityError::NonFinite { index: i / d });
        }
        for k in 0..d {
            let first = samples[k];
            if samples.iter().skip(k).step_by(d).all(|&v| v == first) {
                return Err(DensityError::AllSamplesIdentical { dim: k });
            }
        }

        // Canonical sample order makes every downstream sum independent of
        // the caller's row order.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (&samples[a * d..(a + 1) * d], &samples[b * d..(b + 1) * d]);
            ra.iter().zip(rb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(core::cmp::Ordering::Equal)
        });
        let mut sorted = Vec::with_capacity(samples.len());
        for &i in &order {
            sorted.extend_from_slice(&samples[i * d..(i + 1) * d]);
        }

        let mut data_cov = linalg::covariance(&sorted, d);
        let degenerate_diag = (0..d).any(|k| data_cov[k * d + k] < EPS_VAR);
        let regularized = degenerate_diag || linalg::cholesky(&data_cov, d, 1e-14).is_none();
        if regularized {
            let load = REG_SCALE * linalg::trace(&data_cov, d) / d as f64;
            for k in 0..d {
                data_cov[k * d + k] += load;
            }
        }
        let f2 = factor * factor;
        let kernel_cov: Vec<f64> = data_cov.iter().map(|v| v * f2).collect();
        let kernel_chol = linalg::cholesky(&kernel_cov, d, 0.0).ok_or(DensityError::Singular)?;
        let inv_cov = linalg::inverse_from_cholesky(&kernel_chol, d);
        let log_norm = -0.5 * d as f64 * libm::log(2.0 * PI) - 0.5 * linalg::log_det_from_cholesky(&kernel_chol, d);
        let index = KernelIndex::build(&sorted, d, &kernel_chol);
        Ok(Self {
            d,
            n,
            samples: sorted,
            scott_factor: factor,
            data_cov,
            kernel_cov,
            kernel_chol,
            inv_cov,
            log_norm,
            regularized,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    /// Samples in canonical (lexicographic) order, `n × d` row-major.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn scott_factor(&self) -> f64 {
        self.scott_factor
    }

    /// Sample covariance, including any diagonal loading.
    pub fn data_covariance(&self) -> &[f64] {
        &self.data_cov
    }

    pub fn kernel_covariance(&self) -> &[f64] {
        &self.kernel_cov
    }

    pub fn inverse_kernel_covariance(&self) -> &[f64] {
        &self.inv_cov
    }

    /// Log of one kernel's normalizing constant, `-(d/2)·ln 2π − ½·ln det H`.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// Whether the covariance needed diagonal loading.
    pub fn regularized(&self) -> bool {
        self.regularized
    }

    /// Kernel standard deviation along dimension `k`.
    pub fn kernel_std(&self, k: usize) -> f64 {
        libm::sqrt(self.kernel_cov[k * self.d + k])
    }

    /// Density at one point.
    pub fn density_at(&self, point: &[f64]) -> f64 {
        let scale = libm::exp(self.log_norm) / self.n as f64;
        self.index.kernel_sum(point, &self.kernel_chol) * scale
    }

    /// Densities at `m × d` row-major points.
    pub fn eval(&self, points: &[f64]) -> Result<Vec<f64>, DensityError> {
        if !points.len().is_multiple_of(self.d) {
            return Err(DensityError::BadShape { len: points.len(), d: self.d });
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(DensityError::NonFinite { index: i / self.d });
        }
        let d = self.d;
        Ok(par::map_range(points.len() / d, |i| self.density_at(&points[i * d..(i + 1) * d])))
    }

    /// Densities at every grid point, in [`Grid::points`] order.
    ///
    /// Each kernel is accumulated along grid rows of the last axis, with
    /// `exp` evaluated once per row and a multiplicative recurrence across
    /// it. Kernels are cut off where their contribution drops below
    /// [`GRID_ABS_TOL`], so the absolute error of every value is below that
    /// bound. Values are summed in canonical sample order.
    pub fn eval_grid(&self, grid: &Grid) -> Result<Vec<f64>, DensityError> {
        if grid.dim() != self.d {
            return Err(DensityError::DimensionMismatch { expected: self.d, found: grid.dim() });
        }
        let d = self.d;
        let res = grid.resolution();
        // peak · e^(-q_max/2) ≤ GRID_ABS_TOL bounds the sum of everything skipped
        let q_max = (2.0 * (self.log_norm - libm::log(GRID_ABS_TOL))).max(1.0);
        let reach: Vec<f64> = (0..d).map(|k| libm::sqrt(q_max * self.kernel_cov[k * d + k])).collect();
        if d == 1 {
            let mut out = vec![0.0; res];
            self.scatter_rows(grid, q_max, &reach, None, &mut out);
            return Ok(out);
        }
        let slab = res.pow(d as u32 - 1);
        let slabs = par::map_range(res, |i0| {
            let mut out = vec![0.0; slab];
            self.scatter_rows(grid, q_max, &reach, Some(i0), &mut out);
            out
        });
        Ok(slabs.concat())
    }

    /// Adds every kernel's contribution to the grid points with first index
    /// `i0` (or to the whole line when `d == 1`).
    fn scatter_rows(&self, grid: &Grid, q_max: f64, reach: &[f64], i0: Option<usize>, out: &mut [f64]) {
        let d = self.d;
        let res = grid.resolution();
        let p = &self.inv_cov;
        let last = d - 1;
        let c = p[last * d + last];
        let step = grid.spacing(last);
        let lo_last = grid.lo[last];
        let decay = libm::exp(-c * step * step);
        let scale = libm::exp(self.log_norm) / self.n as f64;
        let samples: &[f64] = match i0 {
            None => &self.samples,
            Some(i) => {
                // samples are sorted by their first coordinate
                let x0 = grid.lo[0] + i as f64 * grid.spacing(0);
                let first = |i: usize| self.samples[i * d];
                let from = partition_point(self.n, |i| first(i) < x0 - reach[0]);
                let to = partition_point(self.n, |i| first(i) <= x0 + reach[0]);
                &self.samples[from * d..to * d]
            }
        };
        let mut v = [0.0; MAX_DIM];
        let mut idx = [0usize; MAX_DIM];
        let mut span = [(0usize, 0usize); MAX_DIM];
        for s in samples.chunks_exact(d) {
            if let Some(i) = i0 {
                v[0] = grid.lo[0] + i as f64 * grid.spacing(0) - s[0];
            }
            // middle axes: index ranges inside the kernel's bounding box
            let first_mid = usize::from(i0.is_some());
            let mut empty = false;
            for k in first_mid..last {
                let a = libm::ceil((s[k] - reach[k] - grid.lo[k]) / grid.spacing(k)).max(0.0);
                let b = libm::floor((s[k] + reach[k] - grid.lo[k]) / grid.spacing(k)).min((res - 1) as f64);
                if a > b {
                    empty = true;
                    break;
                }
                span[k] = (a as usize, b as usize);
                idx[k] = a as usize;
            }
            if empty {
                continue;
            }
            loop {
                let mut offset = 0;
                for k in first_mid..last {
                    v[k] = grid.lo[k] + idx[k] as f64 * grid.spacing(k) - s[k];
                    offset = offset * res + idx[k];
                }
                // Q(v_last) = a + 2·b·v_last + c·v_last²
                let (mut a, mut b) = (0.0, 0.0);
                for r in 0..last {
                    b += p[r * d + last] * v[r];
                    for t in 0..last {
                        a += p[r * d + t] * v[r] * v[t];
                    }
                }
                let q_min = a - b * b / c;
                if q_min <= q_max {
                    let centre = s[last] - b / c;
                    let half = libm::sqrt((q_max - q_min) / c);
                    let j0 = libm::ceil((centre - half - lo_last) / step).max(0.0);
                    let j1 = libm::floor((centre + half - lo_last) / step).min((res - 1) as f64);
                    if j0 <= j1 {
                        let (j0, j1) = (j0 as usize, j1 as usize);
                        let vl = lo_last + j0 as f64 * step - s[last];
                        let term = libm::exp(-0.5 * (a + 2.0 * b * vl + c * vl * vl));
                        let ratio = libm::exp(-(step * (b + c * vl) + 0.5 * c * step * step));
                        accumulate_row(&mut out[offset * res + j0..=offset * res + j1], term, ratio, decay);
                    }
                }
                // advance the odometer over the middle axes
                let mut k = last;
                let mut done = true;
                while k > first_mid {
                    k -= 1;
                    if idx[k] < span[k].1 {
                        idx[k] += 1;
                        done = false;
                        break;
                    }
                    idx[k] = span[k].0;
                }
                if done {
                    break;
                }
            }
        }
        for o in out.iter_mut() {
            *o *= scale;
        }
    }
}

/// Adds `term · ratio_0 ⋯ ratio_(j-1)` to `row[j]`, where consecutive ratios
/// shrink by `decay`. Four interleaved chains keep the multiplications
/// independent.
#[inline]
fn accumulate_row(row: &mut [f64], mut term: f64, mut ratio: f64, decay: f64) {
    // lane l carries elements l, l + 4, l + 8, …
    let mut t = [0.0; 4];
    let mut ratios = [0.0; 7];
    for l in 0..4 {
        t[l] = term;
        term *= ratio;
        ratios[l] = ratio;
        ratio *= decay;
    }
    for r in ratios.iter_mut().skip(4) {
        *r = ratio;
        ratio *= decay;
    }
    let mut step = [0.0; 4];
    for l in 0..4 {
        step[l] = ratios[l] * ratios[l + 1] * ratios[l + 2] * ratios[l + 3];
    }
    let d2 = decay * decay;
    let d4 = d2 * d2;
    let d16 = d4 * d4 * d4 * d4;
    let mut chunks = row.chunks_exact_mut(4);
    for chunk in &mut chunks {
        for l in 0..4 {
            chunk[l] += t[l];
            t[l] *= step[l];
            step[l] *= d16;
        }
    }
    for (o, tl) in chunks.into_remainder().iter_mut().zip(t) {
        *o += tl;
    }
}

/// First index in `0..len` where `pred` turns false; `pred` must be
/// monotone.
fn partition_point(len: usize, pred: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, len);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Densities of `model` at `m × d` row-major points.
pub fn eval_density(model: &DensityModel, points: &[f64]) -> Result<Vec<f64>, DensityError> {
    model.eval(points)
}

/// Whitened samples bucketed by their first (up to two) coordinates and
/// sorted within each bucket by the following coordinate.
#[derive(Debug, Clone)]
struct KernelIndex {
    d: usize,
    cell_dims: usize,
    lo: [f64; 2],
    width: [f64; 2],
    ncell: [usize; 2],
    offsets: Vec<usize>,
    z: Vec<f64>,
    keys: Vec<f64>,
    truncation: f64,
}

impl KernelIndex {
    fn build(samples: &[f64], d: usize, chol: &[f64]) -> Self {
        let n = samples.len() / d;
        let mut z = vec![0.0; samples.len()];
        for (src, dst) in samples.chunks_exact(d).zip(z.chunks_exact_mut(d)) {
            linalg::forward_substitute(chol, d, src, dst);
        }
        let cell_dims = (d - 1).min(2);
        let key_dim = cell_dims;
        let mut lo = [0.0; 2];
        let mut width = [1.0; 2];
        let mut ncell = [1usize; 2];
        for k in 0..cell_dims {
            let (mn, mx) = z.iter().skip(k).step_by(d).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let extent = mx - mn;
            lo[k] = mn;
            width[k] = (extent / INDEX_CELLS_PER_AXIS).max(1.0);
            ncell[k] = (extent / width[k]) as usize + 1;
        }
        let cell_of = |row: &[f64]| -> usize {
            let mut id = 0;
            for k in 0..cell_dims {
                let c = (((row[k] - lo[k]) / width[k]) as usize).min(ncell[k] - 1);
                id = id * ncell[k] + c;
            }
            id
        };
        let mut order: Vec<(usize, usize)> = z.chunks_exact(d).enumerate().map(|(i, r)| (cell_of(r), i)).collect();
        order.sort_by(|a, b| {
            a.0.cmp(&b.0).then_with(|| z[a.1 * d + key_dim].total_cmp(&z[b.1 * d + key_dim])).then(a.1.cmp(&b.1))
        });
        let total_cells = ncell[0] * ncell[1];
        let mut offsets = vec![0usize; total_cells + 1];
        for &(c, _) in &order {
            offsets[c + 1] += 1;
        }
        for c in 0..total_cells {
            offsets[c + 1] += offsets[c];
        }
        let mut zs = Vec::with_capacity(z.len());
        let mut keys = Vec::with_capacity(n);
        for &(_, i) in &order {
            zs.extend_from_slice(&z[i * d..(i + 1) * d]);
            keys.push(z[i * d + key_dim]);
        }
        let truncation = 2.0 * libm::log(n as f64) - 2.0 * libm::log(TRUNCATION_REL_TOL);
        Self { d, cell_dims, lo, width, ncell, offsets, z: zs, keys, truncation }
    }

    #[inline]
    fn sq_dist(&self, zp: &[f64], i: usize) -> f64 {
        let row = &self.z[i * self.d..(i + 1) * self.d];
        let mut q = 0.0;
        for (a, b) in zp.iter().zip(row) {
            let t = a - b;
            q += t * t;
        }
        q
    }

    fn cell_coord(&self, k: usize, v: f64) -> isize {
        libm::floor((v - self.lo[k]) / self.width[k]) as isize
    }

    fn cell_range(&self, cell: usize) -> (usize, usize) {
        (self.offsets[cell], self.offsets[cell + 1])
    }

    fn key_dim(&self) -> usize {
        self.cell_dims
    }

    /// Squared distance to a few key-neighbours of `zp` inside one cell.
    fn probe_cell(&self, zp: &[f64], cell: usize, best: &mut f64) {
        let (a, b) = self.cell_range(cell);
        if a == b {
            return;
        }
        let key = zp[self.key_dim()];
        let pos = a + self.keys[a..b].partition_point(|&k| k < key);
        let from = pos.saturating_sub(2).max(a);
        let to = (pos + 2).min(b);
        for i in from..to {
            *best = best.min(self.sq_dist(zp, i));
        }
    }

    /// An upper bound on the smallest squared distance from `zp` to a sample.
    fn reference_sq_dist(&self, zp: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        match self.cell_dims {
            0 => self.probe_cell(zp, 0, &mut best),
            1 => {
                let c = self.cell_coord(0, zp[0]).clamp(0, self.ncell[0] as isize - 1);
                for r in 0..self.ncell[0] as isize {
                    for cc in [c - r, c + r] {
                        if cc >= 0 && (cc as usize) < self.ncell[0] {
                            self.probe_cell(zp, cc as usize, &mut best);
                        }
                        if r == 0 {
                            break;
                        }
                    }
                    if best.is_finite() {
                        break;
                    }
                }
            }
            _ => {
                let c0 = self.cell_coord(0, zp[0]).clamp(0, self.ncell[0] as isize - 1);
                let c1 = self.cell_coord(1, zp[1]).clamp(0, self.ncell[1] as isize - 1);
                let max_r = self.ncell[0].max(self.ncell[1]) as isize;
                for r in 0..max_r {
                    for i in (c0 - r)..=(c0 + r) {
                        if i < 0 || i as usize >= self.ncell[0] {
                            continue;
                        }
                        let ring_edge = i == c0 - r || i == c0 + r;
                        let mut j = c1 - r;
                        while j <= c1 + r {
                            if j >= 0 && (j as usize) < self.ncell[1] {
                                self.probe_cell(zp, i as usize * self.ncell[1] + j as usize, &mut best);
                            }
                            j += if ring_edge || r == 0 { 1 } else { 2 * r };
                        }
                    }
                    if best.is_finite() {
                        break;
                    }
                }
            }
        }
        best
    }

    /// Squared distance from `v` to the cell slab `c` along axis `k`.
    fn axis_gap(&self, k: usize, v: f64, c: usize) -> f64 {
        let a = self.lo[k] + c as f64 * self.width[k];
        let b = a + self.width[k];
        let g = if v < a {
            a - v
        } else if v > b {
            v - b
        } else {
            0.0
        };
        g * g
    }

    fn sum_cell(&self, zp: &[f64], cell: usize, gap: f64, radius2: f64, acc: &mut f64) {
        let (a, b) = self.cell_range(cell);
        if a == b {
            return;
        }
        let rem = radius2 - gap;
        if rem < 0.0 {
            return;
        }
        let r = libm::sqrt(rem);
        let key = zp[self.key_dim()];
        let keys = &self.keys[a..b];
        let from = a + keys.partition_point(|&k| k < key - r);
        let to = a + keys.partition_point(|&k| k <= key + r);
        for i in from..to {
            let q = self.sq_dist(zp, i);
            if q <= radius2 {
                *acc += libm::exp(-0.5 * q);
            }
        }
    }

    fn axis_cells(&self, k: usize, v: f64, r: f64) -> Option<(usize, usize)> {
        let last = self.ncell[k] as isize - 1;
        let a = self.cell_coord(k, v - r).max(0);
        let b = self.cell_coord(k, v + r).min(last);
        (a <= b).then_some((a as usize, b as usize))
    }

    /// `Σ_s exp(-|z_p − z_s|² / 2)` over all samples, up to the truncation
    /// bound.
    fn kernel_sum(&self, point: &[f64], chol: &[f64]) -> f64 {
        let mut zbuf = [0.0; MAX_DIM];
        let zp = &mut zbuf[..self.d];
        linalg::forward_substitute(chol, self.d, point, zp);
        let zp = &*zp;
        let radius2 = self.reference_sq_dist(zp) + self.truncation;
        let r = libm::sqrt(radius2);
        let mut acc = 0.0;
        match self.cell_dims {
            0 => self.sum_cell(zp, 0, 0.0, radius2, &mut acc),
            1 => {
                if let Some((a, b)) = self.axis_cells(0, zp[0], r) {
                    for c in a..=b {
                        self.sum_cell(zp, c, self.axis_gap(0, zp[0], c), radius2, &mut acc);
                    }
                }
            }
            _ => {
                if let (Some((a0, b0)), Some((a1, b1))) = (self.axis_cells(0, zp[0], r), self.axis_cells(1, zp[1], r)) {
                    for c0 in a0..=b0 {
                        let g0 = self.axis_gap(0, zp[0], c0);
                        if g0 > radius2 {
                            continue;
                        }
                        for c1 in a1..=b1 {
                            let g = g0 + self.axis_gap(1, zp[1], c1);
                            self.sum_cell(zp, c0 * self.ncell[1] + c1, g, radius2, &mut acc);
                        }
                    }
                }
            }
        }
        acc
    }
}

/// Regular evaluation lattice. Points are enumerated row-major: the last
/// axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    lo: Vec<f64>,
    step: Vec<f64>,
    resolution: usize,
    cell_volume: f64,
}

impl Grid {
    /// `resolution` evenly spaced points per axis from `lo[k]` to `hi[k]`
    /// inclusive.
    pub fn new(lo: &[f64], hi: &[f64], resolution: usize) -> Result<Self, DensityError> {
        if lo.is_empty() || lo.len() > MAX_DIM {
            return Err(DensityError::BadDimension(lo.len()));
        }
        if hi.len() != lo.len() {
            return Err(DensityError::DimensionMismatch { expected: lo.len(), found: hi.len() });
        }
        if resolution < MIN_RESOLUTION {
            return Err(DensityError::BadResolution(resolution));
        }
        let mut step = Vec::with_capacity(lo.len());
        for (k, (&a, &b)) in lo.iter().zip(hi).enumerate() {
            if !(b > a) || !a.is_finite() || !b.is_finite() {
                return Err(DensityError::EmptyRange(k));
            }
            step.push((b - a) / (resolution - 1) as f64);
        }
        let cell_volume = step.iter().product();
        Ok(Self { lo: lo.to_vec(), step, resolution, cell_volume })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.resolution.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn axis(&self, k: usize) -> Vec<f64> {
        (0..self.resolution).map(|i| self.lo[k] + i as f64 * self.step[k]).collect()
    }

    pub fn spacing(&self, k: usize) -> f64 {
        self.step[k]
    }

    /// Coordinates of point `index` written into `out`.
    pub fn point_into(&self, index: usize, out: &mut [f64]) {
        let mut rest = index;
        for k in (0..self.dim()).rev() {
            let i = rest % self.resolution;
            rest /= self.resolution;
            out[k] = self.lo[k] + i as f64 * self.step[k];
        }
    }

    /// All points, `len() × d` row-major.
    pub fn points(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.len() * d];
        for (i, p) in out.chunks_exact_mut(d).enumerate() {
            self.point_into(i, p);
        }
        out
    }
}

/// Grid covering both models' samples with a three-kernel-width margin.
///
/// Per axis the range is `[min − 3h, max + 3h]` over the union of samples,
/// with `h` the larger of the two kernel standard deviations on that axis.
pub fn grid_covering(p: &DensityModel, q: &DensityModel, resolution: Option<usize>) -> Result<Grid, DensityError> {
    let d = p.dim();
    if q.dim() != d {
        return Err(DensityError::DimensionMismatch { expected: d, found: q.dim() });
    }
    let res = resolution.unwrap_or_else(|| default_resolution(d));
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for m in [p, q] {
        for row in m.samples().chunks_exact(d) {
            for k in 0..d {
                lo[k] = lo[k].min(row[k]);
                hi[k] = hi[k].max(row[k]);
            }
        }
    }
    for k in 0..d {
        let h = p.kernel_std(k).max(q.kernel_std(k));
        lo[k] -= 3.0 * h;
        hi[k] += 3.0 * h;
    }
    Grid::new(&lo, &hi, res)
}

/// Fits both sample sets (`n × d` row-major) and returns their shared grid.
pub fn grid_for(samples_x: &[f64], samples_y: &[f64], d: usize, resolution: Option<usize>) -> Result<Grid, DensityError> {
    let p = fit_kde(samples_x, d)?;
    let q = fit_kde(samples_y, d)?;
    grid_covering(&p, &q, resolution)
}
