//! Synthetic attribute-score populations and the controlled experiments that
//! check the divergences respond the way they should.
//!
//! Scores are multivariate Gaussians with chosen marginals and correlation.
//! Every experiment draws its populations from fixed ChaCha8 streams, so
//! results depend only on the inputs, never on thread scheduling.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::{nway_divergence, pad, rank_worst, sad, DivergenceConfig, DivergenceError};
use crate::linalg::cholesky_psd;
use crate::par;
use crate::scoring::{ScoreError, ScoreMatrix, ScoreMode};
use crate::stats::{linear_r_squared, mean, sample_std, spearman, strictly_increasing};

const PSD_TOL: f64 = 1e-10;

/// Mean of the planted attribute in the skip experiment, in background
/// standard deviations.
pub const PLANTED_SHIFT: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("spec has no attributes")]
    NoAttributes,
    #[error("spec needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{what} has length {found}, expected {expected}")]
    BadShape { what: &'static str, expected: usize, found: usize },
    #[error("correlation matrix is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("correlation matrix diagonal entry {0} is not 1")]
    BadDiagonal(usize),
    #[error("correlation matrix is not positive semi-definite")]
    NotPsd,
    #[error("standard deviation of attribute {0} must be positive and finite")]
    BadStd(usize),
    #[error("mean of attribute {0} is not finite")]
    BadMean(usize),
    #[error("fractions must be sorted, within [0, 1] and start at 0")]
    BadFractions,
    #[error("fractions must include 0 and 1")]
    FractionsMissingEnds,
    #[error("removal count {removal} exceeds the {planted} planted rows")]
    BadRemoval { removal: usize, planted: usize },
    #[error("planted count {planted} exceeds the {n} rows")]
    BadPlanted { planted: usize, n: usize },
    #[error("correlation magnitude must be in [0, 0.95], got {0}")]
    BadRho(f64),
    #[error("base and shifted specs must share attributes and sample count")]
    MismatchedSpecs,
    #[error("experiment needs at least one {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
}

/// A Gaussian score population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub attributes: Vec<String>,
    pub n: usize,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Row-major `m × m`, unit diagonal.
    pub correlation: Vec<f64>,
    pub seed: u64,
}

impl SynthSpec {
    /// `m` independent standard normals named `a0, a1, …`.
    pub fn standard(m: usize, n: usize, seed: u64) -> Self {
        let mut correlation = vec![0.0; m * m];
        for i in 0..m {
            correlation[i * m + i] = 1.0;
        }
        Self {
            attributes: (0..m).map(|j| format!("a{j}")).collect(),
            n,
            means: vec![0.0; m],
            stds: vec![1.0; m],
            correlation,
            seed,
        }
    }

    pub fn m(&self) -> usize {
        self.attributes.len()
    }

    pub fn with_attributes(mut self, names: Vec<String>) -> Self {
        self.attributes = names;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_mean(mut self, j: usize, mean: f64) -> Self {
        self.means[j] = mean;
        self
    }

    pub fn with_std(mut self, j: usize, std: f64) -> Self {
        self.stds[j] = std;
        self
    }

    /// Sets the `(i, j)` and `(j, i)` correlation.
    pub fn with_correlation(mut self, i: usize, j: usize, rho: f64) -> Self {
        let m = self.m();
        self.correlation[i * m + j] = rho;
        self.correlation[j * m + i] = rho;
        self
    }

    /// Checks the invariants and returns the Cholesky factor of the
    /// correlation matrix.
    pub fn validate(&self) -> Result<Vec<f64>, SynthError> {
        let m = self.m();
        if m == 0 {
            return Err(SynthError::NoAttributes);
        }
        if self.n < 2 {
            return Err(SynthError::TooFewSamples(self.n));
        }
        for (what, len, expected) in [
            ("means", self.means.len(), m),
            ("stds", self.stds.len(), m),
            ("correlation", self.correlation.len(), m * m),
        ] {
            if len != expected {
                return Err(SynthError::BadShape { what, expected, found: len });
            }
        }
        if let Some(j) = self.means.iter().position(|v| !v.is_finite()) {
            return Err(SynthError::BadMean(j));
        }
        if let Some(j) = self.stds.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SynthError::BadStd(j));
        }
        for i in 0..m {
            if self.correlation[i * m + i] != 1.0 {
                return Err(SynthError::BadDiagonal(i));
            }
            for j in 0..i {
                let (a, b) = (self.correlation[i * m + j], self.correlation[j * m + i]);
                if a != b || !a.is_finite() {
                    return Err(SynthError::NotSymmetric { i, j });
                }
            }
        }
        cholesky_psd(&self.correlation, m, PSD_TOL).ok_or(SynthError::NotPsd)
    }
}

/// Draws `spec.n` rows from stream 0 of `spec.seed`.
pub fn gen_scores(spec: &SynthSpec) -> Result<ScoreMatrix, SynthError> {
    gen_scores_stream(spec, 0)
}

/// Draws `spec.n` rows from the given ChaCha8 stream of `spec.seed`.
/// Distinct streams are independent draws of the same population.
pub fn gen_scores_stream(spec: &SynthSpec, stream: u64) -> Result<ScoreMatrix, SynthError> {
    let l = spec.validate()?;
    let m = spec.m();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let mut z = vec![0.0; m];
    let mut values = Vec::with_capacity(spec.n * m);
    for _ in 0..spec.n {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for i in 0..m {
            let mut c = 0.0;
            for k in 0..=i {
                c += l[i * m + k] * z[k];
            }
            values.push(spec.means[i] + spec.stds[i] * c);
        }
    }
    Ok(ScoreMatrix::new(ScoreMode::Synthetic, spec.attributes.clone(), values, None)?)
}

/// Independent seed for the `k`-th replicate of `base` (SplitMix64 step).
pub fn derive_seed(base: u64, k: u64) -> u64 {
    let mut z = base ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_fractions(fractions: &[f64]) -> Result<(), SynthError> {
    if fractions.is_empty() {
        return Err(SynthError::Empty("fraction"));
    }
    let in_range = fractions.iter().all(|f| (0.0..=1.0).contains(f));
    let sorted = fractions.windows(2).all(|w| w[0] <= w[1]);
    if !in_range || !sorted || fractions[0] != 0.0 {
        return Err(SynthError::BadFractions);
    }
    Ok(())
}

fn row_count(fraction: f64, n: usize) -> usize {
    libm::floor(fraction * n as f64) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionPoint {
    pub alpha: f64,
    pub injected: usize,
    pub sad: f64,
    pub pad: f64,
}

/// Training set `X ~ base`; for each α the generated set is an independent
/// `base` draw whose first `⌊α·n⌋` rows are replaced by rows of `shifted`.
///
/// All α share the same base and shifted draws, so consecutive points differ
/// only by the injected rows.
pub fn injection_experiment(
    base: &SynthSpec,
    shifted: &SynthSpec,
    fractions: &[f64],
    config: &DivergenceConfig,
) -> Result<Vec<InjectionPoint>, SynthError> {
    if base.attributes != shifted.attributes || base.n != shifted.n {
        return Err(SynthError::MismatchedSpecs);
    }
    check_fractions(fractions)?;
    let x = gen_scores_stream(base, 0)?;
    let y0 = gen_scores_stream(base, 1)?;
    let q = gen_scores_stream(shifted, 2)?;
    par::map(fractions, |&alpha| {
        let injected = row_count(alpha, base.n);
        let y = y0.replace_leading_rows(&q, injected);
        Ok(InjectionPoint { alpha, injected, sad: sad(&x, &y, config)?.total, pad: pad(&x, &y, config)?.total })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discernment {
    pub sad_ab: f64,
    pub sad_ac: f64,
    pub pad_ab: f64,
    pub pad_ac: f64,
    /// Highest-KL pair between A and C.
    pub worst_pair: Vec<String>,
    pub worst_pair_kl: f64,
    pub mean_pair_kl: f64,
    pub worst_pair_ratio: f64,
}

/// Reorders `values` so each entry takes the value of mirrored rank: the
/// smallest becomes the largest and so on. The multiset is unchanged.
pub fn reflect_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = values[order[n - 1 - rank]];
    }
    out
}

/// A and B are independent draws of `m` standard normals where attributes
/// 0 and 1 correlate at `+rho`. C is B with attribute 1 rank-reflected,
/// which flips that correlation to about `-rho` while keeping every
/// marginal exactly as in B.
pub fn discernment_experiment(
    n: usize,
    m: usize,
    rho: f64,
    seed: u64,
    config: &DivergenceConfig,
) -> Result<Discernment, SynthError> {
    if !(0.0..=0.95).contains(&rho) {
        return Err(SynthError::BadRho(rho));
    }
    if m < 2 {
        return Err(DivergenceError::TooFewAttributes { needed: 2, found: m }.into());
    }
    let spec = SynthSpec::standard(m, n, seed).with_correlation(0, 1, rho);
    let a = gen_scores_stream(&spec, 0)?;
    let b = gen_scores_stream(&spec, 1)?;
    let c = b.with_column(1, &reflect_ranks(&b.column(1)));
    let pad_ac = pad(&a, &c, config)?;
    let worst = rank_worst(&pad_ac, 1).remove(0);
    let mean_pair_kl = pad_ac.total;
    Ok(Discernment {
        sad_ab: sad(&a, &b, config)?.total,
        sad_ac: sad(&a, &c, config)?.total,
        pad_ab: pad(&a, &b, config)?.total,
        pad_ac: pad_ac.total,
        worst_pair: worst.attributes,
        worst_pair_kl: worst.kl,
        mean_pair_kl,
        worst_pair_ratio: worst.kl / mean_pair_kl,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipPoint {
    pub removed: usize,
    pub sad: f64,
    pub pad: f64,
    pub worst_attribute: String,
    pub worst_kl: f64,
}

/// Names of the skip experiment's attributes; the first is planted.
pub fn skip_attributes() -> Vec<String> {
    ["planted", "a1", "a2", "a3"].iter().map(|s| String::from(*s)).collect()
}

/// Both sets are standard-normal background with `planted_count` rows whose
/// `planted` attribute sits at [`PLANTED_SHIFT`]. Each generated set then
/// swaps its first `k` planted rows for fresh background rows, nested so a
/// larger `k` extends a smaller one.
pub fn skip_experiment(
    n: usize,
    planted_count: usize,
    removals: &[usize],
    seed: u64,
    config: &DivergenceConfig,
) -> Result<Vec<SkipPoint>, SynthError> {
    if removals.is_empty() {
        return Err(SynthError::Empty("removal count"));
    }
    if planted_count > n {
        return Err(SynthError::BadPlanted { planted: planted_count, n });
    }
    if let Some(&removal) = removals.iter().find(|&&k| k > planted_count) {
        return Err(SynthError::BadRemoval { removal, planted: planted_count });
    }
    let background = SynthSpec::standard(4, n, seed).with_attributes(skip_attributes());
    let planted = background.clone().with_mean(0, PLANTED_SHIFT);
    let x = gen_scores_stream(&background, 0)?.replace_leading_rows(&gen_scores_stream(&planted, 1)?, planted_count);
    let y0 = gen_scores_stream(&background, 2)?.replace_leading_rows(&gen_scores_stream(&planted, 3)?, planted_count);
    let fresh = gen_scores_stream(&background, 4)?;
    par::map(removals, |&removed| {
        let y = y0.replace_leading_rows(&fresh, removed);
        let s = sad(&x, &y, config)?;
        let worst = rank_worst(&s, 1).remove(0);
        Ok(SkipPoint {
            removed,
            sad: s.total,
            pad: pad(&x, &y, config)?.total,
            worst_attribute: worst.attributes[0].clone(),
            worst_kl: worst.kl,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub n: usize,
    pub seeds: usize,
    pub sad_mean: f64,
    pub sad_std: f64,
    pub pad_mean: f64,
    pub pad_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nway_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nway_std: Option<f64>,
}

impl StabilityRow {
    pub fn relative_std(&self) -> [Option<f64>; 3] {
        [
            Some(self.sad_std / self.sad_mean),
            Some(self.pad_std / self.pad_mean),
            self.nway_mean.zip(self.nway_std).map(|(m, s)| s / m),
        ]
    }
}

/// Divergence between `train` and `generator` draws, replicated over
/// `seeds`, at each sample count. For one seed the draws at every `n` are
/// prefixes of the same population, so larger `n` only adds rows.
pub fn stability_experiment(
    train: &SynthSpec,
    generator: &SynthSpec,
    sample_counts: &[usize],
    seeds: &[u64],
    nway: Option<usize>,
    config: &DivergenceConfig,
) -> Result<Vec<StabilityRow>, SynthError> {
    if train.attributes != generator.attributes {
        return Err(SynthError::MismatchedSpecs);
    }
    let max_n = *sample_counts.iter().max().ok_or(SynthError::Empty("sample count"))?;
    if seeds.is_empty() {
        return Err(SynthError::Empty("seed"));
    }
    if let Some(&n) = sample_counts.iter().find(|&&n| n < 2) {
        return Err(SynthError::TooFewSamples(n));
    }
    let draws = par::map(seeds, |&s| -> Result<_, SynthError> {
        let x = gen_scores_stream(&train.clone().with_n(max_n).with_seed(derive_seed(train.seed, s)), 0)?;
        let y = gen_scores_stream(&generator.clone().with_n(max_n).with_seed(derive_seed(generator.seed, s)), 1)?;
        Ok((x, y))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let cells: Vec<(usize, usize)> =
        sample_counts.iter().flat_map(|&n| (0..seeds.len()).map(move |s| (n, s))).collect();
    let totals = par::map(&cells, |&(n, s)| -> Result<[f64; 3], SynthError> {
        let prefix: Vec<usize> = (0..n).collect();
        let (x, y) = (draws[s].0.select_rows(&prefix), draws[s].1.select_rows(&prefix));
        let k = match nway {
            Some(k) => nway_divergence(&x, &y, k, config)?.total,
            None => f64::NAN,
        };
        Ok([sad(&x, &y, config)?.total, pad(&x, &y, config)?.total, k])
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(sample_counts
        .iter()
        .zip(totals.chunks(seeds.len()))
        .map(|(&n, chunk)| {
            let col = |i: usize| chunk.iter().map(|t| t[i]).collect::<Vec<f64>>();
            let (s, p, k) = (col(0), col(1), col(2));
            StabilityRow {
                n,
                seeds: seeds.len(),
                sad_mean: mean(&s),
                sad_std: sample_std(&s),
                pad_mean: mean(&p),
                pad_std: sample_std(&p),
                nway_mean: nway.map(|_| mean(&k)),
                nway_std: nway.map(|_| sample_std(&k)),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitPoint {
    pub fraction_replaced: f64,
    pub sad: f64,
    pub pad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overfit {
    pub replicates: usize,
    /// Divergences averaged over replicates.
    pub points: Vec<OverfitPoint>,
    /// Linear-fit R² of each averaged divergence against the fraction not
    /// replaced.
    pub r2_sad: f64,
    pub r2_pad: f64,
}

/// Set A is fixed; set B is an independent draw of the same population
/// whose first `⌊f·n⌋` rows are overwritten by A's for each fraction `f`.
///
/// Between same-population draws the divergence is sampling noise whose
/// expectation falls linearly as rows are shared, so the curve is averaged
/// over `replicates` independent (A, B) pairs seeded from `spec.seed`.
pub fn overfit_experiment(
    spec: &SynthSpec,
    fractions: &[f64],
    replicates: usize,
    config: &DivergenceConfig,
) -> Result<Overfit, SynthError> {
    check_fractions(fractions)?;
    if fractions[fractions.len() - 1] != 1.0 {
        return Err(SynthError::FractionsMissingEnds);
    }
    if replicates == 0 {
        return Err(SynthError::Empty("replicate"));
    }
    let pairs = par::map_range(replicates, |r| -> Result<_, SynthError> {
        let seeded = spec.clone().with_seed(derive_seed(spec.seed, r as u64));
        Ok((gen_scores_stream(&seeded, 0)?, gen_scores_stream(&seeded, 1)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let cells: Vec<(usize, f64)> = fractions.iter().flat_map(|&f| (0..replicates).map(move |r| (r, f))).collect();
    let totals = par::map(&cells, |&(r, f)| -> Result<(f64, f64), SynthError> {
        let (a, b) = &pairs[r];
        let bf = b.replace_leading_rows(a, row_count(f, spec.n));
        Ok((sad(a, &bf, config)?.total, pad(a, &bf, config)?.total))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let points: Vec<OverfitPoint> = fractions
        .iter()
        .zip(totals.chunks(replicates))
        .map(|(&f, chunk)| OverfitPoint {
            fraction_replaced: f,
            sad: chunk.iter().map(|t| t.0).sum::<f64>() / replicates as f64,
            pad: chunk.iter().map(|t| t.1).sum::<f64>() / replicates as f64,
        })
        .collect();
    let kept: Vec<f64> = points.iter().map(|p| 1.0 - p.fraction_replaced).collect();
    let s: Vec<f64> = points.iter().map(|p| p.sad).collect();
    let p: Vec<f64> = points.iter().map(|p| p.pad).collect();
    Ok(Overfit { replicates, r2_sad: linear_r_squared(&kept, &s), r2_pad: linear_r_squared(&kept, &p), points })
}

/// SaD and PaD totals between independent same-population draws, one per
/// seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullBand {
    pub sad: Vec<f64>,
    pub pad: Vec<f64>,
}

impl NullBand {
    pub fn sad_max(&self) -> f64 {
        self.sad.iter().copied().fold(0.0, f64::max)
    }

    pub fn pad_max(&self) -> f64 {
        self.pad.iter().copied().fold(0.0, f64::max)
    }
}

pub fn null_band(spec: &SynthSpec, seeds: &[u64], config: &DivergenceConfig) -> Result<NullBand, SynthError> {
    let totals = par::map(seeds, |&s| -> Result<(f64, f64), SynthError> {
        let seeded = spec.clone().with_seed(derive_seed(spec.seed, s));
        let x = gen_scores_stream(&seeded, 0)?;
        let y = gen_scores_stream(&seeded, 1)?;
        Ok((sad(&x, &y, config)?.total, pad(&x, &y, config)?.total))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(NullBand { sad: totals.iter().map(|t| t.0).collect(), pad: totals.iter().map(|t| t.1).collect() })
}

/// Named validation suites runnable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Injection,
    Discernment,
    Skip,
    Stability,
    Overfit,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Injection, Suite::Discernment, Suite::Skip, Suite::Stability, Suite::Overfit];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Injection => "injection",
            Suite::Discernment => "discernment",
            Suite::Skip => "skip",
            Suite::Stability => "stability",
            Suite::Overfit => "overfit",
        }
    }

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|suite| suite.name() == s)
    }
}

/// Sizes and seeds for the suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    pub injection_n: usize,
    pub injection_shift: f64,
    pub discernment_n: usize,
    pub discernment_m: usize,
    pub discernment_rho: f64,
    pub skip_n: usize,
    pub skip_planted: usize,
    pub skip_removals: Vec<usize>,
    pub overfit_n: usize,
    pub overfit_steps: usize,
    pub overfit_replicates: usize,
    pub stability_counts: Vec<usize>,
    pub stability_seeds: Vec<u64>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            injection_n: 30_000,
            injection_shift: 1.0,
            discernment_n: 50_000,
            discernment_m: 6,
            discernment_rho: 0.9,
            skip_n: 30_000,
            skip_planted: 2_000,
            skip_removals: vec![0, 500, 1_000, 1_500, 2_000],
            overfit_n: 30_000,
            overfit_steps: 10,
            overfit_replicates: 24,
            stability_counts: vec![10_000, 30_000, 50_000],
            stability_seeds: vec![0, 1, 2, 3],
        }
    }
}

/// Fractions `0, 0.1, …, 0.5` for the injection suite.
pub fn injection_fractions() -> Vec<f64> {
    (0..=5).map(|i| i as f64 / 10.0).collect()
}

/// The training population of the stability suite.
pub fn stability_train(n: usize, seed: u64) -> SynthSpec {
    SynthSpec::standard(3, n, seed).with_correlation(0, 1, 0.3)
}

/// The generator population of the stability suite: shifted means, changed
/// correlations and every marginal widened. Its covariance dominates the
/// training covariance, which keeps `log p/q` bounded in the training
/// tails and the KL estimate's variance finite.
pub fn stability_generator(n: usize, seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::standard(3, n, seed)
        .with_seed(derive_seed(seed, 1 << 32))
        .with_mean(0, 0.4)
        .with_mean(2, -0.3)
        .with_correlation(0, 1, 0.1)
        .with_correlation(1, 2, 0.2);
    for j in 0..3 {
        spec = spec.with_std(j, 1.4);
    }
    spec
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub value: f64,
    /// One of `<`, `>`, `>=`, `==`.
    pub op: String,
    pub threshold: f64,
    pub passed: bool,
}

impl PropertyCheck {
    fn new(name: &str, value: f64, op: &str, threshold: f64) -> Self {
        let passed = match op {
            "<" => value < threshold,
            ">" => value > threshold,
            ">=" => value >= threshold,
            _ => value == threshold,
        };
        Self { name: name.into(), value, op: op.into(), threshold, passed }
    }

    fn flag(name: &str, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, "==", 1.0)
    }
}

/// One `(series, x, y)` row of plot data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub series: String,
    pub x: f64,
    pub y: f64,
}

impl PlotPoint {
    pub fn new(series: &str, x: f64, y: f64) -> Self {
        Self { series: series.into(), x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<PropertyCheck>,
    pub series: Vec<PlotPoint>,
}

impl SuiteOutcome {
    fn new(suite: Suite, checks: Vec<PropertyCheck>, series: Vec<PlotPoint>) -> Self {
        Self { suite, passed: checks.iter().all(|c| c.passed), checks, series }
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub fn run_suite(suite: Suite, opts: &SuiteOptions, config: &DivergenceConfig) -> Result<SuiteOutcome, SynthError> {
    match suite {
        Suite::Injection => run_injection(opts, config),
        Suite::Discernment => run_discernment(opts, config),
        Suite::Skip => run_skip(opts, config),
        Suite::Stability => run_stability(opts, config),
        Suite::Overfit => run_overfit(opts, config),
    }
}

fn run_injection(opts: &SuiteOptions, config: &DivergenceConfig) -> Result<SuiteOutcome, SynthError> {
    let base = SynthSpec::standard(3, opts.injection_n, opts.seed);
    let shifted = base.clone().with_mean(0, opts.injection_shift);
    let fractions = injection_fractions();
    let curve = injection_experiment(&base, &shifted, &fractions, config)?;
    let control = injection_experiment(&base, &base, &fractions, config)?;
    let xs: Vec<f64> = curve.iter().map(|p| p.alpha).collect();
    let get = |c: &[InjectionPoint], f: fn(&InjectionPoint) -> f64| c.iter().map(f).collect::<Vec<f64>>();
    let (s, p) = (get(&curve, |q| q.sad), get(&curve, |q| q.pad));
    let (cs, cp) = (get(&control, |q| q.sad), get(&control, |q| q.pad));
    let spread = |v: &[f64]| v.iter().copied().fold(f64::MIN, f64::max) - v.iter().copied().fold(f64::MAX, f64::min);
    let checks = vec![
        PropertyCheck::new("sad_null_level", s[0], "<", 0.01),
        PropertyCheck::flag("sad_strictly_increasing", strictly_increasing(&s)),
        PropertyCheck::flag("pad_strictly_increasing", strictly_increasing(&p)),
        PropertyCheck::new("sad_spearman", spearman(&xs, &s), "==", 1.0),
        PropertyCheck::new("pad_spearman", spearman(&xs, &p), "==", 1.0),
        PropertyCheck::new("control_sad_spread", spread(&cs), "<", 2.0 * cs[0]),
        PropertyCheck::new("control_pad_spread", spread(&cp), "<", 2.0 * cp[0]),
    ];
    let mut series = Vec::new();
    for (name, ys) in [("sad", &s), ("pad", &p), ("control_sad", &cs), ("control_pad", &cp)] {
        series.extend(xs.iter().zip(ys.iter()).map(|(&x, &y)| PlotPoint::new(name, x, y)));
    }
    Ok(SuiteOutcome::new(Suite::Injection, checks, series))
}

fn run_discernment(opts: &SuiteOptions, config: &DivergenceConfig) -> Result<SuiteOutcome, SynthError> {
    let d = discernment_experiment(opts.discernment_n, opts.discernment_m, opts.discernment_rho, opts.seed, config)?;
    let checks = vec![
        PropertyCheck::new("worst_pair_ratio", d.worst_pair_ratio, ">", 10.0),
        PropertyCheck::new("sad_ratio", d.sad_ac / d.sad_ab, "<", 2.0),
        PropertyCheck::new("pad_ratio", d.pad_ac / d.pad_ab, ">", 1.5),
        PropertyCheck::flag("worst_pair_is_corrupted", d.worst_pair == ["a0", "a1"]),
    ];
    let series = vec![
        PlotPoint::new("sad", 0.0, d.sad_ab),
        PlotPoint::new("sad", 1.0, d.sad_ac),
        PlotPoint::new("pad", 0.0, d.pad_ab),
        PlotPoint::new("pad", 1.0, d.pad_ac),
    ];
    Ok(SuiteOutcome::new(Suite::Discernment, checks, series))
}

fn run_skip(opts: &SuiteOptions, config: &DivergenceConfig) -> Result<SuiteOutcome, SynthError> {
    let curve = skip_experiment(opts.skip_n, opts.skip_planted, &opts.skip_removals, opts.seed, config)?;
    let s: Vec<f64> = curve.iter().map(|p| p.sad).collect();
    let last = &curve[curve.len() - 1];
    let checks = vec![
        PropertyCheck::new("sad_without_removal", s[0], "<", 0.01),
        PropertyCheck::flag("sad_strictly_increasing", strictly_increasing(&s)),
        PropertyCheck::flag("planted_is_worst_at_full_removal", last.worst_attribute == "planted"),
    ];
    let mut series = Vec::new();
    for p in &curve {
        series.push(PlotPoint::new("sad", p.removed as f64, p.sad));
    }
    for p in &curve {
        series.push(PlotPoint::new("pad", p.removed as f64, p.pad));
    }
    Ok(SuiteOutcome::new(Suite::Skip, checks, series))
}

fn run_stability(opts: &SuiteOptions, config: &DivergenceConfig) -> Result<SuiteOutcome, SynthError> {
    let max_n = opts.stability_counts.iter().copied().max().unwrap_or(0);
    let train = stability_train(max_n, opts.seed);
    let generator = stability_generator(max_n, opts.seed);
    let rows = stability_experiment(&train, &generator, &opts.stability_counts, &opts.stability_seeds, Some(3), config)?;
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    let rel = last.relative_std();
    let checks = vec![
        PropertyCheck::new("sad_std_decrease", last.sad_std / first.sad_std, "<", 1.0),
        PropertyCheck::new("pad_std_decrease", last.pad_std / first.pad_std, "<", 1.0),
        PropertyCheck::new("nway3_std_decrease", last.nway_std.unwrap() / first.nway_std.unwrap(), "<", 1.0),
        PropertyCheck::new("sad_relative_std", rel[0].unwrap(), "<", 0.05),
        PropertyCheck::new("pad_relative_std", rel[1].unwrap(), "<", 0.05),
        PropertyCheck::new("nway3_relative_std", rel[2].unwrap(), "<", 0.05),
    ];
    let mut series = Vec::new();
    for r in &rows {
        series.push(PlotPoint::new("sad_std", r.n as f64, r.sad_std));
        series.push(PlotPoint::new("pad_std", r.n as f64, r.pad_std));
        series.push(PlotPoint::new("nway3_std", r.n as f64, r.nway_std.unwrap()));
    }
    Ok(SuiteOutcome::new(Suite::Stability, checks, series))
}

/// `0, 1/steps, …, 1`.
pub fn overfit_fractions(steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

fn run_overfit(opts: &SuiteOptions, config: &DivergenceConfig) -> Result<SuiteOutcome, SynthError> {
    let spec = SynthSpec::standard(2, opts.overfit_n, opts.seed).with_correlation(0, 1, 0.5);
    let result = overfit_experiment(&spec, &overfit_fractions(opts.overfit_steps), opts.overfit_replicates, config)?;
    let at = |f: f64| result.points.iter().find(|p| p.fraction_replaced == f).map(|p| p.sad);
    let copy = result.points[result.points.len() - 1].sad;
    let mut checks = vec![
        PropertyCheck::new("r2_sad", result.r2_sad, ">=", 0.99),
        PropertyCheck::new("r2_pad", result.r2_pad, ">=", 0.99),
        PropertyCheck::new("sad_full_copy", copy, "<", 1e-10),
    ];
    if let (Some(s0), Some(s5)) = (at(0.0), at(0.5)) {
        checks.push(PropertyCheck::flag("sad_decreases_to_half", s0 > s5));
    }
    let mut series = Vec::new();
    for p in &result.points {
        series.push(PlotPoint::new("sad", p.fraction_replaced, p.sad));
    }
    for p in &result.points {
        series.push(PlotPoint::new("pad", p.fraction_replaced, p.pad));
    }
    Ok(SuiteOutcome::new(Suite::Overfit, checks, series))
}
