//! Shot-by-shot simulation of the heralding experiment.
//!
//! Each shot draws a channel level, samples a phase-space point of the
//! corresponding three-mode Gaussian Wigner function, records the five
//! measured series and keeps the `(A, B)` quadratures when the tap X outcome
//! passes the threshold. Shots are split into a fixed number of logical
//! workers, each with its own ChaCha stream, and the per-worker accumulators
//! are merged in worker order, so results depend only on `(seed, workers)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{FluctuatingChannel, MixtureState};
use crate::distiller::TAP_X;
use crate::error::Error;
use crate::gaussian::{log_negativity, GaussianState};

pub const DEFAULT_SHOTS: u64 = 10_000_000;
pub const PAPER_SHOTS: u64 = 240_000_000;
pub const DEFAULT_BINS: usize = 201;
pub const DEFAULT_HISTOGRAM_RANGE: f64 = 25.0;
pub const DEFAULT_WORKERS: usize = 8;

/// Name of the sampling model, carried in result metadata.
pub const SAMPLING_MODEL: &str = "joint-wigner";
pub const RNG_NAME: &str = "chacha8-stream-per-worker";

#[derive(Debug, Error)]
pub enum McError {
    #[error(transparent)]
    Model(#[from] Error),

    #[error("no shot passed threshold {threshold_x} out of {}", pre.total_count)]
    NoShotsKept { threshold_x: f64, pre: Box<PreSelection> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_shots: u64,
    pub seed: u64,
    pub threshold_x: f64,
    pub histogram_bins: usize,
    pub histogram_range: f64,
    /// Number of logical shot partitions; fixes the random streams.
    pub workers: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_shots: DEFAULT_SHOTS,
            seed: 0,
            threshold_x: 0.0,
            histogram_bins: DEFAULT_BINS,
            histogram_range: DEFAULT_HISTOGRAM_RANGE,
            workers: DEFAULT_WORKERS,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.n_shots == 0 {
            return Err(Error::InvalidParameter {
                name: "n_shots",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        if self.workers == 0 {
            return Err(Error::InvalidParameter {
                name: "workers",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        Histogram::new(self.histogram_bins, self.histogram_range)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Histograms

/// Uniform bins over `[-range, range]`; out-of-range values land in the end
/// bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub range: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bins: usize, range: f64) -> Result<Self, Error> {
        if bins < 2 {
            return Err(Error::InvalidParameter {
                name: "histogram_bins",
                value: bins as f64,
                reason: "need at least 2 bins",
            });
        }
        if !(range.is_finite() && range > 0.0) {
            return Err(Error::InvalidParameter {
                name: "histogram_range",
                value: range,
                reason: "must be positive and finite",
            });
        }
        Ok(Self {
            range,
            counts: vec![0; bins],
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> f64 {
        2.0 * self.range / self.bins() as f64
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        let bins = self.counts.len();
        let pos = (x + self.range) * (bins as f64 / (2.0 * self.range));
        // Saturating casts put NaN and negatives in bin 0.
        let idx = (pos as usize).min(bins - 1);
        self.counts[idx] += 1;
    }

    pub fn edges(&self) -> Vec<f64> {
        let w = self.width();
        (0..=self.bins()).map(|k| -self.range + k as f64 * w).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Merges counts of an identically binned histogram.
    pub fn merge(&mut self, other: &Histogram) {
        debug_assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Mean and variance reconstructed from bin centers.
    pub fn moments(&self) -> (f64, f64) {
        let w = self.width();
        let n = self.total() as f64;
        let centers = (0..self.bins()).map(|k| -self.range + (k as f64 + 0.5) * w);
        let (s1, s2) = centers.zip(&self.counts).fold((0.0, 0.0), |(s1, s2), (c, &k)| {
            (s1 + c * k as f64, s2 + c * c * k as f64)
        });
        let mean = s1 / n;
        (mean, s2 / n - mean * mean)
    }
}

pub fn histogram<I: IntoIterator<Item = f64>>(series: I, bins: usize, range: f64) -> Result<Histogram, Error> {
    let mut h = Histogram::new(bins, range)?;
    for x in series {
        h.push(x);
    }
    Ok(h)
}

/// The five recorded series, in output order.
pub const SERIES_NAMES: [&str; 5] = ["X_tap", "X_B", "P_B", "X_A+X_B", "P_A-P_B"];

#[derive(Debug, Clone, PartialEq)]
struct SeriesHistograms([Histogram; 5]);

impl SeriesHistograms {
    fn new(bins: usize, range: f64) -> Result<Self, Error> {
        let h = Histogram::new(bins, range)?;
        Ok(Self([h.clone(), h.clone(), h.clone(), h.clone(), h]))
    }

    #[inline]
    fn push(&mut self, x: &[f64; 6]) {
        self.0[0].push(x[TAP_X]);
        self.0[1].push(x[2]);
        self.0[2].push(x[3]);
        self.0[3].push(x[0] + x[2]);
        self.0[4].push(x[1] - x[3]);
    }

    fn merge(&mut self, other: &SeriesHistograms) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.merge(b);
        }
    }

    fn into_map(self) -> BTreeMap<String, Histogram> {
        SERIES_NAMES.iter().map(|s| s.to_string()).zip(self.0).collect()
    }
}

// ---------------------------------------------------------------------------
// Streaming moments

/// Augmented dimension: four quadratures plus their ten distinct products.
const AUG: usize = 14;
const PAIRS: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 2),
    (2, 3),
    (3, 3),
];

/// One-pass mean/covariance of `(x, x_j x_k)` using the Welford update and
/// the pairwise merge rule.
///
/// The quadrature block gives the sample covariance; the full augmented
/// covariance gives the sampling variance of each covariance entry.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    count: u64,
    mean: [f64; AUG],
    m2: [[f64; AUG]; AUG],
}

impl Default for MomentAccumulator {
    fn default() -> Self {
        Self {
            count: 0,
            mean: [0.0; AUG],
            m2: [[0.0; AUG]; AUG],
        }
    }
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    #[inline]
    pub fn push(&mut self, x: &[f64; 4]) {
        let mut z = [0.0; AUG];
        z[..4].copy_from_slice(x);
        for (k, &(i, j)) in PAIRS.iter().enumerate() {
            z[4 + k] = x[i] * x[j];
        }
        self.count += 1;
        let inv_n = 1.0 / self.count as f64;
        let mut delta = [0.0; AUG];
        for i in 0..AUG {
            delta[i] = z[i] - self.mean[i];
            self.mean[i] += delta[i] * inv_n;
        }
        for i in 0..AUG {
            let di = delta[i];
            for j in i..AUG {
                self.m2[i][j] += di * (z[j] - self.mean[j]);
            }
        }
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let mut delta = [0.0; AUG];
        for i in 0..AUG {
            delta[i] = other.mean[i] - self.mean[i];
            self.mean[i] += delta[i] * nb / n;
        }
        let f = na * nb / n;
        for i in 0..AUG {
            for j in i..AUG {
                self.m2[i][j] += other.m2[i][j] + delta[i] * delta[j] * f;
            }
        }
        self.count += other.count;
    }

    fn m2_at(&self, i: usize, j: usize) -> f64 {
        if i <= j {
            self.m2[i][j]
        } else {
            self.m2[j][i]
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.mean[..4])
    }

    /// Sample covariance (divisor `n - 1`).
    pub fn cov(&self) -> DMatrix<f64> {
        let d = (self.count.max(2) - 1) as f64;
        DMatrix::from_fn(4, 4, |i, j| self.m2_at(i, j) / d)
    }

    pub fn mean_std_errors(&self) -> DVector<f64> {
        let n = self.count as f64;
        DVector::from_fn(4, |i, _| (self.m2_at(i, i) / n / n).sqrt())
    }

    /// Gradient of `z_jk = (x_j - mu_j)(x_k - mu_k)` in the augmented variables.
    fn pair_gradient(&self, pair: usize) -> [f64; AUG] {
        let (j, k) = PAIRS[pair];
        let mut g = [0.0; AUG];
        g[4 + pair] = 1.0;
        g[j] -= self.mean[k];
        g[k] -= self.mean[j];
        g
    }

    /// Asymptotic covariance of the ten covariance-entry estimators, in
    /// [`PAIRS`] order.
    pub fn cov_estimator_covariance(&self) -> DMatrix<f64> {
        let n = self.count as f64;
        let grads: Vec<[f64; AUG]> = (0..PAIRS.len()).map(|p| self.pair_gradient(p)).collect();
        DMatrix::from_fn(PAIRS.len(), PAIRS.len(), |a, b| {
            let mut s = 0.0;
            for i in 0..AUG {
                for j in 0..AUG {
                    s += grads[a][i] * self.m2_at(i, j) * grads[b][j];
                }
            }
            s / n / n
        })
    }

    pub fn cov_std_errors(&self) -> DMatrix<f64> {
        let v = self.cov_estimator_covariance();
        let mut out = DMatrix::zeros(4, 4);
        for (p, &(i, j)) in PAIRS.iter().enumerate() {
            let se = v[(p, p)].max(0.0).sqrt();
            out[(i, j)] = se;
            out[(j, i)] = se;
        }
        out
    }

    /// Logarithmic negativity of the sample covariance with a delta-method
    /// standard error.
    pub fn log_negativity_with_error(&self) -> Result<(f64, f64), Error> {
        let cov = self.cov();
        let ln = log_negativity(&cov)?;
        let scale = cov.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let h = 1e-6 * scale.max(1.0);
        let mut grad = DVector::zeros(PAIRS.len());
        for (p, &(i, j)) in PAIRS.iter().enumerate() {
            let bump = |s: f64| {
                let mut c = cov.clone();
                c[(i, j)] += s;
                if i != j {
                    c[(j, i)] += s;
                }
                log_negativity(&c)
            };
            grad[p] = (bump(h)? - bump(-h)?) / (2.0 * h);
        }
        let var = (grad.transpose() * self.cov_estimator_covariance() * &grad)[(0, 0)];
        Ok((ln, var.max(0.0).sqrt()))
    }
}

/// Plain multivariate Welford for the four quadratures, used for the
/// unheralded ensemble where per-shot cost matters most.
#[derive(Debug, Clone, Default, PartialEq)]
struct LightAccumulator {
    count: u64,
    mean: [f64; 4],
    m2: [[f64; 4]; 4],
}

impl LightAccumulator {
    #[inline]
    fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let inv_n = 1.0 / self.count as f64;
        let mut delta = [0.0; 4];
        for i in 0..4 {
            delta[i] = x[i] - self.mean[i];
            self.mean[i] += delta[i] * inv_n;
        }
        for i in 0..4 {
            for j in i..4 {
                self.m2[i][j] += delta[i] * (x[j] - self.mean[j]);
            }
        }
    }

    fn merge(&mut self, other: &LightAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let mut delta = [0.0; 4];
        for i in 0..4 {
            delta[i] = other.mean[i] - self.mean[i];
            self.mean[i] += delta[i] * nb / n;
        }
        for i in 0..4 {
            for j in i..4 {
                self.m2[i][j] += other.m2[i][j] + delta[i] * delta[j] * na * nb / n;
            }
        }
        self.count += other.count;
    }

    fn cov(&self) -> DMatrix<f64> {
        let d = (self.count.max(2) - 1) as f64;
        DMatrix::from_fn(4, 4, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            self.m2[a][b] / d
        })
    }
}

// ---------------------------------------------------------------------------
// Samplers

/// Inverse-CDF sampler over a discrete distribution.
#[derive(Debug, Clone)]
pub struct LevelTable {
    cumulative: Vec<f64>,
}

impl LevelTable {
    pub fn new(probabilities: &[f64]) -> Self {
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        // Guard against rounding leaving the top just below 1.
        if let Some(last) = cumulative.last_mut() {
            *last = f64::INFINITY;
        }
        Self { cumulative }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cumulative.partition_point(|&c| c <= u)
    }
}

pub fn sample_level<R: Rng + ?Sized>(channel: &FluctuatingChannel, rng: &mut R) -> usize {
    LevelTable::new(&channel.probabilities()).sample(rng)
}

/// Draws phase-space points of a Gaussian Wigner function through a cached
/// Cholesky factor.
#[derive(Debug, Clone)]
pub struct PhaseSpaceSampler {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl PhaseSpaceSampler {
    pub fn new(state: &GaussianState) -> Result<Self, Error> {
        let chol = state
            .cov()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidMatrix("covariance is not positive definite".into()))?
            .l();
        Ok(Self {
            mean: state.mean().clone(),
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol * z
    }
}

pub fn sample_phase_point<R: Rng + ?Sized>(state: &GaussianState, rng: &mut R) -> Result<DVector<f64>, Error> {
    Ok(PhaseSpaceSampler::new(state)?.sample(rng))
}

/// Fixed-size lower-triangular factor of a three-mode component.
#[derive(Debug, Clone, Copy)]
struct ComponentKernel {
    mean: [f64; 6],
    chol: [[f64; 6]; 6],
}

impl ComponentKernel {
    fn new(state: &GaussianState) -> Result<Self, Error> {
        let s = PhaseSpaceSampler::new(state)?;
        let mut mean = [0.0; 6];
        let mut chol = [[0.0; 6]; 6];
        for i in 0..6 {
            mean[i] = s.mean[i];
            for j in 0..=i {
                chol[i][j] = s.chol[(i, j)];
            }
        }
        Ok(Self { mean, chol })
    }

    #[inline]
    fn sample<R: Rng>(&self, rng: &mut R, out: &mut [f64; 6]) {
        let mut z = [0.0; 6];
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..6 {
            let mut acc = self.mean[i];
            for j in 0..=i {
                acc += self.chol[i][j] * z[j];
            }
            out[i] = acc;
        }
    }
}

// ---------------------------------------------------------------------------
// Engine

/// Statistics of every shot, before heralding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreSelection {
    pub total_count: u64,
    pub pooled_mean_hat: DVector<f64>,
    pub pooled_cov_hat: DMatrix<f64>,
    pub histograms: BTreeMap<String, Histogram>,
    pub per_level_total: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McMetadata {
    pub seed: u64,
    pub workers: usize,
    pub n_shots: u64,
    pub sampling_model: String,
    pub rng: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub threshold_x: f64,
    pub kept_count: u64,
    pub total_count: u64,
    pub success_probability_hat: f64,
    pub success_probability_se: f64,
    pub pooled_mean_hat: DVector<f64>,
    pub pooled_mean_se: DVector<f64>,
    pub pooled_cov_hat: DMatrix<f64>,
    pub pooled_cov_se: DMatrix<f64>,
    /// Logarithmic negativity of `pooled_cov_hat` and its standard error;
    /// `None` when fewer than two shots were kept or the estimate is not
    /// positive definite.
    pub gln_hat: Option<(f64, f64)>,
    pub pre_histograms: BTreeMap<String, Histogram>,
    pub post_histograms: BTreeMap<String, Histogram>,
    pub per_level_kept: Vec<u64>,
    pub per_level_total: Vec<u64>,
    pub metadata: McMetadata,
}

impl McResult {
    /// Fraction of kept shots from each level.
    pub fn kept_fractions(&self) -> Vec<f64> {
        let k = self.kept_count.max(1) as f64;
        self.per_level_kept.iter().map(|&c| c as f64 / k).collect()
    }
}

/// Results of one pass over the shots evaluated at several thresholds.
#[derive(Debug)]
pub struct McSweep {
    pub pre: PreSelection,
    pub results: Vec<Result<McResult, McError>>,
    pub metadata: McMetadata,
}

/// Per-worker state. Shots are binned by the interval between consecutive
/// sorted thresholds, so each kept shot updates a single accumulator and the
/// statistics for a threshold are the merge of all intervals above it.
#[derive(Debug, Clone)]
struct WorkerState {
    pre_acc: LightAccumulator,
    pre_hist: SeriesHistograms,
    per_level_total: Vec<u64>,
    intervals: Vec<Interval>,
}

#[derive(Debug, Clone)]
struct Interval {
    acc: MomentAccumulator,
    hist: SeriesHistograms,
    per_level: Vec<u64>,
}

impl Interval {
    fn merge(&mut self, other: &Interval) {
        self.acc.merge(&other.acc);
        self.hist.merge(&other.hist);
        for (a, b) in self.per_level.iter_mut().zip(&other.per_level) {
            *a += b;
        }
    }
}

impl WorkerState {
    fn new(levels: usize, intervals: usize, cfg: &McConfig) -> Result<Self, Error> {
        let hist = SeriesHistograms::new(cfg.histogram_bins, cfg.histogram_range)?;
        Ok(Self {
            pre_acc: LightAccumulator::default(),
            pre_hist: hist.clone(),
            per_level_total: vec![0; levels],
            intervals: vec![
                Interval {
                    acc: MomentAccumulator::new(),
                    hist,
                    per_level: vec![0; levels],
                };
                intervals
            ],
        })
    }

    fn merge(&mut self, other: &WorkerState) {
        self.pre_acc.merge(&other.pre_acc);
        self.pre_hist.merge(&other.pre_hist);
        for (a, b) in self.per_level_total.iter_mut().zip(&other.per_level_total) {
            *a += b;
        }
        for (a, b) in self.intervals.iter_mut().zip(&other.intervals) {
            a.merge(b);
        }
    }
}

fn worker_range(n_shots: u64, workers: usize, w: usize) -> (u64, u64) {
    let bound = |k: usize| ((n_shots as u128 * k as u128) / workers as u128) as u64;
    (bound(w), bound(w + 1))
}

fn run_worker(
    kernels: &[ComponentKernel],
    table: &LevelTable,
    sorted_thresholds: &[f64],
    cfg: &McConfig,
    w: usize,
) -> Result<WorkerState, Error> {
    let mut state = WorkerState::new(kernels.len(), sorted_thresholds.len(), cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(w as u64);
    let (start, end) = worker_range(cfg.n_shots, cfg.workers, w);
    let mut x = [0.0; 6];
    for _ in start..end {
        let level = table.sample(&mut rng);
        kernels[level].sample(&mut rng, &mut x);
        state.per_level_total[level] += 1;
        state.pre_acc.push(&x[..4]);
        state.pre_hist.push(&x);
        let passed = sorted_thresholds.partition_point(|&t| t <= x[TAP_X]);
        if passed > 0 {
            let interval = &mut state.intervals[passed - 1];
            interval.acc.push(&[x[0], x[1], x[2], x[3]]);
            interval.hist.push(&x);
            interval.per_level[level] += 1;
        }
    }
    Ok(state)
}

/// One pass of `config.n_shots` shots evaluated at every threshold; results
/// are returned in the order of `thresholds`. `config.threshold_x` is ignored.
pub fn run_mc_sweep(mixture3: &MixtureState, config: &McConfig, thresholds: &[f64]) -> Result<McSweep, Error> {
    config.validate()?;
    if mixture3.n_modes() != 3 {
        return Err(Error::Dimension {
            expected: 3,
            got: mixture3.n_modes(),
        });
    }
    if let Some(t) = thresholds.iter().find(|t| t.is_nan()) {
        return Err(Error::InvalidParameter {
            name: "threshold_x",
            value: *t,
            reason: "must not be NaN",
        });
    }
    let kernels = mixture3
        .components()
        .iter()
        .map(|(_, st)| ComponentKernel::new(st))
        .collect::<Result<Vec<_>, _>>()?;
    let table = LevelTable::new(&mixture3.weights());

    let mut order: Vec<usize> = (0..thresholds.len()).collect();
    order.sort_by(|&a, &b| thresholds[a].partial_cmp(&thresholds[b]).expect("no NaN"));
    let sorted: Vec<f64> = order.iter().map(|&i| thresholds[i]).collect();

    let states = (0..config.workers)
        .into_par_iter()
        .map(|w| run_worker(&kernels, &table, &sorted, config, w))
        .collect::<Result<Vec<_>, _>>()?;
    let mut states = states.into_iter();
    let mut total = states.next().expect("at least one worker");
    for s in states {
        total.merge(&s);
    }

    let metadata = McMetadata {
        seed: config.seed,
        workers: config.workers,
        n_shots: config.n_shots,
        sampling_model: SAMPLING_MODEL.into(),
        rng: RNG_NAME.into(),
    };
    let pre = PreSelection {
        total_count: total.pre_acc.count,
        pooled_mean_hat: DVector::from_row_slice(&total.pre_acc.mean),
        pooled_cov_hat: total.pre_acc.cov(),
        histograms: total.pre_hist.clone().into_map(),
        per_level_total: total.per_level_total.clone(),
    };

    // Suffix merge: threshold k (sorted) keeps intervals k, k+1, ...
    let mut cumulative: Vec<Interval> = Vec::with_capacity(sorted.len());
    let mut running: Option<Interval> = None;
    for interval in total.intervals.iter().rev() {
        let next = match running.take() {
            None => interval.clone(),
            Some(mut r) => {
                r.merge(interval);
                r
            }
        };
        cumulative.push(next.clone());
        running = Some(next);
    }
    cumulative.reverse();

    let mut by_sorted: Vec<Option<Result<McResult, McError>>> = Vec::new();
    by_sorted.resize_with(sorted.len(), || None);
    for (k, interval) in cumulative.into_iter().enumerate() {
        by_sorted[k] = Some(finish(sorted[k], interval, &pre, &metadata));
    }
    let mut results: Vec<Option<Result<McResult, McError>>> = Vec::new();
    results.resize_with(thresholds.len(), || None);
    for (k, &orig) in order.iter().enumerate() {
        results[orig] = by_sorted[k].take();
    }
    Ok(McSweep {
        results: results.into_iter().map(|r| r.expect("filled")).collect(),
        pre,
        metadata,
    })
}

fn finish(
    threshold_x: f64,
    interval: Interval,
    pre: &PreSelection,
    metadata: &McMetadata,
) -> Result<McResult, McError> {
    let kept = interval.acc.count();
    if kept == 0 {
        return Err(McError::NoShotsKept {
            threshold_x,
            pre: Box::new(pre.clone()),
        });
    }
    let total = pre.total_count;
    let p = kept as f64 / total as f64;
    let gln_hat = if kept >= 2 {
        interval.acc.log_negativity_with_error().ok()
    } else {
        None
    };
    Ok(McResult {
        threshold_x,
        kept_count: kept,
        total_count: total,
        success_probability_hat: p,
        success_probability_se: (p * (1.0 - p) / total as f64).sqrt(),
        pooled_mean_hat: interval.acc.mean(),
        pooled_mean_se: interval.acc.mean_std_errors(),
        pooled_cov_hat: interval.acc.cov(),
        pooled_cov_se: interval.acc.cov_std_errors(),
        gln_hat,
        pre_histograms: pre.histograms.clone(),
        post_histograms: interval.hist.into_map(),
        per_level_kept: interval.per_level,
        per_level_total: pre.per_level_total.clone(),
        metadata: metadata.clone(),
    })
}

/// Single-threshold run at `config.threshold_x`.
pub fn run_mc(mixture3: &MixtureState, config: &McConfig) -> Result<McResult, McError> {
    let sweep = run_mc_sweep(mixture3, config, &[config.threshold_x])?;
    sweep.results.into_iter().next().expect("one threshold")
}
