//! Analytic distillation engine.
//!
//! A weak tap on beam B feeds a homodyne X measurement; the remaining
//! two-mode state is kept when the outcome is at least the threshold. Each
//! component of the mixture is Gaussian, so its post-selected moments follow
//! from the moments of a truncated normal, and the pooled moments are exact.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{MixtureState, CHANNEL_MODE};
use crate::error::{Error, Result};
use crate::gaussian::{log_negativity, GaussianState};
use crate::tail::{hazard, log_gaussian_tail};

pub const DEFAULT_TAP_REFLECTIVITY: f64 = 0.07;

/// Mode index of the tap beam in the three-mode mixture `(A, B, Tap)`.
pub const TAP_MODE: usize = 2;
/// Index of `X_Tap` in the interleaved quadrature vector.
pub const TAP_X: usize = 2 * TAP_MODE;

/// Success probabilities below this are reported as degenerate selection.
pub const SUCCESS_FLOOR: f64 = 1e-300;

/// Tap-X means larger than this are rejected by [`herald`].
const TAP_MEAN_TOL: f64 = 1e-12;

/// Posterior weights below this are ignored by the component-distance metric.
const METRIC_WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapConfig {
    pub reflectivity: f64,
    pub threshold_x: f64,
}

impl TapConfig {
    pub fn new(reflectivity: f64, threshold_x: f64) -> Result<Self> {
        if !(reflectivity > 0.0 && reflectivity < 1.0) {
            return Err(Error::InvalidParameter {
                name: "reflectivity",
                value: reflectivity,
                reason: "must lie in (0, 1)",
            });
        }
        if threshold_x.is_nan() {
            return Err(Error::InvalidParameter {
                name: "threshold_x",
                value: threshold_x,
                reason: "must not be NaN",
            });
        }
        Ok(Self {
            reflectivity,
            threshold_x,
        })
    }

    pub fn transmittance(&self) -> f64 {
        1.0 - self.reflectivity
    }
}

impl Default for TapConfig {
    fn default() -> Self {
        Self {
            reflectivity: DEFAULT_TAP_REFLECTIVITY,
            threshold_x: 0.0,
        }
    }
}

/// Appends a vacuum tap mode to every component and mixes it with beam B on
/// a beam splitter of transmittance `1 - reflectivity`.
pub fn attach_tap(mixture: &MixtureState, tap: &TapConfig) -> Result<MixtureState> {
    if mixture.n_modes() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: mixture.n_modes(),
        });
    }
    let tap = TapConfig::new(tap.reflectivity, tap.threshold_x)?;
    let vacuum = GaussianState::vacuum(1);
    mixture.try_map(|st| {
        st.tensor(&vacuum)
            .apply_beamsplitter(TAP_MODE, CHANNEL_MODE, tap.transmittance())
    })
}

/// The post-selected two-mode ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledEnsemble {
    pub threshold_x: f64,
    pub success_probability: f64,
    pub log_success_probability: f64,
    pub prior_weights: Vec<f64>,
    pub posterior_weights: Vec<f64>,
    pub per_component_pass: Vec<f64>,
    /// `ln q_i`, finite even where `q_i` underflows.
    pub per_component_log_pass: Vec<f64>,
    pub component_means: Vec<DVector<f64>>,
    /// Uncentered second moments of `(X_A, P_A, X_B, P_B)`.
    pub component_second_moments: Vec<DMatrix<f64>>,
    /// Covariance conditional on a fixed tap outcome.
    pub component_conditional_covs: Vec<DMatrix<f64>>,
    pub pooled_mean: DVector<f64>,
    pub pooled_cov: DMatrix<f64>,
}

impl DistilledEnsemble {
    pub fn len(&self) -> usize {
        self.posterior_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posterior_weights.is_empty()
    }

    /// Central covariance of component `i`.
    pub fn component_cov(&self, i: usize) -> DMatrix<f64> {
        let mu = &self.component_means[i];
        &self.component_second_moments[i] - mu * mu.transpose()
    }
}

struct ComponentHerald {
    log_pass: f64,
    mean: DVector<f64>,
    second: DMatrix<f64>,
    conditional: DMatrix<f64>,
}

fn herald_component(state: &GaussianState, threshold_x: f64) -> Result<ComponentHerald> {
    if state.n_modes() != 3 {
        return Err(Error::Dimension {
            expected: 3,
            got: state.n_modes(),
        });
    }
    let mean = state.mean();
    let cov = state.cov();
    if mean[TAP_X].abs() > TAP_MEAN_TOL {
        return Err(Error::Unsupported(format!(
            "tap X mean {} is nonzero; heralding assumes a zero-mean tap",
            mean[TAP_X]
        )));
    }
    let var = cov[(TAP_X, TAP_X)];
    if !(var > 0.0) {
        return Err(Error::InvalidMatrix(format!("tap X variance {var} is not positive")));
    }
    let sigma = var.sqrt();
    let alpha = threshold_x / sigma;
    let lambda = hazard(alpha);
    let alpha_lambda = if lambda == 0.0 { 0.0 } else { alpha * lambda };

    let ab_mean = mean.rows(0, 4).into_owned();
    let ab_cov = cov.view((0, 0), (4, 4)).into_owned();
    let c = cov.view((0, TAP_X), (4, 1)).into_owned();
    let cct = &c * c.transpose();

    // Y | X = x is Gaussian with mean m + c x / var and covariance `conditional`;
    // the kept X has E[X] = sigma lambda and E[X^2] = var (1 + alpha lambda).
    let conditional = &ab_cov - &cct / var;
    let mean_x = sigma * lambda;
    let second_x = var * (1.0 + alpha_lambda);
    let c_vec = c.column(0).into_owned();
    let post_mean = &ab_mean + &c_vec * (mean_x / var);
    let cross = &ab_mean * c_vec.transpose() * (mean_x / var);
    let second =
        &conditional + &ab_mean * ab_mean.transpose() + &cross + cross.transpose() + &cct * (second_x / (var * var));

    Ok(ComponentHerald {
        log_pass: log_gaussian_tail(alpha),
        mean: post_mean,
        second: (&second + second.transpose()) * 0.5,
        conditional: (&conditional + conditional.transpose()) * 0.5,
    })
}

/// Keeps the `(A, B)` state whenever the tap X outcome is at least
/// `threshold_x`.
pub fn herald(mixture3: &MixtureState, threshold_x: f64) -> Result<DistilledEnsemble> {
    if threshold_x.is_nan() {
        return Err(Error::InvalidParameter {
            name: "threshold_x",
            value: threshold_x,
            reason: "must not be NaN",
        });
    }
    let parts = mixture3
        .components()
        .iter()
        .map(|(_, st)| herald_component(st, threshold_x))
        .collect::<Result<Vec<_>>>()?;
    let prior_weights = mixture3.weights();

    let log_joint: Vec<f64> = prior_weights
        .iter()
        .zip(&parts)
        .map(|(w, p)| w.ln() + p.log_pass)
        .collect();
    let top = log_joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_success = top + log_joint.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
    let success_probability = log_success.exp();
    if !(success_probability >= SUCCESS_FLOOR) {
        return Err(Error::DegenerateSelection { success_probability });
    }
    let posterior_weights: Vec<f64> = log_joint.iter().map(|l| (l - log_success).exp()).collect();

    let mut pooled_mean = DVector::zeros(4);
    let mut pooled_second = DMatrix::zeros(4, 4);
    for (w, p) in posterior_weights.iter().zip(&parts) {
        pooled_mean += &p.mean * *w;
        pooled_second += &p.second * *w;
    }
    let pooled_cov = pooled_second - &pooled_mean * pooled_mean.transpose();
    let pooled_cov = (&pooled_cov + pooled_cov.transpose()) * 0.5;

    Ok(DistilledEnsemble {
        threshold_x,
        success_probability,
        log_success_probability: log_success,
        prior_weights,
        posterior_weights,
        per_component_pass: parts.iter().map(|p| p.log_pass.exp()).collect(),
        per_component_log_pass: parts.iter().map(|p| p.log_pass).collect(),
        component_means: parts.iter().map(|p| p.mean.clone()).collect(),
        component_second_moments: parts.iter().map(|p| p.second.clone()).collect(),
        component_conditional_covs: parts.into_iter().map(|p| p.conditional).collect(),
        pooled_mean,
        pooled_cov,
    })
}

/// Gaussian logarithmic negativity of the pooled post-selected covariance.
pub fn distilled_gln(ensemble: &DistilledEnsemble) -> Result<f64> {
    log_negativity(&ensemble.pooled_cov)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussificationMetrics {
    /// Shannon entropy of the posterior weights, bits.
    pub weight_entropy: f64,
    /// Largest Frobenius distance between a component's second moments about
    /// the pooled mean and the pooled covariance.
    pub max_component_cov_distance: f64,
}

pub fn weight_entropy(weights: &[f64]) -> f64 {
    let h: f64 = weights.iter().filter(|&&w| w > 0.0).map(|&w| -w * w.log2()).sum();
    h.max(0.0)
}

pub fn gaussification_metrics(ensemble: &DistilledEnsemble) -> GaussificationMetrics {
    let m = &ensemble.pooled_mean;
    let max_component_cov_distance = (0..ensemble.len())
        .filter(|&i| ensemble.posterior_weights[i] > METRIC_WEIGHT_FLOOR)
        .map(|i| {
            let dev = &ensemble.component_means[i] - m;
            let about_pooled = ensemble.component_cov(i) + &dev * dev.transpose();
            (about_pooled - &ensemble.pooled_cov).norm()
        })
        .fold(0.0, f64::max);
    GaussificationMetrics {
        weight_entropy: weight_entropy(&ensemble.posterior_weights),
        max_component_cov_distance,
    }
}

/// `Var(X_A + X_B)` and `Var(P_A - P_B)`; both equal 2 for the vacuum.
pub fn joint_quadrature_variances(cov: &DMatrix<f64>) -> Result<(f64, f64)> {
    if cov.shape() != (4, 4) {
        return Err(Error::Dimension {
            expected: 4,
            got: cov.nrows(),
        });
    }
    let var_x_sum = cov[(0, 0)] + cov[(2, 2)] + 2.0 * cov[(0, 2)];
    let var_p_diff = cov[(1, 1)] + cov[(3, 3)] - 2.0 * cov[(1, 3)];
    Ok((var_x_sum, var_p_diff))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub success_probability: f64,
    pub gln: f64,
    pub posterior_weights: Vec<f64>,
    pub metrics: GaussificationMetrics,
    pub joint_variances: (f64, f64),
}

/// One threshold of a sweep; `point` is `None` when the selection failed and
/// `warning` then says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub threshold: f64,
    pub point: Option<SweepPoint>,
    pub warning: Option<String>,
}

fn sweep_point(mixture3: &MixtureState, threshold: f64) -> Result<SweepPoint> {
    let ens = herald(mixture3, threshold)?;
    Ok(SweepPoint {
        success_probability: ens.success_probability,
        gln: distilled_gln(&ens)?,
        metrics: gaussification_metrics(&ens),
        joint_variances: joint_quadrature_variances(&ens.pooled_cov)?,
        posterior_weights: ens.posterior_weights,
    })
}

/// Heralds at every threshold, in the order given. Points are evaluated in
/// parallel.
pub fn threshold_sweep(mixture3: &MixtureState, thresholds: &[f64]) -> Vec<SweepRecord> {
    thresholds
        .par_iter()
        .map(|&threshold| match sweep_point(mixture3, threshold) {
            Ok(point) => SweepRecord {
                threshold,
                point: Some(point),
                warning: None,
            },
            Err(e) => SweepRecord {
                threshold,
                point: None,
                warning: Some(e.to_string()),
            },
        })
        .collect()
}

/// `start, start + step, ...` up to and including `stop`.
pub fn threshold_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| start + k as f64 * step).collect()
}
