//! The persisted result of one scenario run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Passed,
    /// Engines disagree somewhere they are required to agree.
    Failed,
    /// No threshold produced a usable ensemble in any engine.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub v_squeezed: f64,
    pub v_antisqueezed: f64,
    /// Gaussian LN of the source before the channel.
    pub ln_source: f64,
    pub transmittances: Vec<f64>,
    pub probabilities: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap_reflectivity: Option<f64>,
}

/// One row of the LN-after table. `threshold_snu` is `None` when nothing is
/// heralded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LnRow {
    pub threshold_snu: Option<f64>,
    pub engine: String,
    pub gaussian_ln: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_ln_se: Option<f64>,
    pub success_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_probability_se: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept_count: Option<u64>,
    /// Entropy in bits of the level weights of the kept ensemble.
    pub weight_entropy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl LnRow {
    pub fn failed(threshold_snu: Option<f64>, engine: &str, error: String) -> Self {
        Self {
            threshold_snu,
            engine: engine.into(),
            gaussian_ln: None,
            gaussian_ln_se: None,
            success_probability: None,
            success_probability_se: None,
            kept_count: None,
            weight_entropy: None,
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussificationRow {
    pub threshold_snu: Option<f64>,
    pub weight_entropy: f64,
    pub max_component_cov_distance: f64,
    pub joint_variance_x: f64,
    pub joint_variance_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRow {
    pub threshold_snu: Option<f64>,
    pub engine: String,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTable {
    pub transmittances: Vec<f64>,
    pub prior_weights: Vec<f64>,
    pub rows: Vec<PosteriorRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub threshold_snu: Option<f64>,
    pub analytic_success_probability: f64,
    pub analytic_ln: f64,
    pub mc_success_probability: Option<f64>,
    pub success_z: Option<f64>,
    pub mc_ln: Option<f64>,
    pub mc_ln_se: Option<f64>,
    pub ln_z: Option<f64>,
    /// Whether the row is held to the tolerance (analytic success above the
    /// floor).
    pub checked: bool,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub tolerance_se: f64,
    pub min_success_probability: f64,
    pub rows: Vec<AgreementRow>,
    pub status: RunStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostHistograms {
    pub threshold_snu: Option<f64>,
    pub kept_count: u64,
    pub series: BTreeMap<String, Vec<u64>>,
}

/// Monte Carlo marginals on a shared uniform grid over `[-range, range]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSet {
    pub bins: usize,
    pub range: f64,
    pub total_count: u64,
    pub pre: BTreeMap<String, Vec<u64>>,
    pub post: Vec<PostHistograms>,
}

impl HistogramSet {
    pub fn edges(&self) -> Vec<f64> {
        let w = 2.0 * self.range / self.bins as f64;
        (0..=self.bins).map(|k| -self.range + k as f64 * w).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub engine: String,
    pub core_version: String,
    pub cli_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McProvenance {
    pub seed: u64,
    pub workers: usize,
    pub n_shots: u64,
    pub sampling_model: String,
    pub rng: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub status: RunStatus,
    pub model: ModelSummary,
    /// Gaussian LN of the pooled mixture before heralding.
    pub ln_before: f64,
    /// Convexity bound on the LN of the mixture before heralding.
    pub upper_bound: f64,
    pub ln_after: Vec<LnRow>,
    pub gaussification: Vec<GaussificationRow>,
    pub posterior_weights: PosteriorTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<Agreement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histograms: Option<HistogramSet>,
    pub notes: Vec<String>,
    pub provenance: Provenance,
    pub config: ExperimentConfig,
}

impl RunReport {
    pub fn rows(&self, engine: &str) -> impl Iterator<Item = &LnRow> {
        let engine = engine.to_owned();
        self.ln_after.iter().filter(move |r| r.engine == engine)
    }

    /// Analytic row at `threshold`, if any.
    pub fn analytic_at(&self, threshold: f64) -> Option<&LnRow> {
        self.rows("analytic").find(|r| r.threshold_snu == Some(threshold))
    }
}
