//! Experiment configuration file (JSON).
//!
//! Every struct rejects unknown keys. Optional sections fall back to the
//! defaults below, and [`to_canonical_json`] writes all of them out, so a
//! parsed-then-emitted config parses back to an identical value.

use std::fmt;
use std::path::{Path, PathBuf};

use cvdistill_core::channel::{ChannelLevel, DEFAULT_P_FULL, SEMICONTINUOUS_LEVEL_COUNT};
use cvdistill_core::distiller::{threshold_grid, DEFAULT_TAP_REFLECTIVITY};
use cvdistill_core::montecarlo::{McConfig, DEFAULT_BINS, DEFAULT_HISTOGRAM_RANGE, DEFAULT_SHOTS, DEFAULT_WORKERS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::format::to_json_string;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },

    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    #[default]
    Analytic,
    Mc,
    Both,
}

impl Engine {
    pub fn analytic(self) -> bool {
        matches!(self, Engine::Analytic | Engine::Both)
    }

    pub fn mc(self) -> bool {
        matches!(self, Engine::Mc | Engine::Both)
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Analytic => "analytic",
            Engine::Mc => "mc",
            Engine::Both => "both",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub source: SourceSpec,
    pub channel: ChannelSpec,
    /// Absent for a run without heralding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap: Option<TapSpec>,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Either explicit variances or targets to calibrate them from, never both.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_squeezed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_antisqueezed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate_to: Option<CalibrationTargets>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTargets {
    pub ln_initial: f64,
    pub ln_discrete_premix: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Source {
    Explicit { v_squeezed: f64, v_antisqueezed: f64 },
    Calibrate(CalibrationTargets),
}

impl SourceSpec {
    pub fn resolve(&self) -> Result<Source, ConfigError> {
        match (self.v_squeezed, self.v_antisqueezed, self.calibrate_to) {
            (Some(v_squeezed), Some(v_antisqueezed), None) => Ok(Source::Explicit {
                v_squeezed,
                v_antisqueezed,
            }),
            (None, None, Some(t)) => {
                if !(t.ln_initial.is_finite() && t.ln_discrete_premix.is_finite()) {
                    return invalid("calibration targets must be finite");
                }
                Ok(Source::Calibrate(t))
            }
            (None, None, None) => invalid("source needs v_squeezed/v_antisqueezed or calibrate_to"),
            (_, _, Some(_)) => invalid("source takes either explicit variances or calibrate_to, not both"),
            _ => invalid("source needs both v_squeezed and v_antisqueezed"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Perfect,
    Discrete,
    Semicontinuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub t: f64,
    pub p: f64,
}

/// A preset, or an explicit list of levels.
///
/// The semi-continuous preset takes `p_full`, `level_count`, and exactly one
/// of `beta` or `calibrate_ln_premix` (fit `beta` so the pooled LN before
/// heralding hits that value).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<LevelSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate_ln_premix: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_full: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_count: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Envelope {
    Beta(f64),
    Calibrate { ln_premix: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Channel {
    Perfect,
    Discrete,
    Semicontinuous {
        p_full: f64,
        level_count: usize,
        envelope: Envelope,
    },
    Levels(Vec<ChannelLevel>),
}

impl ChannelSpec {
    pub fn preset(preset: Preset) -> Self {
        Self {
            preset: Some(preset),
            ..Default::default()
        }
    }

    pub fn resolve(&self) -> Result<Channel, ConfigError> {
        let envelope_keys = self.beta.is_some()
            || self.calibrate_ln_premix.is_some()
            || self.p_full.is_some()
            || self.level_count.is_some();
        match (self.preset, &self.levels) {
            (Some(_), Some(_)) => invalid("channel takes either a preset or levels, not both"),
            (None, None) => invalid("channel needs a preset or a list of levels"),
            (None, Some(levels)) => {
                if envelope_keys {
                    return invalid("envelope keys only apply to the semicontinuous preset");
                }
                Ok(Channel::Levels(
                    levels
                        .iter()
                        .map(|l| ChannelLevel {
                            transmittance: l.t,
                            probability: l.p,
                        })
                        .collect(),
                ))
            }
            (Some(Preset::Semicontinuous), None) => {
                let envelope = match (self.beta, self.calibrate_ln_premix) {
                    (Some(b), None) if b.is_finite() => Envelope::Beta(b),
                    (None, Some(ln)) if ln.is_finite() => Envelope::Calibrate { ln_premix: ln },
                    (Some(_), Some(_)) => {
                        return invalid("semicontinuous channel takes beta or calibrate_ln_premix, not both")
                    }
                    (None, None) => return invalid("semicontinuous channel needs beta or calibrate_ln_premix"),
                    _ => return invalid("envelope parameters must be finite"),
                };
                let p_full = self.p_full.unwrap_or(DEFAULT_P_FULL);
                if !(p_full > 0.0 && p_full < 1.0) {
                    return invalid(format!("p_full must lie in (0, 1), got {p_full}"));
                }
                let level_count = self.level_count.unwrap_or(SEMICONTINUOUS_LEVEL_COUNT);
                if level_count < 2 {
                    return invalid(format!("level_count must be at least 2, got {level_count}"));
                }
                Ok(Channel::Semicontinuous {
                    p_full,
                    level_count,
                    envelope,
                })
            }
            (Some(p), None) => {
                if envelope_keys {
                    return invalid("envelope keys only apply to the semicontinuous preset");
                }
                Ok(match p {
                    Preset::Perfect => Channel::Perfect,
                    Preset::Discrete => Channel::Discrete,
                    Preset::Semicontinuous => unreachable!(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapSpec {
    #[serde(default = "default_reflectivity")]
    pub reflectivity: f64,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
}

fn default_reflectivity() -> f64 {
    DEFAULT_TAP_REFLECTIVITY
}

/// 0 to 12 SNU in steps of 0.5.
pub fn default_thresholds() -> Vec<f64> {
    threshold_grid(0.0, 12.0, 0.5)
}

impl Default for TapSpec {
    fn default() -> Self {
        Self {
            reflectivity: default_reflectivity(),
            thresholds: default_thresholds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSpec {
    pub n_shots: u64,
    pub seed: u64,
    pub workers: usize,
    pub histogram_bins: usize,
    pub histogram_range: f64,
}

impl Default for McSpec {
    fn default() -> Self {
        Self {
            n_shots: DEFAULT_SHOTS,
            seed: 0,
            workers: DEFAULT_WORKERS,
            histogram_bins: DEFAULT_BINS,
            histogram_range: DEFAULT_HISTOGRAM_RANGE,
        }
    }
}

impl McSpec {
    pub fn to_mc_config(&self, threshold_x: f64) -> McConfig {
        McConfig {
            n_shots: self.n_shots,
            seed: self.seed,
            threshold_x,
            histogram_bins: self.histogram_bins,
            histogram_range: self.histogram_range,
            workers: self.workers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub histograms: bool,
    pub posterior_tables: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            histograms: true,
            posterior_tables: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let cfg = Self::from_json(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks that need no model evaluation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.trim().is_empty() {
            return invalid("name must not be empty");
        }
        self.source.resolve()?;
        self.channel.resolve()?;
        if let Some(tap) = &self.tap {
            if !(tap.reflectivity > 0.0 && tap.reflectivity < 1.0) {
                return invalid(format!("tap reflectivity must lie in (0, 1), got {}", tap.reflectivity));
            }
            if tap.thresholds.is_empty() {
                return invalid("tap thresholds must not be empty");
            }
            if let Some(t) = tap.thresholds.iter().find(|t| !t.is_finite()) {
                return invalid(format!("threshold {t} is not finite"));
            }
        }
        if self.engine.mc() {
            self.mc
                .to_mc_config(0.0)
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("mc: {e}")))?;
        }
        Ok(())
    }

    /// Thresholds to evaluate; `None` stands for "no heralding".
    pub fn thresholds(&self) -> Vec<Option<f64>> {
        match &self.tap {
            Some(tap) => tap.thresholds.iter().copied().map(Some).collect(),
            None => vec![None],
        }
    }

    pub fn to_canonical_json(&self) -> String {
        to_json_string(self)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json().as_bytes()))
    }
}
