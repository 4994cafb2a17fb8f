//! Fluctuating-loss channels and the Gaussian mixtures they produce.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::gaussian::{validate_physical, GaussianState};

const PROBABILITY_SUM_TOL: f64 = 1e-12;

/// Mode index of beam B, the one sent through the channel.
pub const CHANNEL_MODE: usize = 1;

pub const SEMICONTINUOUS_LEVEL_COUNT: usize = 45;
pub const SEMICONTINUOUS_T_MIN: f64 = 0.1;
pub const DEFAULT_P_FULL: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelLevel {
    pub transmittance: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuatingChannel {
    levels: Vec<ChannelLevel>,
}

impl FluctuatingChannel {
    pub fn new(levels: Vec<ChannelLevel>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidChannel("channel has no levels".into()));
        }
        for level in &levels {
            check_range("transmittance", level.transmittance, 0.0, 1.0, "must lie in [0, 1]")?;
            check_range("probability", level.probability, 0.0, 1.0, "must lie in [0, 1]")?;
        }
        if let Some(w) = levels.windows(2).find(|w| w[1].transmittance <= w[0].transmittance) {
            return Err(Error::InvalidChannel(format!(
                "transmittances must be strictly increasing ({} then {})",
                w[0].transmittance, w[1].transmittance
            )));
        }
        let total: f64 = levels.iter().map(|l| l.probability).sum();
        if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
            return Err(Error::InvalidChannel(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { levels })
    }

    /// Lossless channel.
    pub fn perfect() -> Self {
        Self {
            levels: vec![ChannelLevel {
                transmittance: 1.0,
                probability: 1.0,
            }],
        }
    }

    pub fn levels(&self) -> &[ChannelLevel] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn transmittances(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.transmittance).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.probability).collect()
    }
}

/// Two equiprobable levels: 25% and full transmission.
pub fn discrete_channel() -> FluctuatingChannel {
    FluctuatingChannel {
        levels: vec![
            ChannelLevel {
                transmittance: 0.25,
                probability: 0.5,
            },
            ChannelLevel {
                transmittance: 1.0,
                probability: 0.5,
            },
        ],
    }
}

/// `count` evenly spaced transmittances spanning `[0.1, 1.0]` inclusive.
pub fn semicontinuous_levels_n(count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::InvalidChannel(format!(
            "a semi-continuous grid needs at least 2 levels, got {count}"
        )));
    }
    let step = (1.0 - SEMICONTINUOUS_T_MIN) / (count - 1) as f64;
    let mut levels: Vec<f64> = (0..count).map(|k| SEMICONTINUOUS_T_MIN + k as f64 * step).collect();
    levels[count - 1] = 1.0;
    Ok(levels)
}

pub fn semicontinuous_levels() -> Vec<f64> {
    semicontinuous_levels_n(SEMICONTINUOUS_LEVEL_COUNT).expect("45 > 2")
}

/// Probability `p_full` on the top level of `levels` (which must end at
/// T = 1) and the remainder spread over the other levels proportionally to
/// `exp(beta * T)`.
pub fn envelope_exponential_on(levels: &[f64], beta: f64, p_full: f64) -> Result<FluctuatingChannel> {
    if !(p_full > 0.0 && p_full < 1.0) {
        return Err(Error::InvalidParameter {
            name: "p_full",
            value: p_full,
            reason: "must lie in (0, 1)",
        });
    }
    if !beta.is_finite() {
        return Err(Error::InvalidParameter {
            name: "beta",
            value: beta,
            reason: "must be finite",
        });
    }
    let (last, rest) = levels
        .split_last()
        .filter(|(_, rest)| !rest.is_empty())
        .ok_or_else(|| Error::InvalidChannel("envelope needs at least 2 levels".into()))?;
    if *last != 1.0 {
        return Err(Error::InvalidChannel(format!(
            "envelope grid must end at full transmission, ends at {last}"
        )));
    }
    // Shift by the largest exponent so that exp never overflows.
    let top = rest.iter().map(|t| beta * t).fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = rest.iter().map(|t| (beta * t - top).exp()).collect();
    let norm: f64 = raw.iter().sum();
    let mut out: Vec<ChannelLevel> = rest
        .iter()
        .zip(&raw)
        .map(|(&t, &r)| ChannelLevel {
            transmittance: t,
            probability: (1.0 - p_full) * r / norm,
        })
        .collect();
    out.push(ChannelLevel {
        transmittance: 1.0,
        probability: p_full,
    });
    FluctuatingChannel::new(out)
}

pub fn envelope_exponential(beta: f64, p_full: f64) -> Result<FluctuatingChannel> {
    envelope_exponential_on(&semicontinuous_levels(), beta, p_full)
}

/// Convex mixture of Gaussian states with a common mode count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    components: Vec<(f64, GaussianState)>,
}

impl MixtureState {
    pub fn new(components: Vec<(f64, GaussianState)>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidMixture("mixture has no components".into()))?;
        let n = first.1.n_modes();
        for (i, (w, st)) in components.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::InvalidMixture(format!(
                    "component {i} has non-positive weight {w}"
                )));
            }
            if st.n_modes() != n {
                return Err(Error::InvalidMixture(format!(
                    "component {i} has {} modes, expected {n}",
                    st.n_modes()
                )));
            }
            if !validate_physical(st) {
                return Err(Error::InvalidMixture(format!("component {i} is unphysical")));
            }
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
            return Err(Error::InvalidMixture(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { components })
    }

    pub fn single(state: GaussianState) -> Self {
        Self {
            components: vec![(1.0, state)],
        }
    }

    pub fn components(&self) -> &[(f64, GaussianState)] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|(w, _)| *w).collect()
    }

    pub fn n_modes(&self) -> usize {
        self.components[0].1.n_modes()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Applies the same map to every component, keeping the weights.
    pub fn try_map<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&GaussianState) -> Result<GaussianState>,
    {
        let components = self
            .components
            .iter()
            .map(|(w, st)| Ok((*w, f(st)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }
}

/// Sends mode B of `state` through every channel level. Levels with zero
/// probability contribute nothing and are dropped.
pub fn propagate(state: &GaussianState, channel: &FluctuatingChannel) -> Result<MixtureState> {
    if state.n_modes() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: state.n_modes(),
        });
    }
    if !validate_physical(state) {
        return Err(Error::Unphysical(state.symplectic_eigenvalues()?.min()));
    }
    let components = channel
        .levels()
        .iter()
        .filter(|l| l.probability > 0.0)
        .map(|l| Ok((l.probability, state.apply_loss(CHANNEL_MODE, l.transmittance)?)))
        .collect::<Result<Vec<_>>>()?;
    MixtureState::new(components)
}

/// First and central second moments of the pooled ensemble.
pub fn pooled_cm(mixture: &MixtureState) -> (DVector<f64>, DMatrix<f64>) {
    let dim = 2 * mixture.n_modes();
    let mut mean = DVector::zeros(dim);
    let mut second = DMatrix::zeros(dim, dim);
    for (w, st) in mixture.components() {
        mean += st.mean() * *w;
        second += (st.cov() + st.mean() * st.mean().transpose()) * *w;
    }
    let cov = second - &mean * mean.transpose();
    (mean, (&cov + cov.transpose()) * 0.5)
}

/// Convexity bound `log2(sum_i w_i ||rho_i^T||_1)` on the logarithmic
/// negativity of the (non-Gaussian) mixture.
pub fn upper_bound_ln(mixture: &MixtureState) -> Result<f64> {
    let norm = mixture
        .components()
        .iter()
        .map(|(w, st)| Ok(w * st.pt_trace_norm()?))
        .sum::<Result<f64>>()?;
    // Each trace norm is >= 1; only rounding can push the sum below it.
    Ok(norm.log2().max(0.0))
}
