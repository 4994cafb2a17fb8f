//! Inversion of measured log-negativities into model parameters.
//!
//! The source squeezing follows from the lossless LN in closed form. The
//! anti-squeezed variance and the semi-continuous envelope slope are each
//! one-dimensional monotone root-finds, solved by bisection.

use cvdistill_core::channel::{
    discrete_channel, envelope_exponential_on, pooled_cm, propagate, semicontinuous_levels_n, FluctuatingChannel,
};
use cvdistill_core::gaussian::{log_negativity, make_kerr_entangled, GaussianState};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// LN tolerance of the anti-squeezing fit.
pub const SOURCE_LN_TOL: f64 = 1e-6;
/// LN tolerance of the envelope fit.
pub const ENVELOPE_LN_TOL: f64 = 1e-4;
/// Upper end of the initial anti-squeezing bracket, SNU.
pub const V_A_BRACKET_TOP: f64 = 1e4;
/// Bracket expansion stops here.
const V_A_LIMIT: f64 = 1e8;
pub const BETA_BRACKET: (f64, f64) = (-50.0, 50.0);
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("target {target} for {parameter} is not bracketed on [{lo}, {hi}] (values {f_lo} .. {f_hi})")]
    Unbracketed {
        parameter: &'static str,
        target: f64,
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("unphysical calibration target: {0}")]
    Unphysical(String),

    #[error(transparent)]
    Model(#[from] cvdistill_core::Error),
}

type Result<T> = std::result::Result<T, CalibrationError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceCalibration {
    pub v_squeezed: f64,
    pub v_antisqueezed: f64,
    /// Pooled LN of the discrete-channel mixture at the fitted parameters.
    pub ln_discrete_premix: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeCalibration {
    pub beta: f64,
    pub channel: FluctuatingChannel,
    /// Pooled LN before heralding at the fitted slope.
    pub ln_premix: f64,
}

/// Gaussian LN of the pooled mixture `state` becomes after `channel`.
pub fn pooled_ln(state: &GaussianState, channel: &FluctuatingChannel) -> cvdistill_core::Result<f64> {
    let (_, cov) = pooled_cm(&propagate(state, channel)?);
    log_negativity(&cov)
}

/// Bisection for `f(x) = 0` on `[lo, hi]` where `f(lo)` and `f(hi)` have
/// opposite signs (or one is within `tol`). Returns the first point with
/// `|f| <= tol`, or the midpoint once the bracket collapses.
fn bisect<F>(mut lo: f64, mut hi: f64, mut f_lo: f64, tol: f64, mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let f_mid = f(mid)?;
        if f_mid.abs() <= tol {
            return Ok(mid);
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `V_s = 2^-ln_initial`; `V_a` such that the discrete-channel pooled LN is
/// `ln_discrete_premix`.
pub fn calibrate(ln_initial: f64, ln_discrete_premix: f64) -> Result<SourceCalibration> {
    if !(ln_initial > 0.0 && ln_initial.is_finite()) {
        return Err(CalibrationError::Unphysical(format!(
            "initial LN must be positive, got {ln_initial}"
        )));
    }
    let vs = 2f64.powf(-ln_initial);
    let channel = discrete_channel();
    let f = |va: f64| -> Result<f64> { Ok(pooled_ln(&make_kerr_entangled(vs, va)?, &channel)? - ln_discrete_premix) };

    // The pooled LN falls as V_a grows; the pure state sits at V_a = 1/V_s.
    let lo = 1.0 / vs;
    let f_lo = f(lo)?;
    let finish = |va: f64| -> Result<SourceCalibration> {
        Ok(SourceCalibration {
            v_squeezed: vs,
            v_antisqueezed: va,
            ln_discrete_premix: f(va)? + ln_discrete_premix,
        })
    };
    if f_lo.abs() <= SOURCE_LN_TOL {
        return finish(lo);
    }
    let mut hi = V_A_BRACKET_TOP;
    let mut f_hi = f(hi)?;
    while f_lo > 0.0 && f_hi > 0.0 && hi < V_A_LIMIT {
        hi *= 10.0;
        f_hi = f(hi)?;
    }
    if (f_lo > 0.0) == (f_hi > 0.0) {
        return Err(CalibrationError::Unbracketed {
            parameter: "v_antisqueezed",
            target: ln_discrete_premix,
            lo,
            hi,
            f_lo: f_lo + ln_discrete_premix,
            f_hi: f_hi + ln_discrete_premix,
        });
    }
    finish(bisect(lo, hi, f_lo, SOURCE_LN_TOL, f)?)
}

/// Slope of the exponential envelope such that the pooled LN of `state`
/// through the semi-continuous channel is `ln_premix`. The midpoint of the
/// bracket is tried first.
pub fn calibrate_envelope(
    state: &GaussianState,
    p_full: f64,
    ln_premix: f64,
    level_count: usize,
) -> Result<EnvelopeCalibration> {
    let levels = semicontinuous_levels_n(level_count)?;
    let f = |beta: f64| -> Result<f64> {
        Ok(pooled_ln(state, &envelope_exponential_on(&levels, beta, p_full)?)? - ln_premix)
    };
    let (lo, hi) = BETA_BRACKET;
    let mid = 0.5 * (lo + hi);
    let f_mid = f(mid)?;
    let beta = if f_mid.abs() <= ENVELOPE_LN_TOL {
        mid
    } else {
        let (f_lo, f_hi) = (f(lo)?, f(hi)?);
        if (f_lo < 0.0) != (f_mid < 0.0) {
            bisect(lo, mid, f_lo, ENVELOPE_LN_TOL, f)?
        } else if (f_hi < 0.0) != (f_mid < 0.0) {
            bisect(mid, hi, f_mid, ENVELOPE_LN_TOL, f)?
        } else {
            return Err(CalibrationError::Unbracketed {
                parameter: "beta",
                target: ln_premix,
                lo,
                hi,
                f_lo: f_lo + ln_premix,
                f_hi: f_hi + ln_premix,
            });
        }
    };
    let channel = envelope_exponential_on(&levels, beta, p_full)?;
    let ln = pooled_ln(state, &channel)?;
    Ok(EnvelopeCalibration {
        beta,
        channel,
        ln_premix: ln,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squeezed_variance_is_closed_form() {
        let cal = calibrate(0.76, -1.63).unwrap();
        assert_eq!(cal.v_squeezed, 2f64.powf(-0.76));
        assert!((cal.v_squeezed - 0.5904).abs() < 1e-4);
        assert!((cal.ln_discrete_premix + 1.63).abs() <= SOURCE_LN_TOL);
        // Pooled LN at V_a = 125 is about -1.69, so the root sits below it.
        assert!(cal.v_antisqueezed > 100.0 && cal.v_antisqueezed < 125.0);
    }

    #[test]
    fn pure_state_limit_is_bracket_edge() {
        let vs = 2f64.powf(-0.76);
        let edge = pooled_ln(&make_kerr_entangled(vs, 1.0 / vs).unwrap(), &discrete_channel()).unwrap();
        let cal = calibrate(0.76, edge).unwrap();
        assert_eq!(cal.v_antisqueezed, 1.0 / vs);
    }

    #[test]
    fn unreachable_targets() {
        assert!(matches!(calibrate(-0.2, -1.0), Err(CalibrationError::Unphysical(_))));
        assert!(matches!(
            calibrate(0.76, 0.9),
            Err(CalibrationError::Unbracketed { .. })
        ));
    }

    #[test]
    fn deterministic() {
        let a = calibrate(0.76, -1.63).unwrap();
        let b = calibrate(0.76, -1.63).unwrap();
        assert!((a.v_antisqueezed - b.v_antisqueezed).abs() < 1e-6);
    }

    #[test]
    fn envelope_root_at_trial_point() {
        let cal = calibrate(0.76, -1.63).unwrap();
        let st = make_kerr_entangled(cal.v_squeezed, cal.v_antisqueezed).unwrap();
        let flat = pooled_ln(
            &st,
            &envelope_exponential_on(&semicontinuous_levels_n(45).unwrap(), 0.0, 0.2).unwrap(),
        )
        .unwrap();
        let env = calibrate_envelope(&st, 0.2, flat, 45).unwrap();
        assert_eq!(env.beta, 0.0);
        let env = calibrate_envelope(&st, 0.2, -0.11, 45).unwrap();
        assert!((env.ln_premix + 0.11).abs() <= ENVELOPE_LN_TOL);
        assert_eq!(env.channel.probabilities()[44], 0.2);
    }
}
