//! Building the model from a config and running the requested engines.

use std::collections::BTreeMap;

use cvdistill_core::channel::{
    discrete_channel, envelope_exponential_on, pooled_cm, propagate, semicontinuous_levels_n, upper_bound_ln,
    FluctuatingChannel, MixtureState,
};
use cvdistill_core::distiller::{attach_tap, threshold_sweep, weight_entropy, SweepRecord, TapConfig};
use cvdistill_core::gaussian::{log_negativity, make_kerr_entangled, GaussianState};
use cvdistill_core::montecarlo::{run_mc_sweep, McError, McResult, McSweep, RNG_NAME, SAMPLING_MODEL};
use thiserror::Error;

use crate::calibrate::{calibrate, calibrate_envelope, CalibrationError};
use crate::config::{Channel, ConfigError, Envelope, ExperimentConfig, Source};
use crate::report::{
    Agreement, AgreementRow, GaussificationRow, HistogramSet, LnRow, McProvenance, ModelSummary, PostHistograms,
    PosteriorRow, PosteriorTable, Provenance, RunReport, RunStatus,
};

/// MC and analytic LN must agree within this many standard errors...
pub const AGREEMENT_TOLERANCE_SE: f64 = 4.0;
/// ...at every threshold whose analytic success probability is at least this.
pub const AGREEMENT_MIN_SUCCESS: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("calibration failed: {0}")]
    Calibration(#[from] CalibrationError),

    #[error("model construction failed: {0}")]
    Model(#[from] cvdistill_core::Error),
}

/// Source, channel and the mixtures derived from them.
#[derive(Debug, Clone)]
pub struct Model {
    pub v_squeezed: f64,
    pub v_antisqueezed: f64,
    pub source: GaussianState,
    pub channel: FluctuatingChannel,
    pub envelope_beta: Option<f64>,
    /// Two-mode mixture after the channel.
    pub mixture: MixtureState,
    /// Three-mode mixture with the tap (or, without a tap, an idle vacuum
    /// mode that never rejects a shot).
    pub mixture3: MixtureState,
    pub tap: Option<TapConfig>,
}

pub fn build_channel(
    channel: &Channel,
    source: &GaussianState,
) -> Result<(FluctuatingChannel, Option<f64>), ScenarioError> {
    Ok(match channel {
        Channel::Perfect => (FluctuatingChannel::perfect(), None),
        Channel::Discrete => (discrete_channel(), None),
        Channel::Levels(levels) => (FluctuatingChannel::new(levels.clone())?, None),
        Channel::Semicontinuous {
            p_full,
            level_count,
            envelope: Envelope::Beta(beta),
        } => {
            let levels = semicontinuous_levels_n(*level_count)?;
            (envelope_exponential_on(&levels, *beta, *p_full)?, Some(*beta))
        }
        Channel::Semicontinuous {
            p_full,
            level_count,
            envelope: Envelope::Calibrate { ln_premix },
        } => {
            let fit = calibrate_envelope(source, *p_full, *ln_premix, *level_count)?;
            (fit.channel, Some(fit.beta))
        }
    })
}

pub fn build_model(cfg: &ExperimentConfig) -> Result<Model, ScenarioError> {
    cfg.validate()?;
    let (v_squeezed, v_antisqueezed) = match cfg.source.resolve()? {
        Source::Explicit {
            v_squeezed,
            v_antisqueezed,
        } => (v_squeezed, v_antisqueezed),
        Source::Calibrate(t) => {
            let c = calibrate(t.ln_initial, t.ln_discrete_premix)?;
            (c.v_squeezed, c.v_antisqueezed)
        }
    };
    let source = make_kerr_entangled(v_squeezed, v_antisqueezed)?;
    let (channel, envelope_beta) = build_channel(&cfg.channel.resolve()?, &source)?;
    let mixture = propagate(&source, &channel)?;
    let tap = match &cfg.tap {
        Some(t) => Some(TapConfig::new(t.reflectivity, 0.0)?),
        None => None,
    };
    let mixture3 = match &tap {
        Some(t) => attach_tap(&mixture, t)?,
        None => mixture.try_map(|s| Ok(s.tensor(&GaussianState::vacuum(1))))?,
    };
    Ok(Model {
        v_squeezed,
        v_antisqueezed,
        source,
        channel,
        envelope_beta,
        mixture,
        mixture3,
        tap,
    })
}

fn numeric(thresholds: &[Option<f64>]) -> Vec<f64> {
    thresholds.iter().map(|t| t.unwrap_or(f64::NEG_INFINITY)).collect()
}

fn analytic_rows(
    thresholds: &[Option<f64>],
    records: &[SweepRecord],
    rows: &mut Vec<LnRow>,
    gauss: &mut Vec<GaussificationRow>,
    posterior: &mut Vec<PosteriorRow>,
    notes: &mut Vec<String>,
) {
    for (&th, rec) in thresholds.iter().zip(records) {
        if let Some(w) = &rec.warning {
            notes.push(format!("analytic, threshold {}: {w}", label(th)));
        }
        match &rec.point {
            Some(p) => {
                rows.push(LnRow {
                    threshold_snu: th,
                    engine: "analytic".into(),
                    gaussian_ln: Some(p.gln),
                    gaussian_ln_se: None,
                    success_probability: Some(p.success_probability),
                    success_probability_se: None,
                    kept_count: None,
                    weight_entropy: Some(p.metrics.weight_entropy),
                    error: None,
                });
                gauss.push(GaussificationRow {
                    threshold_snu: th,
                    weight_entropy: p.metrics.weight_entropy,
                    max_component_cov_distance: p.metrics.max_component_cov_distance,
                    joint_variance_x: p.joint_variances.0,
                    joint_variance_p: p.joint_variances.1,
                });
                posterior.push(PosteriorRow {
                    threshold_snu: th,
                    engine: "analytic".into(),
                    weights: p.posterior_weights.clone(),
                });
            }
            None => rows.push(LnRow::failed(
                th,
                "analytic",
                rec.warning.clone().unwrap_or_else(|| "no result".into()),
            )),
        }
    }
}

fn mc_row(th: Option<f64>, res: &McResult) -> LnRow {
    LnRow {
        threshold_snu: th,
        engine: "mc".into(),
        gaussian_ln: res.gln_hat.map(|g| g.0),
        gaussian_ln_se: res.gln_hat.map(|g| g.1),
        success_probability: Some(res.success_probability_hat),
        success_probability_se: Some(res.success_probability_se),
        kept_count: Some(res.kept_count),
        weight_entropy: Some(weight_entropy(&res.kept_fractions())),
        error: res
            .gln_hat
            .is_none()
            .then(|| format!("{} kept shots do not give a usable covariance estimate", res.kept_count)),
    }
}

fn mc_rows(thresholds: &[Option<f64>], sweep: &McSweep, rows: &mut Vec<LnRow>, posterior: &mut Vec<PosteriorRow>) {
    for (&th, res) in thresholds.iter().zip(&sweep.results) {
        match res {
            Ok(r) => {
                rows.push(mc_row(th, r));
                posterior.push(PosteriorRow {
                    threshold_snu: th,
                    engine: "mc".into(),
                    weights: r.kept_fractions(),
                });
            }
            Err(e) => rows.push(LnRow::failed(th, "mc", e.to_string())),
        }
    }
}

fn histogram_set(thresholds: &[Option<f64>], sweep: &McSweep) -> HistogramSet {
    let counts = |m: &BTreeMap<String, cvdistill_core::montecarlo::Histogram>| {
        m.iter()
            .map(|(k, h)| (k.clone(), h.counts.clone()))
            .collect::<BTreeMap<_, _>>()
    };
    let any = sweep.pre.histograms.values().next().expect("five series");
    HistogramSet {
        bins: any.bins(),
        range: any.range,
        total_count: sweep.pre.total_count,
        pre: counts(&sweep.pre.histograms),
        post: thresholds
            .iter()
            .zip(&sweep.results)
            .filter_map(|(&th, r)| {
                r.as_ref().ok().map(|r| PostHistograms {
                    threshold_snu: th,
                    kept_count: r.kept_count,
                    series: counts(&r.post_histograms),
                })
            })
            .collect(),
    }
}

/// `(success_hat - success) / se`, with `se = 0` read as exact agreement
/// when the two coincide.
fn z_score(hat: f64, exact: f64, se: f64) -> f64 {
    if se > 0.0 {
        (hat - exact) / se
    } else if hat == exact {
        0.0
    } else {
        f64::INFINITY
    }
}

fn agreement(thresholds: &[Option<f64>], records: &[SweepRecord], mc: &[Result<McResult, McError>]) -> Agreement {
    let mut rows = Vec::new();
    for ((&th, rec), res) in thresholds.iter().zip(records).zip(mc) {
        let Some(p) = &rec.point else { continue };
        let checked = p.success_probability >= AGREEMENT_MIN_SUCCESS;
        let mc = res.as_ref().ok();
        let gln = mc.and_then(|r| r.gln_hat);
        let ln_z = gln.map(|(ln, se)| z_score(ln, p.gln, se));
        let within = ln_z.is_some_and(|z| z.abs() <= AGREEMENT_TOLERANCE_SE);
        rows.push(AgreementRow {
            threshold_snu: th,
            analytic_success_probability: p.success_probability,
            analytic_ln: p.gln,
            mc_success_probability: mc.map(|r| r.success_probability_hat),
            success_z: mc.map(|r| {
                z_score(
                    r.success_probability_hat,
                    p.success_probability,
                    r.success_probability_se,
                )
            }),
            mc_ln: gln.map(|g| g.0),
            mc_ln_se: gln.map(|g| g.1),
            ln_z,
            checked,
            within_tolerance: within,
        });
    }
    let failed = rows.iter().any(|r| r.checked && !r.within_tolerance);
    Agreement {
        tolerance_se: AGREEMENT_TOLERANCE_SE,
        min_success_probability: AGREEMENT_MIN_SUCCESS,
        rows,
        status: if failed { RunStatus::Failed } else { RunStatus::Passed },
    }
}

pub(crate) fn label(th: Option<f64>) -> String {
    match th {
        Some(t) => format!("{t} SNU"),
        None => "none".into(),
    }
}

/// Runs every requested engine over every threshold. Engine failures at a
/// threshold are recorded in its row and the run continues.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<RunReport, ScenarioError> {
    let model = build_model(cfg)?;
    let thresholds = cfg.thresholds();
    let numeric = numeric(&thresholds);
    let mut notes = Vec::new();

    let (_, pooled) = pooled_cm(&model.mixture);
    let ln_before = log_negativity(&pooled)?;
    let upper_bound = upper_bound_ln(&model.mixture)?;

    let mut ln_after = Vec::new();
    let mut gaussification = Vec::new();
    let mut posterior = Vec::new();

    let records = cfg
        .engine
        .analytic()
        .then(|| threshold_sweep(&model.mixture3, &numeric));
    if let Some(records) = &records {
        analytic_rows(
            &thresholds,
            records,
            &mut ln_after,
            &mut gaussification,
            &mut posterior,
            &mut notes,
        );
    }

    let mut histograms = None;
    let mut mc_results = None;
    if cfg.engine.mc() {
        match run_mc_sweep(&model.mixture3, &cfg.mc.to_mc_config(0.0), &numeric) {
            Ok(sweep) => {
                mc_rows(&thresholds, &sweep, &mut ln_after, &mut posterior);
                if cfg.output.histograms {
                    histograms = Some(histogram_set(&thresholds, &sweep));
                }
                mc_results = Some(sweep.results);
            }
            Err(e) => {
                for &th in &thresholds {
                    ln_after.push(LnRow::failed(th, "mc", e.to_string()));
                }
            }
        }
        notes.push(
            "Monte Carlo shots sample all quadratures of the three modes jointly, so each shot \
             carries more information than a split X/P measurement would."
                .into(),
        );
        notes.push("Monte Carlo errors are statistical only.".into());
    }

    let agreement = match (&records, &mc_results) {
        (Some(rec), Some(mc)) if cfg.engine == crate::config::Engine::Both => Some(agreement(&thresholds, rec, mc)),
        _ => None,
    };

    if model.envelope_beta.is_some() {
        notes.push(
            "The semi-continuous level distribution is a two-parameter exponential envelope \
             fitted to scalar targets; its shape is a modelling assumption."
                .into(),
        );
    }
    if model.tap.is_none() {
        notes.push("No tap: every shot is kept.".into());
    }

    let status = if ln_after.iter().all(|r| !r.is_ok()) {
        RunStatus::Degenerate
    } else if agreement.as_ref().is_some_and(|a| a.status == RunStatus::Failed) {
        RunStatus::Failed
    } else {
        RunStatus::Passed
    };

    Ok(RunReport {
        scenario: cfg.name.clone(),
        status,
        model: ModelSummary {
            v_squeezed: model.v_squeezed,
            v_antisqueezed: model.v_antisqueezed,
            ln_source: model.source.log_negativity()?,
            transmittances: model.channel.transmittances(),
            probabilities: model.channel.probabilities(),
            envelope_beta: model.envelope_beta,
            tap_reflectivity: model.tap.map(|t| t.reflectivity),
        },
        ln_before,
        upper_bound,
        ln_after,
        gaussification,
        posterior_weights: PosteriorTable {
            // propagate drops zero-probability levels
            transmittances: model
                .channel
                .levels()
                .iter()
                .filter(|l| l.probability > 0.0)
                .map(|l| l.transmittance)
                .collect(),
            prior_weights: model.mixture.weights(),
            rows: posterior,
        },
        agreement,
        histograms,
        notes,
        provenance: Provenance {
            config_hash: cfg.hash(),
            engine: cfg.engine.to_string(),
            core_version: cvdistill_core::VERSION.into(),
            cli_version: env!("CARGO_PKG_VERSION").into(),
            mc: cfg.engine.mc().then(|| McProvenance {
                seed: cfg.mc.seed,
                workers: cfg.mc.workers,
                n_shots: cfg.mc.n_shots,
                sampling_model: SAMPLING_MODEL.into(),
                rng: RNG_NAME.into(),
            }),
        },
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ChannelSpec, Engine, McSpec, OutputSpec, Preset, SourceSpec, TapSpec};

    fn config(thresholds: Vec<f64>, engine: Engine) -> ExperimentConfig {
        ExperimentConfig {
            name: "t".into(),
            source: SourceSpec {
                v_squeezed: Some(2f64.powf(-0.76)),
                v_antisqueezed: Some(122.8),
                calibrate_to: None,
            },
            channel: ChannelSpec::preset(Preset::Discrete),
            tap: Some(TapSpec {
                reflectivity: 0.07,
                thresholds,
            }),
            engine,
            mc: McSpec {
                n_shots: 200_000,
                seed: 5,
                ..Default::default()
            },
            output: OutputSpec::default(),
        }
    }

    #[test]
    fn mismatched_engines_fail_agreement() {
        let cfg = config(vec![0.0, 2.0], Engine::Both);
        let model = build_model(&cfg).unwrap();
        let records = threshold_sweep(&model.mixture3, &[0.0, 2.0]);
        // Sample a source with far less anti-squeezing than the analytic one.
        let mut other = cfg.clone();
        other.source.v_antisqueezed = Some(5.0);
        let wrong = build_model(&other).unwrap();
        let sweep = run_mc_sweep(&wrong.mixture3, &cfg.mc.to_mc_config(0.0), &[0.0, 2.0]).unwrap();
        let a = agreement(&[Some(0.0), Some(2.0)], &records, &sweep.results);
        assert_eq!(a.status, RunStatus::Failed);
        assert!(a.rows.iter().all(|r| r.checked && !r.within_tolerance));

        let right = run_mc_sweep(&model.mixture3, &cfg.mc.to_mc_config(0.0), &[0.0, 2.0]).unwrap();
        assert_eq!(
            agreement(&[Some(0.0), Some(2.0)], &records, &right.results).status,
            RunStatus::Passed
        );
    }

    #[test]
    fn rare_thresholds_are_not_checked() {
        let cfg = config(vec![11.0], Engine::Both);
        let report = run_scenario(&cfg).unwrap();
        let a = report.agreement.unwrap();
        assert!(!a.rows[0].checked);
        assert_eq!(a.status, RunStatus::Passed);
    }

    #[test]
    fn degenerate_everywhere() {
        let report = run_scenario(&config(vec![300.0, 400.0], Engine::Both)).unwrap();
        assert_eq!(report.status, RunStatus::Degenerate);
        assert_eq!(report.ln_after.len(), 4);
        assert!(report.ln_after.iter().all(|r| r.error.is_some()));
    }

    #[test]
    fn partial_failure_keeps_running() {
        let report = run_scenario(&config(vec![2.0, 300.0], Engine::Analytic)).unwrap();
        assert_eq!(report.status, RunStatus::Passed);
        assert!(report.ln_after[0].is_ok());
        assert!(!report.ln_after[1].is_ok());
    }

    #[test]
    fn no_tap_keeps_everything() {
        let mut cfg = config(vec![], Engine::Both);
        cfg.tap = None;
        cfg.channel = ChannelSpec::preset(Preset::Perfect);
        let report = run_scenario(&cfg).unwrap();
        let rows: Vec<_> = report.ln_after.iter().collect();
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert_eq!(r.threshold_snu, None);
            assert_eq!(r.success_probability, Some(1.0));
        }
        assert!((report.ln_after[0].gaussian_ln.unwrap() - report.ln_before).abs() < 1e-12);
    }
}
