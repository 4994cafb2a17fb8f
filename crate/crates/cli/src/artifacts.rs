//! Flat-file artifacts of a run: JSON report and config, CSV curves,
//! histograms and posterior weights, and a plain-text summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::OutputSpec;
use crate::format::{fmt_f64, to_json_string};
use crate::report::{HistogramSet, LnRow, RunReport};
use crate::scenario::label;

pub const SWEEP_HEADER: &str = "threshold_snu,success_probability,gaussian_ln,weight_entropy";
pub const HISTOGRAM_HEADER: &str = "bin_left,bin_right,count,series,selection";
pub const POSTERIOR_HEADER: &str = "threshold_snu,engine,level,transmittance,prior_weight,posterior_weight";

#[derive(Debug, Error)]
#[error("cannot write {path}: {source}")]
pub struct ArtifactError {
    pub path: PathBuf,
    pub source: std::io::Error,
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf, ArtifactError> {
    fs::write(&path, contents).map_err(|source| ArtifactError {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// No threshold means nothing is rejected, i.e. a threshold of minus infinity.
fn threshold_cell(th: Option<f64>) -> String {
    fmt_f64(th.unwrap_or(f64::NEG_INFINITY))
}

/// Sweep curve for one engine. Failed thresholds keep their row with empty
/// cells.
pub fn sweep_csv<'a>(rows: impl IntoIterator<Item = &'a LnRow>) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            threshold_cell(r.threshold_snu),
            opt(r.success_probability),
            opt(r.gaussian_ln),
            opt(r.weight_entropy)
        );
    }
    out
}

/// Pre- and post-selection marginals at one threshold.
pub fn histogram_csv(set: &HistogramSet, post_index: usize) -> String {
    let edges = set.edges();
    let mut out = String::from(HISTOGRAM_HEADER);
    out.push('\n');
    let mut emit = |series: &str, counts: &[u64], selection: &str| {
        for (k, c) in counts.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{c},{series},{selection}",
                fmt_f64(edges[k]),
                fmt_f64(edges[k + 1])
            );
        }
    };
    for (series, counts) in &set.pre {
        emit(series, counts, "pre");
    }
    for (series, counts) in &set.post[post_index].series {
        emit(series, counts, "post");
    }
    out
}

pub fn posterior_csv(report: &RunReport) -> String {
    let table = &report.posterior_weights;
    let mut out = String::from(POSTERIOR_HEADER);
    out.push('\n');
    for row in &table.rows {
        for (i, w) in row.weights.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{i},{},{},{}",
                threshold_cell(row.threshold_snu),
                row.engine,
                fmt_f64(table.transmittances[i]),
                fmt_f64(table.prior_weights[i]),
                fmt_f64(*w)
            );
        }
    }
    out
}

fn file_label(th: Option<f64>) -> String {
    match th {
        Some(t) => format!("{t}"),
        None => "none".into(),
    }
}

/// Table-style plain-text digest.
pub fn render_summary(report: &RunReport) -> String {
    let mut s = String::new();
    let m = &report.model;
    let _ = writeln!(s, "scenario      {}", report.scenario);
    let _ = writeln!(s, "status        {:?}", report.status);
    let _ = writeln!(s, "V_s, V_a      {:.6} SNU, {:.6} SNU", m.v_squeezed, m.v_antisqueezed);
    if let Some(b) = m.envelope_beta {
        let _ = writeln!(s, "envelope beta {b:.6}");
    }
    let _ = writeln!(s, "LN source     {:.4}", m.ln_source);
    let _ = writeln!(s, "LN before     {:.4}", report.ln_before);
    let _ = writeln!(s, "upper bound   {:.4}", report.upper_bound);
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<9} {:>10} {:>12} {:>10} {:>10} {:>9}",
        "engine", "threshold", "success", "LN", "LN se", "entropy"
    );
    for r in &report.ln_after {
        let f = |x: Option<f64>, w: usize, p: usize| {
            x.map(|v| format!("{v:>w$.p$}"))
                .unwrap_or_else(|| format!("{:>w$}", "-"))
        };
        let g = |x: Option<f64>| {
            x.map(|v| format!("{v:>12.4e}"))
                .unwrap_or_else(|| format!("{:>12}", "-"))
        };
        let _ = write!(
            s,
            "{:<9} {:>10} {} {} {} {}",
            r.engine,
            label(r.threshold_snu).trim_end_matches(" SNU"),
            g(r.success_probability),
            f(r.gaussian_ln, 10, 4),
            f(r.gaussian_ln_se, 10, 4),
            f(r.weight_entropy, 9, 4),
        );
        if let Some(e) = &r.error {
            let _ = write!(s, "  ({e})");
        }
        s.push('\n');
    }
    if let Some(a) = &report.agreement {
        let checked = a.rows.iter().filter(|r| r.checked).count();
        let bad = a.rows.iter().filter(|r| r.checked && !r.within_tolerance).count();
        let _ = writeln!(
            s,
            "\nagreement     {:?}: {bad} of {checked} checked thresholds beyond {} standard errors",
            a.status, a.tolerance_se
        );
    }
    for n in &report.notes {
        let _ = writeln!(s, "note: {n}");
    }
    let _ = writeln!(s, "config hash   {}", report.provenance.config_hash);
    s
}

/// Writes every artifact of `report` into `dir`, creating it if needed.
pub fn emit_artifacts(report: &RunReport, dir: &Path, flags: &OutputSpec) -> Result<Vec<PathBuf>, ArtifactError> {
    fs::create_dir_all(dir).map_err(|source| ArtifactError {
        path: dir.to_owned(),
        source,
    })?;
    let mut written = vec![
        write(dir.join("report.json"), &to_json_string(report))?,
        write(dir.join("config.json"), &report.config.to_canonical_json())?,
        write(dir.join("summary.txt"), &render_summary(report))?,
    ];
    for engine in ["analytic", "mc"] {
        if report.rows(engine).next().is_some() {
            written.push(write(
                dir.join(format!("sweep_{engine}.csv")),
                &sweep_csv(report.rows(engine)),
            )?);
        }
    }
    if flags.posterior_tables {
        written.push(write(dir.join("posterior_weights.csv"), &posterior_csv(report))?);
    }
    if flags.histograms {
        if let Some(set) = &report.histograms {
            for (k, post) in set.post.iter().enumerate() {
                let name = format!("histograms_threshold_{}.csv", file_label(post.threshold_snu));
                written.push(write(dir.join(name), &histogram_csv(set, k))?);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(th: f64) -> LnRow {
        LnRow {
            threshold_snu: Some(th),
            engine: "analytic".into(),
            gaussian_ln: Some(0.5),
            gaussian_ln_se: None,
            success_probability: Some(1e-3),
            success_probability_se: None,
            kept_count: None,
            weight_entropy: Some(0.25),
            error: None,
        }
    }

    #[test]
    fn empty_sweep_is_header_only() {
        assert_eq!(sweep_csv(&Vec::<LnRow>::new()), format!("{SWEEP_HEADER}\n"));
    }

    #[test]
    fn one_threshold_one_row() {
        let csv = sweep_csv(&[row(9.0)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[1],
            "9.0000000000000000e0,1.0000000000000000e-3,5.0000000000000000e-1,2.5000000000000000e-1"
        );
    }

    #[test]
    fn failed_threshold_keeps_row() {
        let bad = LnRow::failed(Some(30.0), "analytic", "degenerate".into());
        let csv = sweep_csv(&[bad]);
        assert_eq!(csv.lines().nth(1), Some("3.0000000000000000e1,,,"));
        let free = LnRow {
            threshold_snu: None,
            ..row(0.0)
        };
        assert!(sweep_csv(&[free]).lines().nth(1).unwrap().starts_with("-inf,"));
    }
}
