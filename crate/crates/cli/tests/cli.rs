//! End-to-end runs of the `cvdistill` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cvdistill_cli::artifacts::{HISTOGRAM_HEADER, SWEEP_HEADER};
use cvdistill_cli::{ExperimentConfig, RunReport};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cvdistill"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.in.json");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"{
  "name": "small",
  "source": {"v_squeezed": 0.5904, "v_antisqueezed": 122.8},
  "channel": {"preset": "discrete"},
  "tap": {"thresholds": [THRESHOLDS]},
  "engine": "ENGINE",
  "mc": {"n_shots": 1000000, "seed": 9}
}"#;

fn small(thresholds: &str, engine: &str) -> String {
    SMALL.replace("THRESHOLDS", thresholds).replace("ENGINE", engine)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn calibrate_prints_parameters() {
    let out = run(&["calibrate", "--ln-semicontinuous-premix", "-0.11"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["v_squeezed"].as_f64().unwrap() - 2f64.powf(-0.76)).abs() < 1e-15);
    let va = v["v_antisqueezed"].as_f64().unwrap();
    assert!(va > 100.0 && va < 125.0);
    assert!((v["envelope"]["ln_premix"].as_f64().unwrap() + 0.11).abs() < 1e-3);
}

#[test]
fn calibrate_rejects_unreachable_targets() {
    assert_eq!(code(&run(&["calibrate", "--ln-initial", "-0.5"])), 2);
    assert_eq!(code(&run(&["calibrate", "--ln-discrete-premix", "0.9"])), 2);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = small("4", "analytic").replace("\"engine\"", "\"colour\": 1, \"engine\"");
    let cfg = write_config(dir.path(), &bad);
    let out = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));

    let empty = write_config(dir.path(), &small("", "analytic"));
    assert_eq!(code(&run(&["run", "--config", empty.to_str().unwrap()])), 2);
    let missing = dir.path().join("absent.json");
    assert_eq!(code(&run(&["run", "--config", missing.to_str().unwrap()])), 2);
    let cfg = write_config(dir.path(), &small("4", "mc"));
    assert_eq!(
        code(&run(&["run", "--config", cfg.to_str().unwrap(), "--shots", "0"])),
        2
    );
}

#[test]
fn degenerate_selection_everywhere_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("300, 400", "both"));
    let out_dir = dir.path().join("out");
    let out = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    let report: RunReport =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert!(report.ln_after.iter().all(|r| r.error.is_some()));
}

#[test]
fn run_writes_artifacts_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), &small("0, 4", "both"));
    let out_dir = dir.path().join("out");
    let out = run(&[
        "run",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "77",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let sweep = std::fs::read_to_string(out_dir.join("sweep_analytic.csv")).unwrap();
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER);
    assert_eq!(lines.len(), 3);
    for cell in lines[1].split(',') {
        let mantissa = cell.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
        assert_eq!(mantissa.len(), 17, "{cell}");
    }
    let hist = std::fs::read_to_string(out_dir.join("histograms_threshold_4.csv")).unwrap();
    assert_eq!(hist.lines().next(), Some(HISTOGRAM_HEADER));
    assert_eq!(hist.lines().count(), 1 + 2 * 5 * 201);

    // The emitted config is the effective one: flags applied, hash stable.
    let emitted = ExperimentConfig::load(&out_dir.join("config.json")).unwrap();
    assert_eq!(emitted.mc.seed, 77);
    let report: RunReport =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(emitted.hash(), report.provenance.config_hash);
    assert_eq!(report.provenance.mc.as_ref().unwrap().seed, 77);
    let again = ExperimentConfig::from_json(&emitted.to_canonical_json()).unwrap();
    assert_eq!(again, emitted);

    // Re-running the emitted config reproduces the MC output bit for bit.
    let out2 = dir.path().join("out2");
    let status = run(&[
        "run",
        "--config",
        out_dir.join("config.json").to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_eq!(code(&status), 0);
    assert_eq!(
        std::fs::read_to_string(out_dir.join("sweep_mc.csv")).unwrap(),
        std::fs::read_to_string(out2.join("sweep_mc.csv")).unwrap()
    );

    // `report` re-renders identical artifacts from the stored report.
    let rerender = dir.path().join("rerender");
    let out = run(&[
        "report",
        "--input",
        out_dir.join("report.json").to_str().unwrap(),
        "--out",
        rerender.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    for name in [
        "sweep_analytic.csv",
        "sweep_mc.csv",
        "posterior_weights.csv",
        "histograms_threshold_4.csv",
        "report.json",
    ] {
        assert_eq!(
            std::fs::read(out_dir.join(name)).unwrap(),
            std::fs::read(rerender.join(name)).unwrap(),
            "{name}"
        );
    }
}

fn histogram_variance(csv: &str, series: &str, selection: &str) -> f64 {
    let (mut n, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[3] != series || f[4] != selection {
            continue;
        }
        let mid = 0.5 * (f[0].parse::<f64>().unwrap() + f[1].parse::<f64>().unwrap());
        let c: f64 = f[2].parse().unwrap();
        n += c;
        s1 += c * mid;
        s2 += c * mid * mid;
    }
    s2 / n - (s1 / n).powi(2)
}

#[test]
fn heralding_narrows_joint_quadrature_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small("5", "mc"));
    let out_dir = dir.path().join("out");
    assert_eq!(
        code(&run(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap()
        ])),
        0
    );
    let csv = std::fs::read_to_string(out_dir.join("histograms_threshold_5.csv")).unwrap();
    let pre = histogram_variance(&csv, "X_A+X_B", "pre");
    let post = histogram_variance(&csv, "X_A+X_B", "post");
    assert!(post < pre, "post {post} vs pre {pre}");
}

#[test]
fn shipped_configs_parse() {
    for name in ["perfect", "discrete", "semicontinuous"] {
        let cfg = ExperimentConfig::load(&configs_dir().join(format!("{name}.json"))).unwrap();
        assert_eq!(cfg.name, name);
    }
}

#[test]
fn perfect_scenario_from_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        "--config",
        configs_dir().join("perfect.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let report: RunReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let row = &report.ln_after[0];
    assert_eq!(row.threshold_snu, None);
    assert_eq!(row.success_probability, Some(1.0));
    assert!((report.ln_before - 0.76).abs() < 1e-6);
    assert!((row.gaussian_ln.unwrap() - 0.76).abs() < 1e-6);
}
