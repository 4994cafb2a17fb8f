use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cvdistill_cli::calibrate::{calibrate, calibrate_envelope};
use cvdistill_cli::format::to_json_string;
use cvdistill_cli::{
    emit_artifacts, exit, exit_code, render_summary, run_scenario, Engine, ExperimentConfig, RunReport,
};
use cvdistill_core::channel::{DEFAULT_P_FULL, SEMICONTINUOUS_LEVEL_COUNT};
use cvdistill_core::gaussian::make_kerr_entangled;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "cvdistill",
    version,
    about = "Entanglement distillation over fluctuating-loss channels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the source variances (and optionally the channel envelope) to
    /// target log-negativities and print them as JSON.
    Calibrate {
        #[arg(long, default_value_t = 0.76, allow_hyphen_values = true)]
        ln_initial: f64,
        #[arg(long, default_value_t = -1.63, allow_hyphen_values = true)]
        ln_discrete_premix: f64,
        /// Also fit the semi-continuous envelope to this pooled LN.
        #[arg(long, allow_hyphen_values = true)]
        ln_semicontinuous_premix: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_P_FULL)]
        p_full: f64,
        #[arg(long, default_value_t = SEMICONTINUOUS_LEVEL_COUNT)]
        level_count: usize,
    },
    /// Run a scenario and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        engine: Option<Engine>,
        #[arg(long)]
        shots: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render artifacts from a stored report.json.
    Report {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the directory holding the report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct CalibrationOutput {
    v_squeezed: f64,
    v_antisqueezed: f64,
    ln_discrete_premix: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    envelope: Option<EnvelopeOutput>,
}

#[derive(Serialize)]
struct EnvelopeOutput {
    beta: f64,
    p_full: f64,
    level_count: usize,
    ln_premix: f64,
}

fn fail(code: i32, msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    code
}

fn cmd_calibrate(
    ln_initial: f64,
    ln_discrete_premix: f64,
    ln_semi: Option<f64>,
    p_full: f64,
    level_count: usize,
) -> i32 {
    let cal = match calibrate(ln_initial, ln_discrete_premix) {
        Ok(c) => c,
        Err(e) => return fail(exit::CONFIG, e),
    };
    let envelope = match ln_semi {
        None => None,
        Some(target) => {
            let fit = make_kerr_entangled(cal.v_squeezed, cal.v_antisqueezed)
                .map_err(Into::into)
                .and_then(|st| calibrate_envelope(&st, p_full, target, level_count));
            match fit {
                Ok(f) => Some(EnvelopeOutput {
                    beta: f.beta,
                    p_full,
                    level_count,
                    ln_premix: f.ln_premix,
                }),
                Err(e) => return fail(exit::CONFIG, e),
            }
        }
    };
    print!(
        "{}",
        to_json_string(&CalibrationOutput {
            v_squeezed: cal.v_squeezed,
            v_antisqueezed: cal.v_antisqueezed,
            ln_discrete_premix: cal.ln_discrete_premix,
            envelope,
        })
    );
    exit::SUCCESS
}

fn cmd_run(
    config: PathBuf,
    engine: Option<Engine>,
    shots: Option<u64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> i32 {
    let mut cfg = match ExperimentConfig::load(&config) {
        Ok(c) => c,
        Err(e) => return fail(exit::CONFIG, e),
    };
    // Flags override the file; the effective config is what gets hashed and
    // written next to the report.
    if let Some(e) = engine {
        cfg.engine = e;
    }
    if let Some(n) = shots {
        cfg.mc.n_shots = n;
    }
    if let Some(s) = seed {
        cfg.mc.seed = s;
    }
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    let report = match run_scenario(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(exit::CONFIG, e),
    };
    if let Err(e) = emit_artifacts(&report, &cfg.output.dir, &cfg.output) {
        return fail(exit::RUNTIME, e);
    }
    print!("{}", render_summary(&report));
    exit_code(report.status)
}

fn cmd_report(input: PathBuf, out: Option<PathBuf>) -> i32 {
    let text = match std::fs::read_to_string(&input) {
        Ok(t) => t,
        Err(e) => return fail(exit::RUNTIME, format_args!("cannot read {}: {e}", input.display())),
    };
    let report: RunReport = match serde_json::from_str(&text) {
        Ok(r) => r,
        Err(e) => return fail(exit::CONFIG, format_args!("cannot parse {}: {e}", input.display())),
    };
    let dir = out.unwrap_or_else(|| input.parent().map(PathBuf::from).unwrap_or_default());
    if let Err(e) = emit_artifacts(&report, &dir, &report.config.output) {
        return fail(exit::RUNTIME, e);
    }
    print!("{}", render_summary(&report));
    exit_code(report.status)
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Calibrate {
            ln_initial,
            ln_discrete_premix,
            ln_semicontinuous_premix,
            p_full,
            level_count,
        } => cmd_calibrate(
            ln_initial,
            ln_discrete_premix,
            ln_semicontinuous_premix,
            p_full,
            level_count,
        ),
        Command::Run {
            config,
            engine,
            shots,
            seed,
            out,
        } => cmd_run(config, engine, shots, seed, out),
        Command::Report { input, out } => cmd_report(input, out),
    };
    ExitCode::from(code as u8)
}
