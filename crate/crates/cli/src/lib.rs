//! Driver for the cvdistill simulations: configuration, calibration of the
//! model to measured log-negativities, scenario runs over both engines and
//! emission of JSON/CSV artifacts.

pub mod artifacts;
pub mod calibrate;
pub mod config;
pub mod format;
pub mod report;
pub mod scenario;

pub use artifacts::{emit_artifacts, render_summary, ArtifactError};
pub use calibrate::{calibrate, calibrate_envelope, CalibrationError, SourceCalibration};
pub use config::{ConfigError, Engine, ExperimentConfig};
pub use report::{RunReport, RunStatus};
pub use scenario::{build_model, run_scenario, Model, ScenarioError};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    /// I/O and other runtime failures.
    pub const RUNTIME: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DEGENERATE: i32 = 3;
    pub const DISAGREEMENT: i32 = 4;
}

/// Exit code for a finished run.
pub fn exit_code(status: RunStatus) -> i32 {
    match status {
        RunStatus::Passed => exit::SUCCESS,
        RunStatus::Degenerate => exit::DEGENERATE,
        RunStatus::Failed => exit::DISAGREEMENT,
    }
}
