//! Simulation of continuous-variable entanglement distillation.
//!
//! A two-mode Gaussian entangled state is sent through a channel whose
//! transmittance fluctuates from shot to shot, which leaves a non-Gaussian
//! mixture of Gaussian states. A weak tap on the transmitted beam followed by
//! a threshold on its homodyne outcome heralds the better-transmitted shots
//! and raises the Gaussian logarithmic negativity of the kept ensemble.
//!
//! The crate has two engines for the heralded moments: [`distiller`] computes
//! them in closed form, [`montecarlo`] samples them shot by shot.

pub mod channel;
pub mod distiller;
pub mod error;
pub mod gaussian;
pub mod montecarlo;
pub mod tail;

pub use channel::{
    discrete_channel, envelope_exponential, envelope_exponential_on, pooled_cm, propagate, semicontinuous_levels,
    semicontinuous_levels_n, upper_bound_ln, ChannelLevel, FluctuatingChannel, MixtureState,
};
pub use distiller::{
    attach_tap, distilled_gln, gaussification_metrics, herald, joint_quadrature_variances, threshold_sweep,
    DistilledEnsemble, GaussificationMetrics, SweepPoint, SweepRecord, TapConfig,
};
pub use error::{Error, Result};
pub use gaussian::{
    gaussian_log_negativity, log_negativity, make_kerr_entangled, pt_trace_norm, symplectic_eigenvalues,
    validate_physical, GaussianState, SymplecticEigenvalues,
};
pub use montecarlo::{run_mc, run_mc_sweep, McConfig, McError, McResult, McSweep};
pub use tail::gaussian_tail;

/// Version of this crate, recorded in run provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
