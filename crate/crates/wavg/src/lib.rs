//! Weighted-averaged SGD estimators with streaming confidence intervals.
//!
//! SGD iterates with step sizes eta_i = eta i^(-alpha) are noisy; the
//! classical fix is to average them. This crate treats the averaging
//! weights as a design choice: the running mean, polynomially decaying
//! weights, suffix windows, an online approximation of suffix windows,
//! an adaptive scheme whose asymptotic variance matches the best
//! uniform average exactly, and arbitrary explicit weights. Every
//! scheme runs in one pass over the iterate stream and agrees with its
//! explicit weight vector to roundoff.
//!
//! On top of the point estimators sit two interval constructions that
//! also run in one pass: a plug-in sandwich estimate of the asymptotic
//! covariance with normal quantiles, and random-scaling studentization
//! whose critical values come from a Brownian functional tabulated in a
//! shipped data file. A variance prefactor w, scheme dependent with
//! closed form where one exists, connects the scheme to the interval
//! width.
//!
//! For the scalar linear model the minimum-MSE weights are available in
//! closed form; for models without one (expectile regression) a
//! Monte-Carlo covariance oracle feeds the generic solution. The
//! `harness` module and the `wavg` binary wrap all of this in
//! reproducible CSV experiments with counter-based RNG streams, so
//! replication r of an experiment is the same trajectory no matter how
//! many workers run it.
//!
//! ```
//! use wavg::averaging::{AveragerState, SchemeConfig};
//! use wavg::models::ModelSpec;
//! use wavg::numerics::RngStream;
//! use wavg::sgd::{run_trajectory, StepSchedule, StreamSink};
//!
//! let model = ModelSpec::Mean { x_star: 2.0, noise_sigma: 1.0 };
//! let schedule = StepSchedule::new(1.0, 0.505)?;
//! let scheme = SchemeConfig::Adaptive { alpha: 0.505 };
//! let mut avg = AveragerState::new(&scheme, 1, Some(10_000))?;
//! let mut rng = RngStream::new(7, 0);
//! let mut sinks: Vec<&mut dyn StreamSink> = vec![&mut avg];
//! run_trajectory(&model, &schedule, &[0.0], 10_000, &mut rng, &mut sinks)?;
//! let estimate = avg.estimate()?;
//! assert!((estimate[0] - 2.0).abs() < 0.1);
//! # Ok::<(), wavg::error::Error>(())
//! ```

pub mod averaging;
pub mod error;
pub mod guide;
pub mod harness;
pub mod inference;
pub mod models;
pub mod numerics;
pub mod sgd;
pub mod weights;

pub use averaging::{
    check_theorem2, materialize_weights, parse_scheme, prefactor, prefactor_numeric,
    AveragerState, ConditionReport, SchemeConfig, WeightVector,
};
pub use error::{Error, Result};
pub use harness::{
    config_hash, run_coverage, run_mse, run_normality, run_oracle_weights, run_weights_compare,
    CoverageMethod, Experiment, ExperimentConfig,
};
pub use inference::{
    plugin_interval, rs_interval, simulate_critical_values, simulate_pivots,
    CriticalValueTable, Interval, PluginState, RandomScalingState,
};
pub use models::{ModelSpec, Observation};
pub use numerics::{DenseMatrix, RngStream};
pub use sgd::{run_trajectory, sgd_step, SgdState, StepSchedule, StreamSink};
pub use weights::{
    blue_weights, closed_form_weights, closed_form_weights_with_init, estimate_sigma,
    oracle_weights_expectile, theta_diag_check, CovarianceEstimate, WeightSolution,
};
