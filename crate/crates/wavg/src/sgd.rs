//! The driving recursion: x_i = x_{i-1} - eta_i * grad f(x_{i-1}, xi_i)
//! with polynomially decaying step sizes eta_i = eta * i^(-alpha).
//!
//! The trajectory runner is single-pass; consumers subscribe as
//! [`StreamSink`]s and see every iterate exactly once, in order.

use crate::error::{Error, Result};
use crate::models::{ModelSpec, Observation};
use crate::numerics::RngStream;

/// Step-size schedule eta_i = eta * i^(-alpha), with an optional override
/// for the first step (used by the closed-form weight constructions,
/// which require eta_1 = 1/a_1^2).
///
/// The asymptotic theory wants alpha in (0.5, 1); the schedule itself
/// accepts any alpha in (0, 1) so that boundary cases remain expressible,
/// and the CLI enforces the theoretical range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSchedule {
    pub eta: f64,
    pub alpha: f64,
    pub override_first: Option<f64>,
}

impl StepSchedule {
    pub fn new(eta: f64, alpha: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::config("eta must be positive"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::config("alpha must lie in (0, 1)"));
        }
        Ok(StepSchedule {
            eta,
            alpha,
            override_first: None,
        })
    }

    pub fn with_override_first(mut self, eta1: f64) -> Self {
        self.override_first = Some(eta1);
        self
    }

    /// eta_i for step i >= 1.
    pub fn step_size(&self, i: u64) -> f64 {
        debug_assert!(i >= 1);
        if i == 1 {
            if let Some(eta1) = self.override_first {
                return eta1;
            }
        }
        self.eta * (i as f64).powf(-self.alpha)
    }
}

/// Current iterate, the previous iterate, and the step counter.
#[derive(Clone, Debug)]
pub struct SgdState {
    pub x: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub i: u64,
}

impl SgdState {
    pub fn new(x0: Vec<f64>) -> Self {
        SgdState {
            x_prev: x0.clone(),
            x: x0,
            i: 0,
        }
    }
}

/// One SGD step using the supplied observation; `g` is scratch space of
/// model dimension. Fails with [`Error::NonFinite`] the moment an iterate
/// leaves the finite range, so divergence surfaces instead of poisoning
/// downstream averages.
pub fn sgd_step(
    state: &mut SgdState,
    schedule: &StepSchedule,
    model: &ModelSpec,
    obs: &Observation,
    g: &mut [f64],
) -> Result<()> {
    let i = state.i + 1;
    let eta = schedule.step_size(i);
    model.gradient_into(&state.x, obs, g);
    state.x_prev.copy_from_slice(&state.x);
    let mut finite = true;
    for (xj, gj) in state.x.iter_mut().zip(g.iter()) {
        *xj -= eta * gj;
        finite &= xj.is_finite();
    }
    if !finite {
        return Err(Error::NonFinite { step: i });
    }
    state.i = i;
    Ok(())
}

/// Anything that consumes the iterate stream: averaging schemes, the
/// random-scaling accumulator, covariance recorders.
pub trait StreamSink {
    /// Called once per step with the post-step iterate x_i.
    fn accept(&mut self, i: u64, x: &[f64]) -> Result<()>;

    /// Called once per step, before the update, with the pre-step iterate
    /// x_{i-1} and the observation xi_i. Most sinks ignore this; plug-in
    /// covariance estimation needs it.
    fn observe(&mut self, _i: u64, _x_prev: &[f64], _obs: &Observation) -> Result<()> {
        Ok(())
    }
}

/// Run n SGD steps from x0, feeding every sink in order. Returns the
/// final state.
pub fn run_trajectory(
    model: &ModelSpec,
    schedule: &StepSchedule,
    x0: &[f64],
    n: u64,
    rng: &mut RngStream,
    sinks: &mut [&mut dyn StreamSink],
) -> Result<SgdState> {
    assert_eq!(x0.len(), model.dim(), "x0 dimension mismatch");
    let mut state = SgdState::new(x0.to_vec());
    let mut obs = Observation::default();
    let mut g = vec![0.0; model.dim()];
    for i in 1..=n {
        model.draw_into(rng, &mut obs);
        for sink in sinks.iter_mut() {
            sink.observe(i, &state.x, &obs)?;
        }
        sgd_step(&mut state, schedule, model, &obs, &mut g)?;
        for sink in sinks.iter_mut() {
            sink.accept(i, &state.x)?;
        }
    }
    Ok(state)
}
