//! Streaming stochastic optimization problems. Each model knows how to
//! draw one observation and evaluate the per-observation gradient at a
//! point; loss values are deliberately not exposed because nothing
//! downstream needs them.
//!
//! Supported problems: scalar mean estimation, linear regression with
//! Gaussian regressors, logistic regression with +/-1 labels, and scalar
//! expectile regression (an asymmetric least-squares problem whose
//! gradient has a kink at the observation).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    dot, invert_spd, std_normal_cdf, std_normal_pdf, DenseMatrix, RngStream, DEFAULT_RIDGE,
    MAX_MODEL_DIM,
};

/// Response distribution for the expectile model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum ResponseDistribution {
    Normal { mean: f64, sd: f64 },
}

impl Default for ResponseDistribution {
    fn default() -> Self {
        ResponseDistribution::Normal { mean: 0.0, sd: 1.0 }
    }
}

/// One streaming observation: regressor `a` and response `b`. The mean
/// model fixes a = 1; the expectile model has no regressor and leaves
/// `a` empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Observation {
    pub a: Vec<f64>,
    pub b: f64,
}

/// Population curvature and gradient-noise matrices at the minimizer,
/// together with the sandwich covariance V = A^{-1} S A^{-T}.
#[derive(Clone, Debug)]
pub struct SandwichTruth {
    pub a: DenseMatrix,
    pub s: DenseMatrix,
    pub v: DenseMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Scalar location estimation: b = x* + noise, regressor fixed at 1.
    Mean { x_star: f64, noise_sigma: f64 },
    /// b = a^T x* + noise with a ~ N(0, I_d).
    Linear { x_star: Vec<f64>, noise_sigma: f64 },
    /// P(b = 1 | a) = 1/(1 + exp(-a^T x*)), labels in {-1, +1}.
    Logistic { x_star: Vec<f64> },
    /// Scalar rho-expectile of the response distribution.
    Expectile {
        rho: f64,
        #[serde(default)]
        response: ResponseDistribution,
    },
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Mean { .. } | ModelSpec::Expectile { .. } => 1,
            ModelSpec::Linear { x_star, .. } | ModelSpec::Logistic { x_star } => x_star.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::config("model dimension must be at least 1"));
        }
        if d > MAX_MODEL_DIM {
            return Err(Error::config(format!(
                "model dimension {d} exceeds the supported maximum {MAX_MODEL_DIM}"
            )));
        }
        match self {
            ModelSpec::Mean { noise_sigma, .. } | ModelSpec::Linear { noise_sigma, .. } => {
                if !(*noise_sigma >= 0.0) {
                    return Err(Error::config("noise_sigma must be nonnegative"));
                }
            }
            ModelSpec::Logistic { .. } => {}
            ModelSpec::Expectile { rho, response } => {
                if !(*rho > 0.0 && *rho < 1.0) {
                    return Err(Error::config("rho must lie in (0, 1)"));
                }
                let ResponseDistribution::Normal { sd, .. } = response;
                if !(*sd > 0.0) {
                    return Err(Error::config("response sd must be positive"));
                }
            }
        }
        Ok(())
    }

    /// The population minimizer. For the expectile model this is the
    /// rho-expectile of the response distribution, found by bisection.
    pub fn minimizer(&self) -> Vec<f64> {
        match self {
            ModelSpec::Mean { x_star, .. } => vec![*x_star],
            ModelSpec::Linear { x_star, .. } | ModelSpec::Logistic { x_star } => x_star.clone(),
            ModelSpec::Expectile { rho, response } => {
                let ResponseDistribution::Normal { mean, sd } = response;
                vec![mean + sd * expectile_of_standard_normal(*rho)]
            }
        }
    }

    /// Draw one observation into a reusable buffer.
    pub fn draw_into(&self, rng: &mut RngStream, obs: &mut Observation) {
        match self {
            ModelSpec::Mean {
                x_star,
                noise_sigma,
            } => {
                obs.a.clear();
                obs.a.push(1.0);
                obs.b = x_star + noise_sigma * rng.standard_normal();
            }
            ModelSpec::Linear {
                x_star,
                noise_sigma,
            } => {
                obs.a.clear();
                obs.a.extend((0..x_star.len()).map(|_| rng.standard_normal()));
                obs.b = dot(&obs.a, x_star) + noise_sigma * rng.standard_normal();
            }
            ModelSpec::Logistic { x_star } => {
                obs.a.clear();
                obs.a.extend((0..x_star.len()).map(|_| rng.standard_normal()));
                let p = sigmoid(dot(&obs.a, x_star));
                obs.b = if rng.uniform() < p { 1.0 } else { -1.0 };
            }
            ModelSpec::Expectile { response, .. } => {
                let ResponseDistribution::Normal { mean, sd } = response;
                obs.a.clear();
                obs.b = mean + sd * rng.standard_normal();
            }
        }
    }

    pub fn draw(&self, rng: &mut RngStream) -> Observation {
        let mut obs = Observation::default();
        self.draw_into(rng, &mut obs);
        obs
    }

    /// Per-observation gradient at x, written into `g`.
    pub fn gradient_into(&self, x: &[f64], obs: &Observation, g: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(g.len(), self.dim());
        match self {
            ModelSpec::Mean { .. } | ModelSpec::Linear { .. } => {
                let r = dot(&obs.a, x) - obs.b;
                for (gi, ai) in g.iter_mut().zip(&obs.a) {
                    *gi = ai * r;
                }
            }
            ModelSpec::Logistic { .. } => {
                let t = dot(&obs.a, x);
                let factor = -obs.b * sigmoid(-obs.b * t);
                for (gi, ai) in g.iter_mut().zip(&obs.a) {
                    *gi = ai * factor;
                }
            }
            ModelSpec::Expectile { rho, .. } => {
                // Indicator uses strict y < x; at the kink y == x the
                // residual is zero and the subgradient choice is inert.
                let y = obs.b;
                let weight = if y < x[0] { (rho - 1.0).abs() } else { *rho };
                g[0] = 2.0 * weight * (x[0] - y);
            }
        }
    }

    pub fn gradient(&self, x: &[f64], obs: &Observation) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(x, obs, &mut g);
        g
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Curvature matrix A, gradient-noise matrix S, and sandwich V at the
/// minimizer. Mean and linear models have closed forms; the logistic
/// matrices are estimated by Monte Carlo over `reps` draws (the `rng`
/// and `reps` arguments are used only there). The expectile model has
/// no usable closed form here.
pub fn sandwich_truth(model: &ModelSpec, rng: &mut RngStream, reps: u64) -> Result<SandwichTruth> {
    match model {
        ModelSpec::Mean { noise_sigma, .. } => {
            let s2 = noise_sigma * noise_sigma;
            Ok(SandwichTruth {
                a: DenseMatrix::identity(1),
                s: DenseMatrix::from_diag(&[s2]),
                v: DenseMatrix::from_diag(&[s2]),
            })
        }
        ModelSpec::Linear {
            x_star,
            noise_sigma,
        } => {
            let d = x_star.len();
            let s2 = noise_sigma * noise_sigma;
            let mut s = DenseMatrix::identity(d);
            s.scale(s2);
            Ok(SandwichTruth {
                a: DenseMatrix::identity(d),
                s: s.clone(),
                v: s,
            })
        }
        ModelSpec::Logistic { x_star } => {
            let d = x_star.len();
            assert!(reps > 0, "logistic sandwich needs Monte Carlo reps");
            let mut a_acc = DenseMatrix::zeros(d, d);
            let mut s_acc = DenseMatrix::zeros(d, d);
            let mut obs = Observation::default();
            for _ in 0..reps {
                model.draw_into(rng, &mut obs);
                let t = dot(&obs.a, x_star);
                let p = sigmoid(t);
                a_acc.add_outer(&obs.a, p * (1.0 - p));
                let factor = -obs.b * sigmoid(-obs.b * t);
                s_acc.add_outer(&obs.a, factor * factor);
            }
            a_acc.scale(1.0 / reps as f64);
            s_acc.scale(1.0 / reps as f64);
            let a_inv = invert_spd(&a_acc, DEFAULT_RIDGE)?;
            let mut v = a_inv.matmul(&s_acc).matmul(&a_inv.transpose());
            v.symmetrize();
            Ok(SandwichTruth {
                a: a_acc,
                s: s_acc,
                v,
            })
        }
        ModelSpec::Expectile { .. } => Err(Error::NotAvailable(
            "expectile sandwich matrices require the oracle Monte Carlo path".into(),
        )),
    }
}

/// rho-expectile of the standard normal, i.e. the root of
/// rho E(y - x)_+ = (1 - rho) E(x - y)_+ for y ~ N(0,1).
pub fn expectile_of_standard_normal(rho: f64) -> f64 {
    assert!(rho > 0.0 && rho < 1.0);
    let g = |x: f64| {
        let phi = std_normal_pdf(x);
        let cap = std_normal_cdf(x);
        let upper = phi - x * (1.0 - cap);
        let lower = phi + x * cap;
        rho * upper - (1.0 - rho) * lower
    };
    // g is strictly decreasing with a sign change well inside (-12, 12).
    let (mut lo, mut hi) = (-12.0f64, 12.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
