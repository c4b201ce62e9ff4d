//! Best-linear-unbiased weights over the iterate covariance.
//!
//! For the scalar linear model the SGD errors form a time-varying AR(1)
//! sequence, so the covariance Sigma of (x_1..x_n) has a closed-form
//! whitening: Theta Sigma Theta^T = D with Theta lower bidiagonal and D
//! diagonal. That gives closed-form minimum-MSE weights. For models
//! without the closed form (expectile), Sigma is estimated by Monte
//! Carlo and the weights come from the generic solution
//! c = Sigma^-1 1 / (1^T Sigma^-1 1).
//!
//! Regressors are treated as fixed: `estimate_sigma` draws one regressor
//! sequence for the linear model and holds it across replications, so
//! the estimate targets the same conditional covariance the closed form
//! describes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{ModelSpec, Observation};
use crate::numerics::{dot, invert_spd, DenseMatrix, RngStream};
use crate::sgd::{sgd_step, SgdState, StepSchedule};

/// Monte-Carlo estimate of the iterate covariance, entry (i,j) equal to
/// the average of (x_i - x*)^T (x_j - x*) over replications. Iterates
/// start at the minimizer, so no initialization term enters.
#[derive(Clone, Debug)]
pub struct CovarianceEstimate {
    pub n: usize,
    pub sigma_hat: DenseMatrix,
    pub reps: u64,
}

/// Averaging weights plus the mean squared error they predict under the
/// covariance they were derived from.
#[derive(Clone, Debug)]
pub struct WeightSolution {
    /// Length n, or n+1 when an initialization weight c_0 leads.
    pub c: Vec<f64>,
    pub predicted_mse: f64,
}

impl WeightSolution {
    fn checked(c: Vec<f64>, predicted_mse: f64) -> Self {
        debug_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        WeightSolution { c, predicted_mse }
    }
}

/// Fraction of the horizon used by the two-step pilot pass.
const PILOT_FRACTION: f64 = 0.1;

/// Reserved derivation tag for the fixed regressor sequence; replication
/// tags are their rep index, which never collides with this.
const REGRESSOR_TAG: u64 = u64::MAX;

/// Replications per accumulation chunk. Fixed so that the reduction
/// order (and therefore the output bits) does not depend on the worker
/// count.
const SIGMA_CHUNK: u64 = 1024;

/// General minimum-MSE weights c = Sigma^-1 1 / (1^T Sigma^-1 1).
///
/// `ridge` is the diagonal loading handed to the SPD inverse; it is
/// only applied when the factorization actually needs it. None picks
/// 1e-10 * trace / n, which scales with the matrix, keeping the result
/// invariant under Sigma -> k Sigma.
pub fn blue_weights(sigma: &CovarianceEstimate, ridge: Option<f64>) -> Result<WeightSolution> {
    let n = sigma.n;
    assert!(n >= 1 && sigma.sigma_hat.nrows() == n && sigma.sigma_hat.ncols() == n);
    let ridge = ridge.unwrap_or_else(|| {
        let trace: f64 = (0..n).map(|i| sigma.sigma_hat[(i, i)]).sum();
        1e-10 * trace / n as f64
    });
    let inv = invert_spd(&sigma.sigma_hat, ridge)?;
    let mut c = vec![0.0; n];
    for (i, ci) in c.iter_mut().enumerate() {
        *ci = inv.row(i).iter().sum();
    }
    let denom: f64 = c.iter().sum();
    if !(denom.is_finite() && denom > 0.0) {
        return Err(Error::NotSpd { min_pivot: denom });
    }
    for ci in &mut c {
        *ci /= denom;
    }
    Ok(WeightSolution::checked(c, 1.0 / denom))
}

fn check_a_sq(a_sq: &[f64]) -> Result<()> {
    for (i, v) in a_sq.iter().enumerate() {
        if !(*v > 0.0 && v.is_finite()) {
            return Err(Error::ZeroRegressor {
                index: i + 1,
                value: *v,
            });
        }
    }
    Ok(())
}

/// Closed-form minimum-MSE weights for the scalar linear model with
/// fixed regressors a_i (passed squared) and step sizes eta_i, under
/// the reduction eta_1 = 1/a_1^2 that removes the initialization term:
///
///   c_i = (1/eta_i + a_{i+1}^2 - 1/eta_{i+1}) / S_n  for i < n,
///   c_n = 1 / (eta_n S_n),        S_n = sum a_i^2.
///
/// The numerators telescope, so sum c = 1 identically. The predicted
/// MSE is 1/S_n in units of the noise variance (sigma = 1 convention);
/// scale by sigma^2 for other noise levels.
pub fn closed_form_weights(a_sq: &[f64], schedule: &StepSchedule) -> Result<WeightSolution> {
    let n = a_sq.len();
    assert!(n >= 1);
    check_a_sq(a_sq)?;
    let eta1 = schedule.step_size(1);
    if (eta1 * a_sq[0] - 1.0).abs() > 1e-12 {
        return Err(Error::config(format!(
            "closed-form weights need eta_1 = 1/a_1^2; got eta_1 = {eta1}, a_1^2 = {}",
            a_sq[0]
        )));
    }
    let s_n: f64 = a_sq.iter().sum();
    let mut c = vec![0.0; n];
    for i in 1..n {
        let inv_i = 1.0 / schedule.step_size(i as u64);
        let inv_next = 1.0 / schedule.step_size(i as u64 + 1);
        c[i - 1] = (inv_i + a_sq[i] - inv_next) / s_n;
    }
    c[n - 1] = 1.0 / (schedule.step_size(n as u64) * s_n);
    Ok(WeightSolution::checked(c, 1.0 / s_n))
}

/// Closed-form weights including the initialization term, for general
/// eta_1. Returns n+1 weights, c[0] multiplying x_0:
///
///   c_0 = (r + a_1^2 - 1/eta_1) / S_n,   r = (sigma/(x_0 - x*))^2,
///   c_i as in `closed_form_weights`,     S_n = r + sum a_i^2.
///
/// `init_error` is x_0 - x*. The predicted MSE is sigma^2 / S_n.
pub fn closed_form_weights_with_init(
    a_sq: &[f64],
    schedule: &StepSchedule,
    sigma: f64,
    init_error: f64,
) -> Result<WeightSolution> {
    let n = a_sq.len();
    assert!(n >= 1);
    assert!(sigma > 0.0 && sigma.is_finite());
    check_a_sq(a_sq)?;
    if init_error == 0.0 || !init_error.is_finite() {
        return Err(Error::ZeroInitError);
    }
    let r = (sigma / init_error) * (sigma / init_error);
    let s_n: f64 = r + a_sq.iter().sum::<f64>();
    let mut c = vec![0.0; n + 1];
    c[0] = (r + a_sq[0] - 1.0 / schedule.step_size(1)) / s_n;
    for i in 1..n {
        let inv_i = 1.0 / schedule.step_size(i as u64);
        let inv_next = 1.0 / schedule.step_size(i as u64 + 1);
        c[i] = (inv_i + a_sq[i] - inv_next) / s_n;
    }
    c[n] = 1.0 / (schedule.step_size(n as u64) * s_n);
    Ok(WeightSolution::checked(c, sigma * sigma / s_n))
}

/// The fixed regressor sequence `estimate_sigma` uses for a linear
/// model under a given rng. Exposed so callers can recover the realized
/// a_i feeding the closed form.
pub fn fixed_regressors(model: &ModelSpec, n: u64, rng: &RngStream) -> Option<Vec<Vec<f64>>> {
    match model {
        ModelSpec::Linear { x_star, .. } => {
            let mut reg_rng = rng.derive(REGRESSOR_TAG);
            let d = x_star.len();
            Some(
                (0..n)
                    .map(|_| (0..d).map(|_| reg_rng.standard_normal()).collect())
                    .collect(),
            )
        }
        _ => None,
    }
}

/// Monte-Carlo iterate covariance over `reps` trajectories of length n
/// started at the minimizer. Linear models hold one regressor sequence
/// fixed across replications; every other model redraws observations.
///
/// Chunks of replications accumulate independently and are reduced in
/// chunk order, so the result is identical for any worker count.
pub fn estimate_sigma(
    model: &ModelSpec,
    schedule: &StepSchedule,
    n: u64,
    reps: u64,
    rng: &RngStream,
) -> Result<CovarianceEstimate> {
    assert!(n >= 1 && n <= 500, "dense n x n storage caps n at 500");
    assert!(reps >= 1_000);
    model.validate()?;
    let x_star = model.minimizer();
    let d = model.dim();
    let nu = n as usize;
    let fixed_a = fixed_regressors(model, n, rng);
    let noise_sigma = match model {
        ModelSpec::Linear { noise_sigma, .. } => *noise_sigma,
        _ => 0.0,
    };

    let tri_len = nu * (nu + 1) / 2;
    let n_chunks = reps.div_ceil(SIGMA_CHUNK);
    let partials: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * SIGMA_CHUNK;
            let hi = (lo + SIGMA_CHUNK).min(reps);
            let mut acc = vec![0.0; tri_len];
            // Chunk-local observation templates over the fixed regressors.
            let mut obs_template: Option<Vec<Observation>> = fixed_a.as_ref().map(|seq| {
                seq.iter()
                    .map(|a| Observation {
                        a: a.clone(),
                        b: 0.0,
                    })
                    .collect()
            });
            let mut errs = vec![0.0; nu * d];
            let mut g = vec![0.0; d];
            let mut obs_fresh = Observation {
                a: Vec::new(),
                b: 0.0,
            };
            for rep in lo..hi {
                let mut rep_rng = rng.derive(rep);
                let mut state = SgdState::new(x_star.clone());
                for i in 1..=n {
                    let obs: &Observation = match obs_template.as_mut() {
                        Some(tpl) => {
                            let o = &mut tpl[i as usize - 1];
                            o.b = dot(&o.a, &x_star)
                                + noise_sigma * rep_rng.standard_normal();
                            o
                        }
                        None => {
                            model.draw_into(&mut rep_rng, &mut obs_fresh);
                            &obs_fresh
                        }
                    };
                    sgd_step(&mut state, schedule, model, obs, &mut g)
                        .expect("sigma trajectory diverged");
                    let row = (i as usize - 1) * d;
                    for (k, e) in errs[row..row + d].iter_mut().enumerate() {
                        *e = state.x[k] - x_star[k];
                    }
                }
                let mut idx = 0;
                for i in 0..nu {
                    let ei = &errs[i * d..(i + 1) * d];
                    for j in i..nu {
                        acc[idx] += dot(ei, &errs[j * d..(j + 1) * d]);
                        idx += 1;
                    }
                }
            }
            acc
        })
        .collect();

    let mut tri = vec![0.0; tri_len];
    for part in &partials {
        for (t, p) in tri.iter_mut().zip(part) {
            *t += p;
        }
    }
    let mut sigma_hat = DenseMatrix::zeros(nu, nu);
    let mut idx = 0;
    let scale = 1.0 / reps as f64;
    for i in 0..nu {
        for j in i..nu {
            let v = tri[idx] * scale;
            sigma_hat[(i, j)] = v;
            sigma_hat[(j, i)] = v;
            idx += 1;
        }
    }
    Ok(CovarianceEstimate {
        n: nu,
        sigma_hat,
        reps,
    })
}

/// Whitening residual of a covariance estimate: builds the bidiagonal
/// Theta (subdiagonal eta_i a_i^2 - 1) and D = diag(sigma^2 a_i^2
/// eta_i^2), and returns max |offdiag(Theta Sigma_hat Theta^T)| divided
/// by min diag(D). Exact covariances drive this to roundoff; Monte
/// Carlo estimates leave their noise floor.
pub fn theta_diag_check(
    a_sq: &[f64],
    schedule: &StepSchedule,
    sigma_est: &CovarianceEstimate,
    noise_sigma: f64,
) -> f64 {
    let n = sigma_est.n;
    assert_eq!(a_sq.len(), n);
    assert!(noise_sigma > 0.0);
    if n == 1 {
        return 0.0;
    }
    // l[i] is the subdiagonal entry on row i+1 (0-based); row 0 has none.
    let l: Vec<f64> = (0..n)
        .map(|i| {
            if i == 0 {
                0.0
            } else {
                schedule.step_size(i as u64 + 1) * a_sq[i] - 1.0
            }
        })
        .collect();
    let s = &sigma_est.sigma_hat;
    let at = |i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 {
            0.0
        } else {
            s[(i as usize, j as usize)]
        }
    };
    let mut max_off = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            let (ii, jj) = (i as isize, j as isize);
            let v = at(ii, jj) + l[i] * at(ii - 1, jj) + l[j] * at(ii, jj - 1)
                + l[i] * l[j] * at(ii - 1, jj - 1);
            max_off = max_off.max(v.abs());
        }
    }
    let min_d = (0..n)
        .map(|i| {
            let eta = schedule.step_size(i as u64 + 1);
            noise_sigma * noise_sigma * a_sq[i] * eta * eta
        })
        .fold(f64::INFINITY, f64::min);
    max_off / min_d
}

/// Monte-Carlo optimal weights for the expectile model: estimate the
/// iterate covariance, then solve for the generic minimum-MSE weights.
pub fn oracle_weights_expectile(
    rho: f64,
    schedule: &StepSchedule,
    n: u64,
    reps: u64,
    rng: &RngStream,
) -> Result<WeightSolution> {
    assert!(n <= 200);
    let model = ModelSpec::Expectile {
        rho,
        response: Default::default(),
    };
    let sigma = estimate_sigma(&model, schedule, n, reps, rng)?;
    blue_weights(&sigma, None)
}

/// Two-step pilot estimate of the quantities the initialization weight
/// needs: the uniform average of the first floor(len/10) iterates (at
/// least two) estimates x*, the residual spread of the matching
/// observations estimates sigma. Returns (sigma_hat, x0 - x*_hat).
pub fn two_step_init(x0: f64, iterates: &[f64], bs: &[f64]) -> Result<(f64, f64)> {
    assert_eq!(iterates.len(), bs.len());
    let k = ((iterates.len() as f64 * PILOT_FRACTION) as usize).max(2);
    if iterates.len() < k {
        return Err(Error::InsufficientBuffer {
            have: iterates.len(),
            need: k,
        });
    }
    let x_hat = iterates[..k].iter().sum::<f64>() / k as f64;
    let var = bs[..k].iter().map(|b| (b - x_hat) * (b - x_hat)).sum::<f64>()
        / (k - 1) as f64;
    Ok((var.sqrt(), x0 - x_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::{materialize_weights, AveragerState, SchemeConfig};
    use crate::sgd::run_trajectory;
    use approx::assert_relative_eq;

    /// Exact covariance of mean-model iterates started at x*: a scalar
    /// AR recursion, Var_i = (1-eta_i)^2 Var_{i-1} + eta_i^2 sigma^2 and
    /// Cov(i,j) = Var_i prod_{t=i+1..j} (1-eta_t).
    fn exact_mean_sigma(schedule: &StepSchedule, n: usize, sigma: f64) -> DenseMatrix {
        let mut var = vec![0.0; n + 1];
        for i in 1..=n {
            let eta = schedule.step_size(i as u64);
            var[i] = (1.0 - eta) * (1.0 - eta) * var[i - 1] + eta * eta * sigma * sigma;
        }
        let mut m = DenseMatrix::zeros(n, n);
        for i in 1..=n {
            m[(i - 1, i - 1)] = var[i];
            let mut cov = var[i];
            for j in (i + 1)..=n {
                cov *= 1.0 - schedule.step_size(j as u64);
                m[(i - 1, j - 1)] = cov;
                m[(j - 1, i - 1)] = cov;
            }
        }
        m
    }

    fn mean_model(sigma: f64) -> ModelSpec {
        ModelSpec::Mean {
            x_star: 0.0,
            noise_sigma: sigma,
        }
    }

    #[test]
    fn blue_identity_and_diagonal() {
        let est = CovarianceEstimate {
            n: 3,
            sigma_hat: DenseMatrix::identity(3),
            reps: 0,
        };
        let sol = blue_weights(&est, None).unwrap();
        for c in &sol.c {
            assert_relative_eq!(*c, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_relative_eq!(sol.predicted_mse, 1.0 / 3.0, epsilon = 1e-12);

        let est = CovarianceEstimate {
            n: 2,
            sigma_hat: DenseMatrix::from_diag(&[1.0, 2.0]),
            reps: 0,
        };
        let sol = blue_weights(&est, None).unwrap();
        assert_relative_eq!(sol.c[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(sol.c[1], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(sol.predicted_mse, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn blue_is_scale_invariant() {
        let schedule = StepSchedule::new(1.0, 0.7).unwrap();
        let sigma = exact_mean_sigma(&schedule, 8, 1.0);
        let mut scaled = sigma.clone();
        scaled.scale(7.0);
        let a = blue_weights(
            &CovarianceEstimate {
                n: 8,
                sigma_hat: sigma,
                reps: 0,
            },
            None,
        )
        .unwrap();
        let b = blue_weights(
            &CovarianceEstimate {
                n: 8,
                sigma_hat: scaled,
                reps: 0,
            },
            None,
        )
        .unwrap();
        for (x, y) in a.c.iter().zip(&b.c) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
        assert_relative_eq!(b.predicted_mse, 7.0 * a.predicted_mse, max_relative = 1e-10);
    }

    #[test]
    fn closed_form_hand_example() {
        // a^2 = (4, 1, 1), eta_i = i^(-1/2) with eta_1 overridden to 1/4.
        let schedule = StepSchedule::new(1.0, 0.5)
            .unwrap()
            .with_override_first(0.25);
        let sol = closed_form_weights(&[4.0, 1.0, 1.0], &schedule).unwrap();
        let s2 = 2f64.sqrt();
        let s3 = 3f64.sqrt();
        assert_relative_eq!(sol.c[0], (1.0 + 4.0 - s2) / 6.0, epsilon = 1e-14);
        assert_relative_eq!(sol.c[1], (s2 + 1.0 - s3) / 6.0, epsilon = 1e-14);
        assert_relative_eq!(sol.c[2], s3 / 6.0, epsilon = 1e-14);
        assert_relative_eq!(sol.c.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(sol.predicted_mse, 1.0 / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn closed_form_mean_model_matches_adaptive_scheme() {
        // With a = 1 the closed form is exactly the adaptive weight
        // vector, and the predicted MSE is 1/n.
        for alpha in [0.505, 0.8] {
            let schedule = StepSchedule::new(1.0, alpha).unwrap();
            let n = 25;
            let sol = closed_form_weights(&vec![1.0; n], &schedule).unwrap();
            let adaptive =
                materialize_weights(&SchemeConfig::Adaptive { alpha }, n as u64).unwrap();
            for (c, w) in sol.c.iter().zip(&adaptive.w) {
                assert_relative_eq!(c, w, epsilon = 1e-12);
            }
            assert_relative_eq!(sol.predicted_mse, 1.0 / n as f64, epsilon = 1e-14);
        }
    }

    #[test]
    fn closed_form_rejects_bad_input() {
        let schedule = StepSchedule::new(1.0, 0.5).unwrap();
        // eta_1 = 1 but a_1^2 = 4 violates the reduction condition.
        assert!(closed_form_weights(&[4.0, 1.0], &schedule).is_err());
        assert!(matches!(
            closed_form_weights(&[1.0, 0.0], &schedule),
            Err(Error::ZeroRegressor { index: 2, value: v }) if v == 0.0
        ));
    }

    #[test]
    fn with_init_hand_examples() {
        // sigma = 2, x0 - x* = 1/2: r = 16, S = 22, c_0 = 16/22.
        let schedule = StepSchedule::new(1.0, 0.5)
            .unwrap()
            .with_override_first(0.25);
        let sol =
            closed_form_weights_with_init(&[4.0, 1.0, 1.0], &schedule, 2.0, 0.5).unwrap();
        let s2 = 2f64.sqrt();
        let s3 = 3f64.sqrt();
        assert_relative_eq!(sol.c[0], 16.0 / 22.0, epsilon = 1e-14);
        assert_relative_eq!(sol.c[1], (4.0 + 1.0 - s2) / 22.0, epsilon = 1e-14);
        assert_relative_eq!(sol.c[2], (s2 + 1.0 - s3) / 22.0, epsilon = 1e-14);
        assert_relative_eq!(sol.c[3], s3 / 22.0, epsilon = 1e-14);
        assert_relative_eq!(sol.c.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(sol.predicted_mse, 4.0 / 22.0, epsilon = 1e-14);

        // sigma = 1, x0 - x* = 1, a = 1, eta_1 = 1, n = 2: S = 3.
        let schedule = StepSchedule::new(1.0, 0.5).unwrap();
        let sol = closed_form_weights_with_init(&[1.0, 1.0], &schedule, 1.0, 1.0).unwrap();
        assert_relative_eq!(sol.c[0], 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(sol.c[1], (2.0 - s2) / 3.0, epsilon = 1e-14);
        assert_relative_eq!(sol.c[2], s2 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(sol.predicted_mse, 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn with_init_limits() {
        let schedule = StepSchedule::new(1.0, 0.5)
            .unwrap()
            .with_override_first(0.25);
        let a_sq = [4.0, 1.0, 1.0];
        // eta_1 = 1/a_1^2 makes c_0 collapse to r/S and the tail match
        // the reduced weights up to the enlarged S.
        let sol = closed_form_weights_with_init(&a_sq, &schedule, 1.0, 2.0).unwrap();
        let r = 0.25;
        let s = r + 6.0;
        assert_relative_eq!(sol.c[0], r / s, epsilon = 1e-14);
        let reduced = closed_form_weights(&a_sq, &schedule).unwrap();
        for (ci, ri) in sol.c[1..].iter().zip(&reduced.c) {
            assert_relative_eq!(ci * s, ri * 6.0, epsilon = 1e-13);
        }
        // Huge initialization error: r -> 0, recovering the reduced
        // problem exactly.
        let sol = closed_form_weights_with_init(&a_sq, &schedule, 1.0, 1e12).unwrap();
        for (ci, ri) in sol.c[1..].iter().zip(&reduced.c) {
            assert_relative_eq!(ci, ri, max_relative = 1e-10);
        }
        assert!(sol.c[0].abs() < 1e-12);

        assert!(matches!(
            closed_form_weights_with_init(&a_sq, &schedule, 1.0, 0.0),
            Err(Error::ZeroInitError)
        ));
    }

    #[test]
    fn estimated_sigma_diagonal_tracks_exact_recursion() {
        let schedule = StepSchedule::new(1.0, 0.505).unwrap();
        let n = 10;
        let reps = 20_000;
        let est = estimate_sigma(
            &mean_model(1.0),
            &schedule,
            n as u64,
            reps,
            &RngStream::new(901, 0),
        )
        .unwrap();
        let exact = exact_mean_sigma(&schedule, n, 1.0);
        for i in 0..n {
            // Squared-normal variance: sd of the MC mean is
            // sqrt(2) Var_i / sqrt(reps).
            let se = 2f64.sqrt() * exact[(i, i)] / (reps as f64).sqrt();
            let gap = (est.sigma_hat[(i, i)] - exact[(i, i)]).abs();
            assert!(gap < 3.0 * se, "i={i}: gap {gap} vs 3se {}", 3.0 * se);
        }
    }

    #[test]
    fn estimated_sigma_off_diagonals_positive_for_mean_model() {
        // Every iterate is a positive-coefficient function of earlier
        // ones here, so the whole covariance is positive. Sized so the
        // smallest exact entry sits far above the Monte-Carlo noise.
        let schedule = StepSchedule::new(1.0, 0.7).unwrap();
        let est = estimate_sigma(
            &mean_model(1.0),
            &schedule,
            6,
            20_000,
            &RngStream::new(902, 0),
        )
        .unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!(est.sigma_hat[(i, j)] > 0.0, "entry ({i},{j}) not positive");
            }
        }
    }

    #[test]
    fn estimate_sigma_error_shrinks_like_root_reps() {
        // K independent estimates at reps and 2*reps; the spread across
        // them should fall by roughly 1/sqrt(2).
        let schedule = StepSchedule::new(1.0, 0.505).unwrap();
        let model = mean_model(1.0);
        let k = 100;
        let entry = |reps: u64, salt: u64| -> Vec<f64> {
            (0..k)
                .map(|run| {
                    estimate_sigma(
                        &model,
                        &schedule,
                        8,
                        reps,
                        &RngStream::new(903, salt * 1000 + run),
                    )
                    .unwrap()
                    .sigma_hat[(7, 7)]
                })
                .collect()
        };
        let spread = |v: &[f64]| -> f64 {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        let s1 = spread(&entry(1000, 1));
        let s2 = spread(&entry(2000, 2));
        let ratio = s2 / s1;
        assert!(
            ratio > 0.6 && ratio < 0.85,
            "sd ratio {ratio} outside [0.6, 0.85]"
        );
    }

    #[test]
    fn theta_whitening_kills_exact_covariance() {
        let schedule = StepSchedule::new(1.0, 0.505).unwrap();
        let n = 10;
        let exact = CovarianceEstimate {
            n,
            sigma_hat: exact_mean_sigma(&schedule, n, 1.0),
            reps: 0,
        };
        let ratio = theta_diag_check(&vec![1.0; n], &schedule, &exact, 1.0);
        assert!(ratio < 1e-10, "ratio {ratio}");
    }

    #[test]
    fn theta_whitening_one_by_one_is_trivial() {
        let schedule = StepSchedule::new(1.0, 0.505).unwrap();
        let est = CovarianceEstimate {
            n: 1,
            sigma_hat: DenseMatrix::from_diag(&[1.0]),
            reps: 0,
        };
        assert_eq!(theta_diag_check(&[1.0], &schedule, &est, 1.0), 0.0);
    }

    #[test]
    fn monte_carlo_blue_matches_closed_form_on_mean_model() {
        let schedule = StepSchedule::new(1.0, 0.8).unwrap();
        let n = 20;
        let cf = closed_form_weights(&vec![1.0; n], &schedule).unwrap();

        // Systematic agreement: the exact covariance reproduces the
        // closed form to numerical precision.
        let exact = CovarianceEstimate {
            n,
            sigma_hat: exact_mean_sigma(&schedule, n, 1.0),
            reps: 0,
        };
        let from_exact = blue_weights(&exact, None).unwrap();
        for (a, b) in from_exact.c.iter().zip(&cf.c) {
            assert_relative_eq!(a, b, epsilon = 1e-8);
        }
        assert_relative_eq!(from_exact.predicted_mse, 1.0 / n as f64, epsilon = 1e-10);

        // Statistical agreement from the Monte-Carlo covariance.
        let est = estimate_sigma(
            &mean_model(1.0),
            &schedule,
            n as u64,
            100_000,
            &RngStream::new(901, 0),
        )
        .unwrap();
        let mc = blue_weights(&est, None).unwrap();
        let sup = mc
            .c
            .iter()
            .zip(&cf.c)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(sup < 0.02, "sup-norm gap {sup}");
        assert_relative_eq!(mc.predicted_mse, 1.0 / n as f64, max_relative = 0.1);
    }

    #[test]
    fn adaptive_average_is_the_sample_mean_for_the_mean_model() {
        // BLUE uniqueness: with eta_1 = 1 the adaptive-weighted iterate
        // average reproduces the plain average of the observations.
        let model = mean_model(1.5);
        let schedule = StepSchedule::new(1.0, 0.505).unwrap();
        let n = 300u64;
        let rng = RngStream::new(905, 0);
        let mut draw_rng = rng.derive(1);
        let mut avg =
            AveragerState::new(&SchemeConfig::Adaptive { alpha: 0.505 }, 1, Some(n)).unwrap();
        let mut state = SgdState::new(vec![0.0]);
        let mut g = vec![0.0];
        let mut b_sum = 0.0;
        for i in 1..=n {
            let obs = model.draw(&mut draw_rng);
            b_sum += obs.b;
            sgd_step(&mut state, &schedule, &model, &obs, &mut g).unwrap();
            avg.update(i, &state.x).unwrap();
        }
        let est = avg.estimate().unwrap()[0];
        let mean = b_sum / n as f64;
        assert!(
            (est - mean).abs() < 1e-10,
            "adaptive {est} vs sample mean {mean}"
        );
    }

    #[test]
    fn closed_form_beats_every_fixed_scheme_on_the_mean_model() {
        // Predicted optimal MSE 1/n against Monte-Carlo MSE of the
        // built-in schemes, margin two standard errors.
        let model = mean_model(1.0);
        let schedule = StepSchedule::new(1.0, 0.505).unwrap();
        let n = 20u64;
        let reps = 10_000;
        let schemes = [
            SchemeConfig::Uniform,
            SchemeConfig::PolyDecay { gamma: 3.0 },
            SchemeConfig::Suffix { kappa: 0.5 },
            SchemeConfig::Adaptive { alpha: 0.9 },
        ];
        let mut sq = vec![Vec::with_capacity(reps); schemes.len()];
        for rep in 0..reps {
            let mut rng = RngStream::new(906, rep as u64);
            let mut avgs: Vec<AveragerState> = schemes
                .iter()
                .map(|c| AveragerState::new(c, 1, Some(n)).unwrap())
                .collect();
            {
                let mut sinks: Vec<&mut dyn crate::sgd::StreamSink> =
                    avgs.iter_mut().map(|a| a as &mut dyn crate::sgd::StreamSink).collect();
                run_trajectory(&model, &schedule, &[0.0], n, &mut rng, &mut sinks)
                    .unwrap();
            }
            for (s, avg) in sq.iter_mut().zip(&avgs) {
                let e = avg.estimate().unwrap()[0];
                s.push(e * e);
            }
        }
        let predicted = 1.0 / n as f64;
        for (scheme, errs) in schemes.iter().zip(&sq) {
            let mse = errs.iter().sum::<f64>() / reps as f64;
            let var = errs.iter().map(|e| (e - mse) * (e - mse)).sum::<f64>()
                / (reps - 1) as f64;
            let se = (var / reps as f64).sqrt();
            assert!(
                predicted <= mse - 2.0 * se,
                "{scheme}: predicted {predicted} not below mse {mse} - 2se {se}"
            );
        }
    }

    #[test]
    fn expectile_oracle_puts_top_weight_last() {
        let schedule = StepSchedule::new(1.0, 0.505).unwrap();
        for rho in [0.8, 0.5] {
            let sol = oracle_weights_expectile(
                rho,
                &schedule,
                50,
                50_000,
                &RngStream::new(907, 0),
            )
            .unwrap();
            let argmax = sol
                .c
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, sol.c.len() - 1, "rho={rho}");
        }
    }

    #[test]
    fn expectile_oracle_is_seed_stable() {
        let schedule = StepSchedule::new(1.0, 0.505).unwrap();
        let a = oracle_weights_expectile(0.8, &schedule, 50, 50_000, &RngStream::new(908, 0))
            .unwrap();
        let b = oracle_weights_expectile(0.8, &schedule, 50, 50_000, &RngStream::new(909, 5))
            .unwrap();
        let max_w = a.c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sup = a
            .c
            .iter()
            .zip(&b.c)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(sup / max_w < 0.15, "relative sup gap {}", sup / max_w);
    }

    #[test]
    fn two_step_pilot_recovers_noise_scale_and_offset() {
        let model = ModelSpec::Mean {
            x_star: 3.0,
            noise_sigma: 2.0,
        };
        let schedule = StepSchedule::new(1.0, 0.505).unwrap();
        let n = 2000u64;
        let mut rng = RngStream::new(910, 0);
        let mut state = SgdState::new(vec![10.0]);
        let mut g = vec![0.0];
        let mut iterates = Vec::with_capacity(n as usize);
        let mut bs = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let obs = model.draw(&mut rng);
            bs.push(obs.b);
            sgd_step(&mut state, &schedule, &model, &obs, &mut g).unwrap();
            iterates.push(state.x[0]);
        }
        let (sigma_hat, init_err) = two_step_init(10.0, &iterates, &bs).unwrap();
        assert!((sigma_hat - 2.0).abs() < 0.4, "sigma_hat {sigma_hat}");
        assert!((init_err - 7.0).abs() < 0.5, "init_err {init_err}");
    }
}
