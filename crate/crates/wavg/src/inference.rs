//! Streaming confidence intervals for weighted-average estimators.
//!
//! Two studentizations are provided. The plug-in path estimates the
//! sandwich covariance A^-1 S A^-T from running averages of
//! per-observation Hessians and gradient outer products, then uses
//! normal quantiles. The random-scaling path studentizes with a
//! functional of centered partial sums of the iterates; the resulting
//! pivot is not normal, so its critical values come from a Brownian
//! functional, simulated once and shipped as a data file.
//!
//! Both interval constructions scale the variance by the averaging
//! scheme's prefactor w = lim n sum w^2, so one trajectory can feed
//! intervals for several schemes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{ModelSpec, Observation};
use crate::numerics::{
    dot, invert_spd, std_normal_quantile, DenseMatrix, RngStream, DEFAULT_RIDGE,
};
use crate::sgd::StreamSink;

/// Two-sided confidence interval for one coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn halfwidth(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    Ok(())
}

/// Running plug-in sandwich accumulators. Feed it the pre-step iterate
/// and the observation of every SGD step; `observe` on the sink trait
/// does exactly that.
#[derive(Clone, Debug)]
pub struct PluginState {
    model: ModelSpec,
    a_acc: DenseMatrix,
    s_acc: DenseMatrix,
    grad_buf: Vec<f64>,
    n: u64,
}

impl PluginState {
    pub fn new(model: &ModelSpec) -> Result<Self> {
        if matches!(model, ModelSpec::Expectile { .. }) {
            return Err(Error::unsupported(
                "plug-in intervals need a per-observation Hessian; the expectile \
                 loss has none at its kink. Use random scaling.",
            ));
        }
        model.validate()?;
        let d = model.dim();
        Ok(PluginState {
            model: model.clone(),
            a_acc: DenseMatrix::zeros(d, d),
            s_acc: DenseMatrix::zeros(d, d),
            grad_buf: vec![0.0; d],
            n: 0,
        })
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// Fold in one observation at iterate `x` (the iterate the gradient
    /// step was evaluated at, i.e. x_{i-1}).
    pub fn update(&mut self, x: &[f64], obs: &Observation) -> Result<()> {
        match &self.model {
            ModelSpec::Mean { .. } | ModelSpec::Linear { .. } => {
                self.a_acc.add_outer(&obs.a, 1.0);
            }
            ModelSpec::Logistic { .. } => {
                let t = dot(&obs.a, x);
                let p = 1.0 / (1.0 + (-t).exp());
                self.a_acc.add_outer(&obs.a, p * (1.0 - p));
            }
            ModelSpec::Expectile { .. } => unreachable!("rejected at construction"),
        }
        self.model.gradient_into(x, obs, &mut self.grad_buf);
        self.s_acc.add_outer(&self.grad_buf, 1.0);
        self.n += 1;
        Ok(())
    }

    /// Current Hessian estimate A_hat = A_acc / n.
    pub fn a_hat(&self) -> DenseMatrix {
        let mut a = self.a_acc.clone();
        a.scale(1.0 / self.n as f64);
        a
    }

    /// Current gradient-covariance estimate S_hat = S_acc / n.
    pub fn s_hat(&self) -> DenseMatrix {
        let mut s = self.s_acc.clone();
        s.scale(1.0 / self.n as f64);
        s
    }

    /// Sandwich estimate V_hat = A_hat^-1 S_hat A_hat^-T.
    pub fn v_hat(&self) -> Result<DenseMatrix> {
        assert!(self.n >= 1);
        let a_inv = invert_spd(&self.a_hat(), DEFAULT_RIDGE)?;
        let mut v = a_inv.matmul(&self.s_hat()).matmul(&a_inv.transpose());
        v.symmetrize();
        Ok(v)
    }
}

impl StreamSink for PluginState {
    fn accept(&mut self, _i: u64, _x: &[f64]) -> Result<()> {
        Ok(())
    }

    fn observe(&mut self, _i: u64, x_prev: &[f64], obs: &Observation) -> Result<()> {
        self.update(x_prev, obs)
    }
}

/// Per-coordinate plug-in intervals around `estimate`:
/// estimate_j +- z_{(1+level)/2} sqrt(w V_jj / n).
pub fn plugin_interval(
    state: &PluginState,
    estimate: &[f64],
    prefactor_w: f64,
    level: f64,
) -> Result<Vec<Interval>> {
    check_level(level)?;
    assert!(prefactor_w > 0.0);
    let d = estimate.len();
    assert!(state.n >= d as u64, "need at least d observations");
    let v = state.v_hat()?;
    let z = std_normal_quantile((1.0 + level) / 2.0);
    let n = state.n as f64;
    Ok((0..d)
        .map(|j| {
            let hw = z * (prefactor_w * v[(j, j)] / n).sqrt();
            Interval {
                lo: estimate[j] - hw,
                hi: estimate[j] + hw,
            }
        })
        .collect())
}

/// Random-scaling accumulators. Four running quantities reconstruct
/// the covariance functional of centered partial sums exactly, so the
/// state stays O(d^2) however long the stream runs.
#[derive(Clone, Debug)]
pub struct RandomScalingState {
    /// Partial sum of iterates, P_t = sum_{i<=t} x_i.
    s_partial: Vec<f64>,
    /// sum_s P_s P_s^T
    m_ss: DenseMatrix,
    /// sum_s s P_s
    m_s1: Vec<f64>,
    /// sum_s s^2
    m_s2: f64,
    t: u64,
}

impl RandomScalingState {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1);
        RandomScalingState {
            s_partial: vec![0.0; dim],
            m_ss: DenseMatrix::zeros(dim, dim),
            m_s1: vec![0.0; dim],
            m_s2: 0.0,
            t: 0,
        }
    }

    pub fn count(&self) -> u64 {
        self.t
    }

    /// Fold in iterate x_t; must be called in stream order.
    pub fn update(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.s_partial.len());
        self.t += 1;
        let t = self.t as f64;
        for (p, v) in self.s_partial.iter_mut().zip(x) {
            *p += v;
        }
        self.m_ss.add_outer(&self.s_partial, 1.0);
        for (q, p) in self.m_s1.iter_mut().zip(&self.s_partial) {
            *q += t * p;
        }
        self.m_s2 += t * t;
    }

    /// The random-scaling covariance
    /// V_rs = n^-2 sum_s (P_s - s x_bar)(P_s - s x_bar)^T
    /// with x_bar the uniform mean of the stream. Expanding the square
    /// gives the four accumulated terms below; no second pass needed.
    pub fn v_hat(&self) -> DenseMatrix {
        assert!(self.t >= 1);
        let d = self.s_partial.len();
        let n = self.t as f64;
        let xbar: Vec<f64> = self.s_partial.iter().map(|p| p / n).collect();
        let mut v = self.m_ss.clone();
        for i in 0..d {
            for j in 0..d {
                v[(i, j)] += -self.m_s1[i] * xbar[j] - xbar[i] * self.m_s1[j]
                    + self.m_s2 * xbar[i] * xbar[j];
            }
        }
        v.scale(1.0 / (n * n));
        v
    }

    /// Uniform mean of the stream so far.
    pub fn mean(&self) -> Vec<f64> {
        assert!(self.t >= 1);
        let n = self.t as f64;
        self.s_partial.iter().map(|p| p / n).collect()
    }
}

impl StreamSink for RandomScalingState {
    fn accept(&mut self, _i: u64, x: &[f64]) -> Result<()> {
        self.update(x);
        Ok(())
    }
}

/// Critical values for the random-scaling pivot, keyed by one-sided
/// percentile (a 95% two-sided interval reads the 0.975 entry).
#[derive(Clone, Debug, PartialEq)]
pub struct CriticalValueTable {
    pub levels: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub grid: u64,
    pub paths: u64,
    pub seed: u64,
}

/// Percentiles tabulated by default.
pub const DEFAULT_LEVELS: [f64; 5] = [0.9, 0.95, 0.975, 0.99, 0.995];

impl CriticalValueTable {
    /// The table shipped with the crate, generated by the
    /// `critical-values` command with the provenance recorded in it.
    pub fn builtin() -> CriticalValueTable {
        CriticalValueTable::from_csv(include_str!("../data/critical_values.csv"))
            .expect("shipped critical-value table parses")
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.len() != self.quantiles.len() {
            return Err(Error::config("critical-value table is empty or ragged"));
        }
        for pair in self.levels.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::config("table levels must increase"));
            }
        }
        for pair in self.quantiles.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::config("table quantiles must increase with level"));
            }
        }
        if self.levels.iter().any(|l| !(*l > 0.5 && *l < 1.0)) {
            return Err(Error::config(
                "table levels are one-sided percentiles in (0.5, 1)",
            ));
        }
        Ok(())
    }

    /// Quantile for a one-sided percentile already in the table.
    pub fn quantile(&self, percentile: f64) -> Result<f64> {
        self.levels
            .iter()
            .position(|l| (l - percentile).abs() < 1e-9)
            .map(|i| self.quantiles[i])
            .ok_or(Error::LevelNotTabulated { level: percentile })
    }

    /// Quantile for a two-sided interval level: the (1+level)/2 entry.
    pub fn for_interval_level(&self, level: f64) -> Result<f64> {
        check_level(level)?;
        self.quantile((1.0 + level) / 2.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,quantile,grid,paths,seed\n");
        for (l, q) in self.levels.iter().zip(&self.quantiles) {
            out.push_str(&format!(
                "{l},{q},{},{},{}\n",
                self.grid, self.paths, self.seed
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut levels = Vec::new();
        let mut quantiles = Vec::new();
        let mut provenance: Option<(u64, u64, u64)> = None;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("level") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::config(format!(
                    "critical-value row {} needs 5 fields",
                    ln + 1
                )));
            }
            let parse =
                |s: &str| -> Result<f64> { s.trim().parse().map_err(|_| bad_row(ln)) };
            let parse_u =
                |s: &str| -> Result<u64> { s.trim().parse().map_err(|_| bad_row(ln)) };
            levels.push(parse(fields[0])?);
            quantiles.push(parse(fields[1])?);
            let prov = (parse_u(fields[2])?, parse_u(fields[3])?, parse_u(fields[4])?);
            if *provenance.get_or_insert(prov) != prov {
                return Err(Error::config(
                    "critical-value rows disagree on grid/paths/seed",
                ));
            }
        }
        let (grid, paths, seed) = provenance
            .ok_or_else(|| Error::config("critical-value table has no data rows"))?;
        let table = CriticalValueTable {
            levels,
            quantiles,
            grid,
            paths,
            seed,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_csv())?)
    }
}

/// Per-coordinate random-scaling intervals around `estimate`:
/// estimate_j +- q_{(1+level)/2} sqrt(w (V_rs)_jj / n).
pub fn rs_interval(
    state: &RandomScalingState,
    estimate: &[f64],
    prefactor_w: f64,
    level: f64,
    table: &CriticalValueTable,
) -> Result<Vec<Interval>> {
    assert!(prefactor_w > 0.0);
    let q = table.for_interval_level(level)?;
    let v = state.v_hat();
    let n = state.t as f64;
    Ok(estimate
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let hw = q * (prefactor_w * v[(j, j)] / n).sqrt();
            Interval {
                lo: e - hw,
                hi: e + hw,
            }
        })
        .collect())
}

/// Paths per simulation chunk; fixed so results do not depend on the
/// worker count.
const PIVOT_CHUNK: u64 = 4096;

/// Simulate the signed random-scaling pivot W(1)/sqrt(int_0^1 (W(r) -
/// r W(1))^2 dr) on `paths` discretized Brownian paths. One pass per
/// path: the integrand expands into three running sums, so memory per
/// path is O(1) regardless of grid size.
pub fn simulate_pivots(grid: u64, paths: u64, rng: &RngStream) -> Vec<f64> {
    assert!(grid >= 2 && paths >= 1);
    let g = grid as f64;
    let inv_sqrt_g = 1.0 / g.sqrt();
    // sum_k (k/g)^2 for k = 1..g, exact formula.
    let sum_r2 = g * (g + 1.0) * (2.0 * g + 1.0) / (6.0 * g * g);
    let n_chunks = paths.div_ceil(PIVOT_CHUNK);
    let chunks: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * PIVOT_CHUNK;
            let hi = (lo + PIVOT_CHUNK).min(paths);
            let mut out = Vec::with_capacity((hi - lo) as usize);
            for path in lo..hi {
                let mut path_rng = rng.derive(path);
                let mut w = 0.0f64;
                let mut sum_w2 = 0.0f64;
                let mut sum_rw = 0.0f64;
                for k in 1..=grid {
                    w += inv_sqrt_g * path_rng.standard_normal();
                    sum_w2 += w * w;
                    sum_rw += (k as f64 / g) * w;
                }
                let w1 = w;
                // Riemann sum of (W(r) - r W(1))^2 on the grid.
                let integral = (sum_w2 - 2.0 * w1 * sum_rw + w1 * w1 * sum_r2) / g;
                out.push(w1 / integral.sqrt());
            }
            out
        })
        .collect();
    chunks.concat()
}

/// Build a critical-value table from fresh pivot simulations. `levels`
/// are one-sided percentiles; each quantile is the empirical
/// (2 level - 1) quantile of |pivot|, the two-sided critical value.
pub fn simulate_critical_values(
    grid: u64,
    paths: u64,
    levels: &[f64],
    rng: &RngStream,
) -> Result<CriticalValueTable> {
    assert!(grid >= 1_000, "grid too coarse for quantile accuracy");
    assert!(paths >= 100_000, "too few paths for quantile accuracy");
    let mut abs: Vec<f64> = simulate_pivots(grid, paths, rng)
        .into_iter()
        .map(f64::abs)
        .collect();
    abs.sort_by(f64::total_cmp);
    let quantiles: Vec<f64> = levels
        .iter()
        .map(|l| {
            assert!(*l > 0.5 && *l < 1.0, "levels are one-sided percentiles");
            let q = 2.0 * l - 1.0;
            let idx = ((q * paths as f64).ceil() as usize).clamp(1, abs.len()) - 1;
            abs[idx]
        })
        .collect();
    let table = CriticalValueTable {
        levels: levels.to_vec(),
        quantiles,
        grid,
        paths,
        seed: rng.seed(),
    };
    table.validate()?;
    Ok(table)
}

fn bad_row(ln: usize) -> Error {
    Error::config(format!("critical-value row {} does not parse", ln + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Direct two-pass evaluation of the random-scaling covariance.
    fn rs_two_pass(xs: &[Vec<f64>]) -> DenseMatrix {
        let n = xs.len();
        let d = xs[0].len();
        let mut xbar = vec![0.0; d];
        for x in xs {
            for (m, v) in xbar.iter_mut().zip(x) {
                *m += v;
            }
        }
        for m in &mut xbar {
            *m /= n as f64;
        }
        let mut v = DenseMatrix::zeros(d, d);
        let mut partial = vec![0.0; d];
        for (s, x) in xs.iter().enumerate() {
            for (p, xv) in partial.iter_mut().zip(x) {
                *p += xv;
            }
            let centered: Vec<f64> = partial
                .iter()
                .zip(&xbar)
                .map(|(p, m)| p - (s as f64 + 1.0) * m)
                .collect();
            v.add_outer(&centered, 1.0);
        }
        v.scale(1.0 / (n as f64 * n as f64));
        v
    }

    #[test]
    fn rs_hand_example() {
        let mut st = RandomScalingState::new(1);
        st.update(&[1.0]);
        st.update(&[-1.0]);
        assert_relative_eq!(st.v_hat()[(0, 0)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn rs_constant_stream_is_exactly_zero() {
        let mut st = RandomScalingState::new(2);
        for _ in 0..7 {
            st.update(&[2.5, -1.25]);
        }
        let v = st.v_hat();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(v[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn rs_is_order_sensitive() {
        // Reversal maps the centered partial sums onto themselves, so
        // compare against a non-reversal permutation: (1,2,3) gives
        // centered sums (-1,-1,0) and V = 2/9, (2,1,3) gives (0,-1,0)
        // and V = 1/9.
        let mut a = RandomScalingState::new(1);
        for v in [1.0, 2.0, 3.0] {
            a.update(&[v]);
        }
        let mut b = RandomScalingState::new(1);
        for v in [2.0, 1.0, 3.0] {
            b.update(&[v]);
        }
        assert_relative_eq!(a.v_hat()[(0, 0)], 2.0 / 9.0, epsilon = 1e-14);
        assert_relative_eq!(b.v_hat()[(0, 0)], 1.0 / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn rs_streaming_matches_two_pass() {
        let mut rng = RngStream::new(41, 0);
        for n in [1usize, 2, 3, 10, 100, 10_000] {
            let xs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..2).map(|_| 0.3 + rng.standard_normal()).collect())
                .collect();
            let mut st = RandomScalingState::new(2);
            for x in &xs {
                st.update(x);
            }
            let stream = st.v_hat();
            let direct = rs_two_pass(&xs);
            for i in 0..2 {
                for j in 0..2 {
                    let scale = direct[(i, j)].abs().max(1e-12);
                    assert!(
                        (stream[(i, j)] - direct[(i, j)]).abs() / scale < 1e-9,
                        "n={n} ({i},{j}): {} vs {}",
                        stream[(i, j)],
                        direct[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn plugin_rank_one_hessian() {
        let model = ModelSpec::Linear {
            x_star: vec![0.0, 0.0],
            noise_sigma: 1.0,
        };
        let mut st = PluginState::new(&model).unwrap();
        st.update(
            &[0.0, 0.0],
            &Observation {
                a: vec![1.0, 0.0],
                b: 0.0,
            },
        )
        .unwrap();
        let a = st.a_hat();
        assert_eq!(a[(0, 0)], 1.0);
        assert_eq!(a[(0, 1)], 0.0);
        assert_eq!(a[(1, 0)], 0.0);
        assert_eq!(a[(1, 1)], 0.0);
    }

    #[test]
    fn plugin_hessian_concentrates_for_linear_model() {
        let model = ModelSpec::Linear {
            x_star: vec![1.0, -2.0, 0.5],
            noise_sigma: 1.0,
        };
        let mut rng = RngStream::new(42, 0);
        let mut st = PluginState::new(&model).unwrap();
        let x = vec![0.9, -1.9, 0.4];
        for _ in 0..100_000 {
            let obs = model.draw(&mut rng);
            st.update(&x, &obs).unwrap();
        }
        let mut neg_id = DenseMatrix::identity(3);
        neg_id.scale(-1.0);
        let mut gap = st.a_hat();
        gap.add_assign(&neg_id);
        assert!(gap.frobenius_norm() < 0.05, "{}", gap.frobenius_norm());
    }

    #[test]
    fn plugin_information_identity_for_logistic_at_optimum() {
        let model = ModelSpec::Logistic {
            x_star: vec![0.5, -1.0],
        };
        let mut rng = RngStream::new(43, 0);
        let mut st = PluginState::new(&model).unwrap();
        let x = vec![0.5, -1.0];
        for _ in 0..100_000 {
            let obs = model.draw(&mut rng);
            st.update(&x, &obs).unwrap();
        }
        let a = st.a_hat();
        let mut neg_s = st.s_hat();
        neg_s.scale(-1.0);
        let mut gap = a.clone();
        gap.add_assign(&neg_s);
        let rel = gap.frobenius_norm() / a.frobenius_norm();
        assert!(rel < 0.05, "relative Frobenius gap {rel}");
    }

    #[test]
    fn plugin_sandwich_converges_to_identity_for_linear_model() {
        // A = S = I at the optimum, so V = I.
        let model = ModelSpec::Linear {
            x_star: vec![0.0, 0.0],
            noise_sigma: 1.0,
        };
        let mut rng = RngStream::new(44, 0);
        let mut st = PluginState::new(&model).unwrap();
        for _ in 0..100_000 {
            let obs = model.draw(&mut rng);
            st.update(&[0.0, 0.0], &obs).unwrap();
        }
        let mut neg_id = DenseMatrix::identity(2);
        neg_id.scale(-1.0);
        let mut gap = st.v_hat().unwrap();
        gap.add_assign(&neg_id);
        assert!(gap.frobenius_norm() < 0.1, "{}", gap.frobenius_norm());
    }

    #[test]
    fn plugin_rejects_expectile() {
        let model = ModelSpec::Expectile {
            rho: 0.8,
            response: Default::default(),
        };
        assert!(matches!(
            PluginState::new(&model),
            Err(Error::Unsupported(_))
        ));
    }

    fn synthetic_plugin_state(n: u64, d: usize) -> PluginState {
        // A_acc = S_acc = n I, so A_hat = S_hat = V_hat = I.
        let model = ModelSpec::Linear {
            x_star: vec![0.0; d],
            noise_sigma: 1.0,
        };
        let mut st = PluginState::new(&model).unwrap();
        st.a_acc = DenseMatrix::identity(d);
        st.a_acc.scale(n as f64);
        st.s_acc = DenseMatrix::identity(d);
        st.s_acc.scale(n as f64);
        st.n = n;
        st
    }

    #[test]
    fn plugin_interval_halfwidth_formula() {
        let st = synthetic_plugin_state(10_000, 1);
        let iv = plugin_interval(&st, &[0.3], 1.0, 0.95).unwrap();
        assert_relative_eq!(iv[0].halfwidth(), 1.96 / 100.0, epsilon = 1e-5);
        assert_relative_eq!((iv[0].lo + iv[0].hi) / 2.0, 0.3, epsilon = 1e-12);

        // Prefactor 16/7 widens by sqrt(16/7).
        let wide = plugin_interval(&st, &[0.3], 16.0 / 7.0, 0.95).unwrap();
        assert_relative_eq!(
            wide[0].halfwidth() / iv[0].halfwidth(),
            (16f64 / 7.0).sqrt(),
            epsilon = 1e-12
        );

        // Width grows with the level.
        let tighter = plugin_interval(&st, &[0.3], 1.0, 0.9).unwrap();
        assert!(tighter[0].halfwidth() < iv[0].halfwidth());
    }

    #[test]
    fn rs_interval_uses_table_quantile() {
        let table = CriticalValueTable {
            levels: vec![0.975],
            quantiles: vec![6.75],
            grid: 0,
            paths: 0,
            seed: 0,
        };
        let mut st = RandomScalingState::new(1);
        // Two-point stream with V_rs = 1/4 from the hand example.
        st.update(&[1.0]);
        st.update(&[-1.0]);
        let iv = rs_interval(&st, &[0.0], 1.0, 0.95, &table).unwrap();
        assert_relative_eq!(
            iv[0].halfwidth(),
            6.75 * (0.25f64 / 2.0).sqrt(),
            epsilon = 1e-12
        );
        let doubled = rs_interval(&st, &[0.0], 2.0, 0.95, &table).unwrap();
        assert_relative_eq!(
            doubled[0].halfwidth() / iv[0].halfwidth(),
            2f64.sqrt(),
            epsilon = 1e-12
        );
        assert!(matches!(
            rs_interval(&st, &[0.0], 1.0, 0.8, &table),
            Err(Error::LevelNotTabulated { .. })
        ));
    }

    #[test]
    fn pivot_simulation_is_symmetric_and_heavy_tailed() {
        let pivots = simulate_pivots(2_000, 50_000, &RngStream::new(45, 0));
        let mut sorted = pivots.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        assert!(median.abs() < 0.02, "median {median}");
        // The 0.975 two-sided quantile is far beyond the normal 1.96.
        let mut abs: Vec<f64> = pivots.iter().map(|p| p.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let q975 = abs[(0.95 * abs.len() as f64).ceil() as usize - 1];
        assert!(q975 > 6.0 && q975 < 7.5, "q975 {q975}");
    }

    #[test]
    fn pivot_paths_are_deterministic_and_chunk_independent() {
        let a = simulate_pivots(1_000, 5_000, &RngStream::new(46, 0));
        let b = simulate_pivots(1_000, 5_000, &RngStream::new(46, 0));
        assert_eq!(a, b);
        // Path i depends only on its own derived stream, not on the
        // batch it was simulated in.
        let small = simulate_pivots(1_000, 100, &RngStream::new(46, 0));
        assert_eq!(&a[..100], &small[..]);
    }

    #[test]
    fn critical_value_table_round_trips_through_csv() {
        let table = simulate_critical_values(
            1_000,
            100_000,
            &DEFAULT_LEVELS,
            &RngStream::new(47, 0),
        )
        .unwrap();
        table.validate().unwrap();
        let parsed = CriticalValueTable::from_csv(&table.to_csv()).unwrap();
        assert_eq!(table, parsed);
        assert!(parsed.quantile(0.975).unwrap() > 5.5);
        assert!(matches!(
            parsed.quantile(0.93),
            Err(Error::LevelNotTabulated { .. })
        ));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cv.csv");
        table.save(&path).unwrap();
        assert_eq!(CriticalValueTable::load(&path).unwrap(), table);
    }

    #[test]
    fn builtin_table_is_usable() {
        let table = CriticalValueTable::builtin();
        table.validate().unwrap();
        let q = table.quantile(0.975).unwrap();
        assert!(q > 6.0 && q < 7.5, "builtin q975 {q}");
    }

    #[test]
    fn csv_rejects_malformed_tables() {
        assert!(CriticalValueTable::from_csv("level,quantile,grid,paths,seed\n").is_err());
        // Quantiles must increase with level.
        let bad = "level,quantile,grid,paths,seed\n0.9,5.0,10,10,1\n0.95,4.0,10,10,1\n";
        assert!(CriticalValueTable::from_csv(bad).is_err());
        // Provenance must agree across rows.
        let bad = "level,quantile,grid,paths,seed\n0.9,5.0,10,10,1\n0.95,6.0,99,10,1\n";
        assert!(CriticalValueTable::from_csv(bad).is_err());
    }
}
