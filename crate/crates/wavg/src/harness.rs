//! Experiment runner: deterministic parallel Monte-Carlo studies over
//! averaging schemes, rendered as commented CSV reports.
//!
//! Replications are the unit of parallelism. Each replication owns its
//! model draws, trajectory, averagers, and inference state, seeded from
//! `RngStream::new(seed, 0).derive(rep)`, so the aggregated report is
//! identical for any worker count and byte-identical across runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::averaging::{
    materialize_weights, parse_scheme, prefactor, prefactor_numeric, AveragerState, SchemeConfig,
};
use crate::error::{Error, Result};
use crate::inference::{
    plugin_interval, rs_interval, CriticalValueTable, PluginState, RandomScalingState,
};
use crate::models::{sandwich_truth, ModelSpec};
use crate::numerics::{ks_distance, RngStream};
use crate::sgd::{run_trajectory, StepSchedule, StreamSink};
use crate::weights::oracle_weights_expectile;

/// Derivation tag for the sandwich-truth stream (normality reports).
const SANDWICH_TAG: u64 = u64::MAX - 2;
/// Derivation tag for the oracle-weight stream (weight comparisons).
const ORACLE_TAG: u64 = u64::MAX - 3;

/// Below this horizon, coverage reports carry a warning comment: the
/// asymptotic bands the intervals rely on have no reason to hold yet.
const ASYMPTOTIC_N: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Normality,
    Mse,
    Coverage,
    OracleWeights,
    WeightsCompare,
    CriticalValues,
}

impl Experiment {
    pub fn label(self) -> &'static str {
        match self {
            Experiment::Normality => "normality",
            Experiment::Mse => "mse",
            Experiment::Coverage => "coverage",
            Experiment::OracleWeights => "oracle_weights",
            Experiment::WeightsCompare => "weights_compare",
            Experiment::CriticalValues => "critical_values",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMethod {
    Plugin,
    RandomScaling,
}

impl CoverageMethod {
    pub fn label(self) -> &'static str {
        match self {
            CoverageMethod::Plugin => "plugin",
            CoverageMethod::RandomScaling => "random_scaling",
        }
    }
}

fn d_eta() -> f64 {
    1.0
}
fn d_alpha() -> f64 {
    0.667
}
fn d_schemes() -> Vec<String> {
    vec!["uniform".into()]
}
fn d_n() -> u64 {
    10_000
}
fn d_reps() -> u64 {
    100
}
fn d_level() -> f64 {
    0.95
}
fn d_sandwich_reps() -> u64 {
    200_000
}

/// Everything a run needs, loadable from JSON. CLI flags override
/// individual fields. `workers` and `output` steer execution only and
/// are excluded from the config hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<Experiment>,
    pub model: ModelSpec,
    #[serde(default = "d_eta")]
    pub eta: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    /// Replaces eta_1 only; later steps keep eta * i^(-alpha).
    #[serde(default)]
    pub eta1: Option<f64>,
    #[serde(default = "d_schemes")]
    pub schemes: Vec<String>,
    #[serde(default = "d_n")]
    pub n: u64,
    #[serde(default = "d_reps")]
    pub reps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_level")]
    pub level: f64,
    /// MSE evaluation horizons; empty means just `n`.
    #[serde(default)]
    pub checkpoints: Vec<u64>,
    /// Start iterate; zeros when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Draws used when the sandwich truth needs Monte Carlo (logistic).
    #[serde(default = "d_sandwich_reps")]
    pub sandwich_reps: u64,
    /// Critical-value table path; the built-in table when absent.
    #[serde(default)]
    pub critical_values: Option<PathBuf>,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("bad config: {e}")))?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<StepSchedule> {
        let mut s = StepSchedule::new(self.eta, self.alpha)?;
        if let Some(e1) = self.eta1 {
            s = s.with_override_first(e1);
        }
        Ok(s)
    }

    pub fn parsed_schemes(&self) -> Result<Vec<SchemeConfig>> {
        self.schemes
            .iter()
            .map(|s| parse_scheme(s, self.alpha))
            .collect()
    }

    /// MSE horizons in evaluation order; the trajectory runs to the last.
    pub fn mse_checkpoints(&self) -> Vec<u64> {
        if self.checkpoints.is_empty() {
            vec![self.n]
        } else {
            self.checkpoints.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule()?;
        if self.reps < 1 {
            return Err(Error::config("reps must be at least 1"));
        }
        if self.n < 1 {
            return Err(Error::config("n must be at least 1"));
        }
        if self.schemes.is_empty() {
            return Err(Error::config("at least one scheme is required"));
        }
        self.parsed_schemes()?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::config("level must lie in (0, 1)"));
        }
        let cps = self.mse_checkpoints();
        if !cps.windows(2).all(|w| w[0] < w[1]) || cps[0] < 1 {
            return Err(Error::config("checkpoints must be strictly increasing and >= 1"));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != self.model.dim() {
                return Err(Error::config(format!(
                    "x0 has dimension {}, model needs {}",
                    x0.len(),
                    self.model.dim()
                )));
            }
        }
        Ok(())
    }

    fn x0(&self) -> Vec<f64> {
        self.x0
            .clone()
            .unwrap_or_else(|| vec![0.0; self.model.dim()])
    }
}

/// First 16 hex digits of the SHA-256 of the canonical config JSON,
/// with the execution-only fields (`workers`, `output`) zeroed so the
/// hash identifies the experiment, not the machine layout.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.workers = 0;
    c.output = None;
    let json = serde_json::to_string(&c).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Run `f` on a dedicated pool with `workers` threads; 0 keeps the
/// global default pool.
pub fn with_workers<T, F>(workers: usize, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> Result<T> + Send,
{
    if workers == 0 {
        f()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?;
        pool.install(f)
    }
}

/// The CLT prefactor for a scheme: the closed form when one exists,
/// otherwise the finite-n numeric value at the configured horizon.
pub fn scheme_prefactor(cfg: &SchemeConfig, n: u64) -> Result<f64> {
    match prefactor(cfg) {
        Ok(w) => Ok(w),
        Err(Error::Unsupported(_)) => prefactor_numeric(cfg, n),
        Err(e) => Err(e),
    }
}

/// Per-replication, per-scheme outputs. Each experiment fills the
/// fields it needs and leaves the rest empty.
#[derive(Clone, Debug, Default)]
pub struct ReplicationResult {
    /// [scheme][coord] final weighted estimates
    pub estimates: Vec<Vec<f64>>,
    /// [scheme][checkpoint] squared L2 errors
    pub sq_errors: Vec<Vec<f64>>,
    /// [scheme][coord] (scaled, unscaled) standardized errors
    pub std_errors: Vec<Vec<(f64, f64)>>,
    /// [scheme][coord] interval covered the truth
    pub hits: Vec<Vec<bool>>,
    /// [scheme][coord] interval half-widths
    pub halfwidths: Vec<Vec<f64>>,
}

/// Ordered parallel map over replications.
fn run_reps<F>(cfg: &ExperimentConfig, per_rep: F) -> Result<Vec<ReplicationResult>>
where
    F: Fn(u64) -> Result<ReplicationResult> + Sync,
{
    with_workers(cfg.workers, || {
        (0..cfg.reps).into_par_iter().map(&per_rep).collect()
    })
}

fn header_line(cfg: &ExperimentConfig, experiment: Experiment, cv: &str) -> String {
    format!(
        "# experiment={} config={} seed={} critical-values={}\n",
        experiment.label(),
        config_hash(cfg),
        cfg.seed,
        cv
    )
}

fn params_line(cfg: &ExperimentConfig) -> String {
    let model = match &cfg.model {
        ModelSpec::Mean { .. } => "mean",
        ModelSpec::Linear { .. } => "linear",
        ModelSpec::Logistic { .. } => "logistic",
        ModelSpec::Expectile { .. } => "expectile",
    };
    format!(
        "# model={} dim={} n={} reps={} eta={} alpha={} level={}\n",
        model,
        cfg.model.dim(),
        cfg.n,
        cfg.reps,
        cfg.eta,
        cfg.alpha,
        cfg.level
    )
}

fn sample_mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Standardized-error study: per scheme and coordinate, the report
/// lists sqrt(n) (x~ - x*)_j / sqrt(w V_jj) for every replication
/// (`std_error_scaled`) and the same without the prefactor w
/// (`std_error_unscaled`), with KS/mean/variance summaries in the
/// header comments.
pub fn run_normality(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let schemes = cfg.parsed_schemes()?;
    let d = cfg.model.dim();
    let truth = cfg.model.minimizer();
    let base = RngStream::new(cfg.seed, 0);

    let mut srng = base.derive(SANDWICH_TAG);
    let v = sandwich_truth(&cfg.model, &mut srng, cfg.sandwich_reps)?.v;
    let v_diag: Vec<f64> = (0..d).map(|j| v[(j, j)]).collect();
    if v_diag.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::config("sandwich covariance has a nonpositive diagonal"));
    }
    let ws: Vec<f64> = schemes
        .iter()
        .map(|s| scheme_prefactor(s, cfg.n))
        .collect::<Result<_>>()?;

    let sqrt_n = (cfg.n as f64).sqrt();
    let x0 = cfg.x0();
    let results = run_reps(cfg, |rep| {
        let mut rng = base.derive(rep);
        let mut avs: Vec<AveragerState> = schemes
            .iter()
            .map(|s| AveragerState::new(s, d, Some(cfg.n)))
            .collect::<Result<_>>()?;
        {
            let mut sinks: Vec<&mut dyn StreamSink> =
                avs.iter_mut().map(|a| a as &mut dyn StreamSink).collect();
            run_trajectory(&cfg.model, &schedule, &x0, cfg.n, &mut rng, &mut sinks)?;
        }
        let mut out = ReplicationResult::default();
        for (k, av) in avs.iter().enumerate() {
            let est = av.estimate()?;
            let row: Vec<(f64, f64)> = (0..d)
                .map(|j| {
                    let unscaled = sqrt_n * (est[j] - truth[j]) / v_diag[j].sqrt();
                    (unscaled / ws[k].sqrt(), unscaled)
                })
                .collect();
            out.std_errors.push(row);
            out.estimates.push(est);
        }
        Ok(out)
    })?;

    let mut report = header_line(cfg, Experiment::Normality, "none");
    report.push_str(&params_line(cfg));
    for (k, s) in schemes.iter().enumerate() {
        let _ = writeln!(report, "# prefactor scheme={s} w={}", ws[k]);
    }
    for (k, s) in schemes.iter().enumerate() {
        for j in 0..d {
            let scaled: Vec<f64> = results.iter().map(|r| r.std_errors[k][j].0).collect();
            let unscaled: Vec<f64> = results.iter().map(|r| r.std_errors[k][j].1).collect();
            let (mean, var) = sample_mean_var(&scaled);
            let (_, var_u) = sample_mean_var(&unscaled);
            let mut sorted = scaled.clone();
            sorted.sort_by(f64::total_cmp);
            let ks = ks_distance(&sorted);
            let _ = writeln!(
                report,
                "# summary scheme={s} coord={j} mean={mean} var={var} ks={ks} var_unscaled={var_u}"
            );
        }
    }
    report.push_str("scheme,coord,rep,std_error_scaled,std_error_unscaled\n");
    for (k, s) in schemes.iter().enumerate() {
        for j in 0..d {
            for (rep, r) in results.iter().enumerate() {
                let (sc, un) = r.std_errors[k][j];
                let _ = writeln!(report, "{s},{j},{rep},{sc},{un}");
            }
        }
    }
    Ok(report)
}

/// Wraps an averager so the estimate is captured at each checkpoint.
struct CheckpointAverager<'a> {
    av: AveragerState,
    checkpoints: &'a [u64],
    next: usize,
    snaps: Vec<Vec<f64>>,
}

impl StreamSink for CheckpointAverager<'_> {
    fn accept(&mut self, i: u64, x: &[f64]) -> Result<()> {
        self.av.update(i, x)?;
        if self.next < self.checkpoints.len() && i == self.checkpoints[self.next] {
            self.snaps.push(self.av.estimate()?);
            self.next += 1;
        }
        Ok(())
    }
}

/// Captures the raw iterate at each checkpoint.
struct CheckpointLast<'a> {
    checkpoints: &'a [u64],
    next: usize,
    snaps: Vec<Vec<f64>>,
}

impl StreamSink for CheckpointLast<'_> {
    fn accept(&mut self, i: u64, x: &[f64]) -> Result<()> {
        if self.next < self.checkpoints.len() && i == self.checkpoints[self.next] {
            self.snaps.push(x.to_vec());
            self.next += 1;
        }
        Ok(())
    }
}

fn sq_error(est: &[f64], truth: &[f64]) -> f64 {
    est.iter()
        .zip(truth)
        .map(|(e, t)| (e - t) * (e - t))
        .sum()
}

/// Monte-Carlo MSE at each checkpoint, per scheme plus the raw final
/// iterate (`last`). The `sd` column is the standard error of the MSE
/// estimate. When an adaptive scheme is configured, ratio-to-adaptive
/// comments are emitted for every other row.
pub fn run_mse(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    match cfg.model {
        ModelSpec::Mean { .. } | ModelSpec::Linear { .. } => {}
        _ => return Err(Error::config("mse study needs a model with a known finite-sample target (mean or linear)")),
    }
    let schedule = cfg.schedule()?;
    let schemes = cfg.parsed_schemes()?;
    let d = cfg.model.dim();
    let truth = cfg.model.minimizer();
    let checkpoints = cfg.mse_checkpoints();
    let horizon = *checkpoints.last().expect("validated nonempty");
    let base = RngStream::new(cfg.seed, 0);

    let x0 = cfg.x0();
    let results = run_reps(cfg, |rep| {
        let mut rng = base.derive(rep);
        let mut cavs: Vec<CheckpointAverager> = schemes
            .iter()
            .map(|s| {
                Ok(CheckpointAverager {
                    av: AveragerState::new(s, d, Some(horizon))?,
                    checkpoints: &checkpoints,
                    next: 0,
                    snaps: Vec::new(),
                })
            })
            .collect::<Result<_>>()?;
        let mut last = CheckpointLast {
            checkpoints: &checkpoints,
            next: 0,
            snaps: Vec::new(),
        };
        {
            let mut sinks: Vec<&mut dyn StreamSink> =
                cavs.iter_mut().map(|a| a as &mut dyn StreamSink).collect();
            sinks.push(&mut last);
            run_trajectory(&cfg.model, &schedule, &x0, horizon, &mut rng, &mut sinks)?;
        }
        let mut out = ReplicationResult::default();
        for cav in &cavs {
            out.sq_errors
                .push(cav.snaps.iter().map(|e| sq_error(e, &truth)).collect());
        }
        out.sq_errors
            .push(last.snaps.iter().map(|e| sq_error(e, &truth)).collect());
        Ok(out)
    })?;

    let mut labels: Vec<String> = schemes.iter().map(|s| s.label()).collect();
    labels.push("last".into());
    // mse[k][c], sd[k][c]
    let mut mse = vec![vec![0.0; checkpoints.len()]; labels.len()];
    let mut sd = vec![vec![0.0; checkpoints.len()]; labels.len()];
    for k in 0..labels.len() {
        for c in 0..checkpoints.len() {
            let errs: Vec<f64> = results.iter().map(|r| r.sq_errors[k][c]).collect();
            let (mean, var) = sample_mean_var(&errs);
            mse[k][c] = mean;
            sd[k][c] = (var / errs.len() as f64).sqrt();
        }
    }

    let mut report = header_line(cfg, Experiment::Mse, "none");
    report.push_str(&params_line(cfg));
    let adaptive_idx = schemes
        .iter()
        .position(|s| matches!(s, SchemeConfig::Adaptive { .. }));
    if let Some(ai) = adaptive_idx {
        for (k, label) in labels.iter().enumerate() {
            if k == ai {
                continue;
            }
            for (c, &cp) in checkpoints.iter().enumerate() {
                let ratio = mse[k][c] / mse[ai][c];
                let _ = writeln!(report, "# ratio-to-adaptive scheme={label} n={cp} ratio={ratio}");
            }
        }
    }
    report.push_str("scheme,n,mse,sd\n");
    for (k, label) in labels.iter().enumerate() {
        for (c, &cp) in checkpoints.iter().enumerate() {
            let _ = writeln!(report, "{label},{cp},{},{}", mse[k][c], sd[k][c]);
        }
    }
    Ok(report)
}

fn cv_provenance(cfg: &ExperimentConfig) -> Result<(CriticalValueTable, String)> {
    match &cfg.critical_values {
        None => {
            let t = CriticalValueTable::builtin();
            let p = format!("builtin(grid={},paths={},seed={})", t.grid, t.paths, t.seed);
            Ok((t, p))
        }
        Some(path) => {
            let t = CriticalValueTable::load(path)?;
            let p = format!(
                "file:{}(grid={},paths={},seed={})",
                path.display(),
                t.grid,
                t.paths,
                t.seed
            );
            Ok((t, p))
        }
    }
}

/// Empirical interval coverage and mean half-width per scheme and
/// coordinate, with intervals from either the plug-in sandwich or
/// random scaling.
pub fn run_coverage(cfg: &ExperimentConfig, method: CoverageMethod) -> Result<String> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let schemes = cfg.parsed_schemes()?;
    let d = cfg.model.dim();
    let truth = cfg.model.minimizer();
    let base = RngStream::new(cfg.seed, 0);
    let ws: Vec<f64> = schemes
        .iter()
        .map(|s| scheme_prefactor(s, cfg.n))
        .collect::<Result<_>>()?;

    let (table, provenance) = match method {
        CoverageMethod::Plugin => {
            // Fail on an unsupported model before spawning replications.
            PluginState::new(&cfg.model)?;
            (CriticalValueTable::builtin(), "none".to_string())
        }
        CoverageMethod::RandomScaling => cv_provenance(cfg)?,
    };

    let x0 = cfg.x0();
    let results = run_reps(cfg, |rep| {
        let mut rng = base.derive(rep);
        let mut avs: Vec<AveragerState> = schemes
            .iter()
            .map(|s| AveragerState::new(s, d, Some(cfg.n)))
            .collect::<Result<_>>()?;
        let mut plugin = match method {
            CoverageMethod::Plugin => Some(PluginState::new(&cfg.model)?),
            CoverageMethod::RandomScaling => None,
        };
        let mut rs = match method {
            CoverageMethod::Plugin => None,
            CoverageMethod::RandomScaling => Some(RandomScalingState::new(d)),
        };
        {
            let mut sinks: Vec<&mut dyn StreamSink> =
                avs.iter_mut().map(|a| a as &mut dyn StreamSink).collect();
            if let Some(p) = plugin.as_mut() {
                sinks.push(p);
            }
            if let Some(r) = rs.as_mut() {
                sinks.push(r);
            }
            run_trajectory(&cfg.model, &schedule, &x0, cfg.n, &mut rng, &mut sinks)?;
        }
        let mut out = ReplicationResult::default();
        for (k, av) in avs.iter().enumerate() {
            let est = av.estimate()?;
            let intervals = match method {
                CoverageMethod::Plugin => {
                    plugin_interval(plugin.as_ref().unwrap(), &est, ws[k], cfg.level)?
                }
                CoverageMethod::RandomScaling => {
                    rs_interval(rs.as_ref().unwrap(), &est, ws[k], cfg.level, &table)?
                }
            };
            out.hits
                .push(intervals.iter().zip(&truth).map(|(iv, t)| iv.contains(*t)).collect());
            out.halfwidths
                .push(intervals.iter().map(|iv| iv.halfwidth()).collect());
            out.estimates.push(est);
        }
        Ok(out)
    })?;

    let mut report = header_line(cfg, Experiment::Coverage, &provenance);
    report.push_str(&params_line(cfg));
    let _ = writeln!(report, "# method={}", method.label());
    if cfg.n < ASYMPTOTIC_N {
        let _ = writeln!(
            report,
            "# warning=below-asymptotic-regime n={} (interval theory is asymptotic; expect distortion)",
            cfg.n
        );
    }
    for (k, s) in schemes.iter().enumerate() {
        let _ = writeln!(report, "# prefactor scheme={s} w={}", ws[k]);
    }
    report.push_str("scheme,coord,coverage,mean_halfwidth\n");
    let reps = cfg.reps as f64;
    for (k, s) in schemes.iter().enumerate() {
        for j in 0..d {
            let hit = results.iter().filter(|r| r.hits[k][j]).count() as f64 / reps;
            let hw = results.iter().map(|r| r.halfwidths[k][j]).sum::<f64>() / reps;
            let _ = writeln!(report, "{s},{j},{hit},{hw}");
        }
    }
    Ok(report)
}

fn weight_rows(report: &mut String, label: &str, w: &[f64]) {
    for (i, v) in w.iter().enumerate() {
        let _ = writeln!(report, "{label},{},{v}", i + 1);
    }
}

/// Overlay data for weight-vector comparisons on the expectile model:
/// the Monte-Carlo oracle weights next to each configured scheme's
/// materialized weights, one row per index.
pub fn run_weights_compare(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    let rho = match cfg.model {
        ModelSpec::Expectile { rho, .. } => rho,
        _ => return Err(Error::config("weight comparison is defined for the expectile model")),
    };
    if cfg.n > 200 {
        return Err(Error::config("weight comparison materializes the iterate covariance; keep n <= 200"));
    }
    if cfg.reps < 1_000 {
        return Err(Error::config("oracle weights need at least 1000 replications"));
    }
    let schedule = cfg.schedule()?;
    let schemes = cfg.parsed_schemes()?;
    let base = RngStream::new(cfg.seed, 0);

    let oracle = with_workers(cfg.workers, || {
        oracle_weights_expectile(rho, &schedule, cfg.n, cfg.reps, &base.derive(ORACLE_TAG))
    })?;

    let mut report = header_line(cfg, Experiment::WeightsCompare, "none");
    report.push_str(&params_line(cfg));
    let _ = writeln!(report, "# oracle predicted_mse={}", oracle.predicted_mse);
    report.push_str("scheme,index,weight\n");
    weight_rows(&mut report, "oracle", &oracle.c);
    for s in &schemes {
        let wv = materialize_weights(s, cfg.n)?;
        weight_rows(&mut report, &s.label(), &wv.w);
    }
    Ok(report)
}

/// The oracle weights alone, same schema as the comparison report.
pub fn run_oracle_weights(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    let rho = match cfg.model {
        ModelSpec::Expectile { rho, .. } => rho,
        _ => return Err(Error::config("oracle weights are defined for the expectile model")),
    };
    if cfg.n > 200 {
        return Err(Error::config("oracle weights materialize the iterate covariance; keep n <= 200"));
    }
    if cfg.reps < 1_000 {
        return Err(Error::config("oracle weights need at least 1000 replications"));
    }
    let schedule = cfg.schedule()?;
    let base = RngStream::new(cfg.seed, 0);
    let oracle = with_workers(cfg.workers, || {
        oracle_weights_expectile(rho, &schedule, cfg.n, cfg.reps, &base.derive(ORACLE_TAG))
    })?;

    let mut report = header_line(cfg, Experiment::OracleWeights, "none");
    report.push_str(&params_line(cfg));
    let _ = writeln!(report, "# oracle predicted_mse={}", oracle.predicted_mse);
    report.push_str("scheme,index,weight\n");
    weight_rows(&mut report, "oracle", &oracle.c);
    Ok(report)
}
