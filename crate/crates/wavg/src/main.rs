//! Command-line front end for the experiment harness.
//!
//! Configuration comes from an optional JSON file (`--config`) with
//! individual flags overriding its fields; without a file, `--model`
//! plus the flag defaults describe the run. Reports go to `--out` or
//! stdout. Exit codes: 0 success, 2 configuration error, 3 numerical
//! failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use wavg::averaging::check_theorem2;
use wavg::error::{Error, Result};
use wavg::harness::{
    run_coverage, run_mse, run_normality, run_oracle_weights, run_weights_compare,
    scheme_prefactor, with_workers, CoverageMethod, Experiment, ExperimentConfig,
};
use wavg::inference::{simulate_critical_values, DEFAULT_LEVELS};
use wavg::models::ModelSpec;
use wavg::numerics::RngStream;

#[derive(Parser)]
#[command(name = "wavg", version, about = "Weighted-average SGD estimators: simulation studies, optimal weights, and online confidence intervals")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Monte-Carlo studies written as CSV reports
    Simulate {
        #[command(subcommand)]
        which: SimulateCmd,
    },
    /// Monte-Carlo optimal weights for the expectile model
    OracleWeights(RunArgs),
    /// Simulate the random-scaling critical-value table
    CriticalValues(CriticalValuesArgs),
    /// Evaluate the CLT weight conditions for schemes and print the report
    CheckScheme(CheckSchemeArgs),
}

#[derive(Subcommand)]
enum SimulateCmd {
    /// Standardized-error study (CSV: scheme,coord,rep,std_error_scaled,std_error_unscaled)
    Normality(RunArgs),
    /// Monte-Carlo MSE at checkpoints (CSV: scheme,n,mse,sd)
    Mse(RunArgs),
    /// Interval coverage (CSV: scheme,coord,coverage,mean_halfwidth)
    Coverage(CoverageArgs),
    /// Oracle vs scheme weights overlay (CSV: scheme,index,weight)
    WeightsCompare(RunArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelKind {
    Mean,
    Linear,
    Logistic,
    Expectile,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Plugin,
    RandomScaling,
}

impl From<MethodArg> for CoverageMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Plugin => CoverageMethod::Plugin,
            MethodArg::RandomScaling => CoverageMethod::RandomScaling,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model kind; required unless --config supplies one
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    /// Dimension when building a linear/logistic model without --xstar
    #[arg(long)]
    dim: Option<usize>,
    /// Minimizer: a scalar for mean, comma-separated for linear/logistic
    #[arg(long)]
    xstar: Option<String>,
    /// Noise standard deviation (mean and linear models)
    #[arg(long)]
    sigma: Option<f64>,
    /// Expectile level in (0, 1)
    #[arg(long)]
    rho: Option<f64>,
    /// Step-size scale: eta_i = eta * i^(-alpha)
    #[arg(long)]
    eta: Option<f64>,
    /// Step-size exponent; the theory needs alpha in (0.5, 1)
    #[arg(long)]
    alpha: Option<f64>,
    /// Replacement for the first step size only
    #[arg(long)]
    eta1: Option<f64>,
    /// Horizon (steps per replication)
    #[arg(long)]
    n: Option<u64>,
    /// Number of replications
    #[arg(long)]
    reps: Option<u64>,
    /// Base seed; replication r uses the derived stream for r
    #[arg(long)]
    seed: Option<u64>,
    /// Averaging scheme (repeatable): uniform, poly:gamma=3,
    /// suffix:kappa=0.5, online-suffix, adaptive, adaptive:alpha=0.7,
    /// explicit:@weights.csv
    #[arg(long = "scheme")]
    schemes: Vec<String>,
    /// Confidence level for coverage studies
    #[arg(long)]
    level: Option<f64>,
    /// MSE evaluation horizons, comma-separated (defaults to n)
    #[arg(long)]
    checkpoints: Option<String>,
    /// Start iterate, comma-separated (defaults to zeros)
    #[arg(long)]
    x0: Option<String>,
    /// Draws for Monte-Carlo sandwich truths (logistic normality)
    #[arg(long)]
    sandwich_reps: Option<u64>,
    /// Critical-value table CSV; the built-in table when absent
    #[arg(long)]
    critical_values: Option<PathBuf>,
    /// Report file; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 means all cores
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct CoverageArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Interval construction
    #[arg(long, value_enum, default_value_t = MethodArg::Plugin)]
    method: MethodArg,
}

#[derive(Args)]
struct CriticalValuesArgs {
    /// Discretization points per simulated path
    #[arg(long, default_value_t = 10_000)]
    grid: u64,
    /// Simulated paths
    #[arg(long, default_value_t = 1_000_000)]
    paths: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Table file; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 means all cores
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct CheckSchemeArgs {
    /// Scheme to check (repeatable)
    #[arg(long = "scheme", required = true)]
    schemes: Vec<String>,
    #[arg(long, default_value_t = 10_000)]
    n: u64,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Step-size exponent; the theory needs alpha in (0.5, 1)
    #[arg(long, default_value_t = 0.667)]
    alpha: f64,
    #[arg(long)]
    eta1: Option<f64>,
    /// Exponential-forgetting rate of the recursion:
    /// min(smallest curvature eigenvalue, 1/(2 eta))
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// If set, also report whether n^2 max|w_{i+1}-w_i| <= ctilde
    #[arg(long)]
    ctilde: Option<f64>,
    /// Report file; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("{what}: cannot parse '{t}' as a number")))
        })
        .collect()
}

fn parse_u64_list(s: &str, what: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|_| Error::config(format!("{what}: cannot parse '{t}' as an integer")))
        })
        .collect()
}

/// Minimizer vector from --xstar/--dim: an explicit list wins; --dim
/// alone fills with ones.
fn xstar_vector(args: &RunArgs) -> Result<Vec<f64>> {
    match (&args.xstar, args.dim) {
        (Some(s), d) => {
            let v = parse_f64_list(s, "--xstar")?;
            if let Some(d) = d {
                if v.len() != d {
                    return Err(Error::config(format!(
                        "--xstar has {} entries but --dim is {d}",
                        v.len()
                    )));
                }
            }
            Ok(v)
        }
        (None, Some(d)) => Ok(vec![1.0; d]),
        (None, None) => Err(Error::config("this model needs --xstar or --dim")),
    }
}

fn build_model(args: &RunArgs, kind: ModelKind) -> Result<ModelSpec> {
    let model = match kind {
        ModelKind::Mean => {
            let xs = match &args.xstar {
                Some(s) => {
                    let v = parse_f64_list(s, "--xstar")?;
                    if v.len() != 1 {
                        return Err(Error::config("the mean model takes a scalar --xstar"));
                    }
                    v[0]
                }
                None => 0.0,
            };
            ModelSpec::Mean {
                x_star: xs,
                noise_sigma: args.sigma.unwrap_or(1.0),
            }
        }
        ModelKind::Linear => ModelSpec::Linear {
            x_star: xstar_vector(args)?,
            noise_sigma: args.sigma.unwrap_or(1.0),
        },
        ModelKind::Logistic => ModelSpec::Logistic {
            x_star: xstar_vector(args)?,
        },
        ModelKind::Expectile => ModelSpec::Expectile {
            rho: args.rho.unwrap_or(0.5),
            response: Default::default(),
        },
    };
    model.validate()?;
    Ok(model)
}

/// Apply model-shaping flags to a config-supplied model in place.
fn patch_model(model: &mut ModelSpec, args: &RunArgs) -> Result<()> {
    if args.dim.is_some() {
        return Err(Error::config("--dim needs --model; it cannot reshape a config-file model"));
    }
    if let Some(s) = &args.xstar {
        let v = parse_f64_list(s, "--xstar")?;
        match model {
            ModelSpec::Mean { x_star, .. } => {
                if v.len() != 1 {
                    return Err(Error::config("the mean model takes a scalar --xstar"));
                }
                *x_star = v[0];
            }
            ModelSpec::Linear { x_star, .. } | ModelSpec::Logistic { x_star } => {
                if v.len() != x_star.len() {
                    return Err(Error::config(format!(
                        "--xstar has {} entries but the configured model has dimension {}",
                        v.len(),
                        x_star.len()
                    )));
                }
                *x_star = v;
            }
            ModelSpec::Expectile { .. } => {
                return Err(Error::config("--xstar does not apply to the expectile model"));
            }
        }
    }
    if let Some(s) = args.sigma {
        match model {
            ModelSpec::Mean { noise_sigma, .. } | ModelSpec::Linear { noise_sigma, .. } => {
                *noise_sigma = s;
            }
            _ => return Err(Error::config("--sigma applies to the mean and linear models")),
        }
    }
    if let Some(r) = args.rho {
        match model {
            ModelSpec::Expectile { rho, .. } => *rho = r,
            _ => return Err(Error::config("--rho applies to the expectile model")),
        }
    }
    Ok(())
}

fn build_config(args: &RunArgs, experiment: Experiment) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            match args.model {
                Some(kind) => cfg.model = build_model(args, kind)?,
                None => patch_model(&mut cfg.model, args)?,
            }
            cfg
        }
        None => {
            let kind = args
                .model
                .ok_or_else(|| Error::config("either --config or --model is required"))?;
            let model = build_model(args, kind)?;
            let model_json = serde_json::to_string(&model)
                .map_err(|e| Error::config(format!("model does not serialize: {e}")))?;
            // Route through the JSON loader so flag-only runs share the
            // config-file defaults.
            ExperimentConfig::from_json(&format!("{{\"model\":{model_json}}}"))?
        }
    };
    cfg.experiment = Some(experiment);
    if let Some(v) = args.eta {
        cfg.eta = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if args.eta1.is_some() {
        cfg.eta1 = args.eta1;
    }
    if !args.schemes.is_empty() {
        cfg.schemes = args.schemes.clone();
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.reps {
        cfg.reps = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.level {
        cfg.level = v;
    }
    if let Some(s) = &args.checkpoints {
        cfg.checkpoints = parse_u64_list(s, "--checkpoints")?;
    }
    if let Some(s) = &args.x0 {
        cfg.x0 = Some(parse_f64_list(s, "--x0")?);
    }
    if let Some(v) = args.sandwich_reps {
        cfg.sandwich_reps = v;
    }
    if args.critical_values.is_some() {
        cfg.critical_values = args.critical_values.clone();
    }
    if let Some(v) = args.workers {
        cfg.workers = v;
    }
    if args.out.is_some() {
        cfg.output = args.out.clone();
    }
    require_theory_alpha(cfg.alpha)?;
    cfg.validate()?;
    Ok(cfg)
}

/// The library schedule accepts any alpha in (0, 1); the command line
/// holds runs to the range the asymptotics cover.
fn require_theory_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.5 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "alpha = {alpha}: the step-size exponent must lie strictly between 0.5 and 1"
        )))
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run_simulate(which: SimulateCmd) -> Result<()> {
    let (cfg, report) = match which {
        SimulateCmd::Normality(args) => {
            let cfg = build_config(&args, Experiment::Normality)?;
            let report = run_normality(&cfg)?;
            (cfg, report)
        }
        SimulateCmd::Mse(args) => {
            let cfg = build_config(&args, Experiment::Mse)?;
            let report = run_mse(&cfg)?;
            (cfg, report)
        }
        SimulateCmd::Coverage(args) => {
            let cfg = build_config(&args.run, Experiment::Coverage)?;
            let report = run_coverage(&cfg, args.method.into())?;
            (cfg, report)
        }
        SimulateCmd::WeightsCompare(args) => {
            let cfg = build_config(&args, Experiment::WeightsCompare)?;
            let report = run_weights_compare(&cfg)?;
            (cfg, report)
        }
    };
    emit(&cfg.output, &report)
}

fn run_check_scheme(args: &CheckSchemeArgs) -> Result<()> {
    require_theory_alpha(args.alpha)?;
    let mut schedule = wavg::sgd::StepSchedule::new(args.eta, args.alpha)?;
    if let Some(e1) = args.eta1 {
        schedule = schedule.with_override_first(e1);
    }
    if !(args.lambda > 0.0 && args.lambda.is_finite()) {
        return Err(Error::config("lambda must be positive and finite"));
    }
    let mut text = String::new();
    for raw in &args.schemes {
        let scheme = wavg::averaging::parse_scheme(raw, args.alpha)?;
        let report = check_theorem2(&scheme, args.n, args.lambda, &schedule)?;
        let w = scheme_prefactor(&scheme, args.n)?;
        text.push_str(&format!(
            "scheme={} n={} lambda={}\n",
            scheme, report.n, args.lambda
        ));
        text.push_str(&format!("  sum_weights_error     = {}\n", report.sum_abs_error));
        text.push_str(&format!("  max_scaled_weight     = {}   (sup of n|w_i|, i < n)\n", report.max_scaled_weight));
        text.push_str(&format!(
            "  terminal_scaled_weight= {}   (n|w_n|{})\n",
            report.terminal_scaled_weight,
            if report.terminal_exempt {
                ", exempt from the C/n bound"
            } else {
                ""
            }
        ));
        text.push_str(&format!("  n_sum_w_sq            = {}\n", report.n_sum_w_sq));
        text.push_str(&format!("  smoothness_sum        = {}\n", report.smoothness_sum));
        text.push_str(&format!("  n2_max_increment      = {}\n", report.max_scaled_increment));
        if let Some(c) = args.ctilde {
            text.push_str(&format!(
                "  increment_bound(ctilde={c}) = {}\n",
                if report.increment_bound_holds(c) {
                    "holds"
                } else {
                    "violated"
                }
            ));
        }
        text.push_str(&format!("  prefactor             = {w}\n"));
    }
    emit(&args.out, &text)
}

fn run_critical_values(args: &CriticalValuesArgs) -> Result<()> {
    if args.grid < 1_000 {
        return Err(Error::config("grid must be at least 1000"));
    }
    if args.paths < 100_000 {
        return Err(Error::config("paths must be at least 100000"));
    }
    let rng = RngStream::new(args.seed, 0);
    let table = with_workers(args.workers, || {
        simulate_critical_values(args.grid, args.paths, &DEFAULT_LEVELS, &rng)
    })?;
    emit(&args.out, &table.to_csv())
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Simulate { which } => run_simulate(which),
        Cmd::OracleWeights(args) => {
            let cfg = build_config(&args, Experiment::OracleWeights)?;
            let report = run_oracle_weights(&cfg)?;
            emit(&cfg.output, &report)
        }
        Cmd::CriticalValues(args) => run_critical_values(&args),
        Cmd::CheckScheme(args) => run_check_scheme(&args),
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
