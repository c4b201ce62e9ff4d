//! Weighted averaging of SGD iterates.
//!
//! Every scheme here is a choice of weights w_{n,1..n} applied to the
//! iterate stream, x_tilde = sum_i w_{n,i} x_i. Each one has two faces
//! that must agree: a streaming recursion (`AveragerState`) that runs in
//! O(d) per step, and an explicit weight vector (`materialize_weights`)
//! used by the validators and the weight-comparison tooling. The schemes:
//!
//! * `uniform`: the running mean.
//! * `poly:gamma=G`: polynomially decaying weights that tilt mass toward
//!   late iterates; updates x_tilde_n = (1-beta_n) x_tilde_{n-1} +
//!   beta_n x_n with beta_n = (G+1)/(G+n).
//! * `suffix:kappa=K`: the plain average of the last ceil(K n) iterates.
//!   Streaming it exactly needs a buffer, so this scheme is offline.
//! * `online-suffix`: a two-block approximation of suffix averaging that
//!   keeps O(d) state. The covered window fraction oscillates in
//!   (1/2, 3/4] as blocks roll over at powers of two.
//! * `adaptive`: weights (1 + i^a - (i+1)^a)/n tied to the step-size
//!   exponent `a`, plus a heavier terminal weight n^(a-1). This is the
//!   scheme whose asymptotic variance prefactor hits 1.
//! * `explicit:@file.csv`: user-supplied weights for a fixed horizon.

use std::fmt;

use crate::error::{Error, Result};
use crate::sgd::{StepSchedule, StreamSink};

/// Explicit weights for a fixed horizon n = w.len(); index i (1-based)
/// multiplies iterate x_i.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    pub w: Vec<f64>,
}

impl WeightVector {
    pub fn n(&self) -> usize {
        self.w.len()
    }

    pub fn sum(&self) -> f64 {
        self.w.iter().sum()
    }

    /// n * sum of squared weights, the quantity whose limit scales the
    /// asymptotic variance.
    pub fn scaled_square_sum(&self) -> f64 {
        self.n() as f64 * self.w.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.is_empty() {
            return Err(Error::config("weight vector is empty"));
        }
        if self.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("weight vector contains non-finite entries"));
        }
        let s = self.sum();
        if (s - 1.0).abs() > 1e-8 {
            return Err(Error::config(format!(
                "weights must sum to 1 (got {s})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SchemeConfig {
    Uniform,
    PolyDecay { gamma: f64 },
    Suffix { kappa: f64 },
    OnlineSuffix,
    Adaptive { alpha: f64 },
    Explicit { weights: WeightVector },
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            SchemeConfig::Uniform | SchemeConfig::OnlineSuffix => Ok(()),
            SchemeConfig::PolyDecay { gamma } => {
                if !(*gamma >= 1.0 && gamma.is_finite()) {
                    Err(Error::config("poly decay needs gamma >= 1"))
                } else {
                    Ok(())
                }
            }
            SchemeConfig::Suffix { kappa } => {
                if !(*kappa > 0.0 && *kappa < 1.0) {
                    Err(Error::config("suffix needs kappa in (0, 1)"))
                } else {
                    Ok(())
                }
            }
            SchemeConfig::Adaptive { alpha } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    Err(Error::config("adaptive needs alpha in (0, 1)"))
                } else {
                    Ok(())
                }
            }
            SchemeConfig::Explicit { weights } => weights.validate(),
        }
    }

    /// Stable label used in CSV output.
    pub fn label(&self) -> String {
        match self {
            SchemeConfig::Uniform => "uniform".into(),
            SchemeConfig::PolyDecay { gamma } => format!("poly:gamma={gamma}"),
            SchemeConfig::Suffix { kappa } => format!("suffix:kappa={kappa}"),
            SchemeConfig::OnlineSuffix => "online-suffix".into(),
            SchemeConfig::Adaptive { .. } => "adaptive".into(),
            SchemeConfig::Explicit { .. } => "explicit".into(),
        }
    }
}

impl fmt::Display for SchemeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Parse a scheme string: `uniform`, `poly:gamma=3`, `suffix:kappa=0.5`,
/// `online-suffix`, `adaptive` (alpha taken from `default_alpha`, i.e.
/// the step schedule), `adaptive:alpha=0.7`, or `explicit:@weights.csv`.
/// Explicit weight files hold one weight per line; a trailing
/// comma-separated field per line is accepted so `scheme,index,weight`
/// exports load unchanged.
pub fn parse_scheme(s: &str, default_alpha: f64) -> Result<SchemeConfig> {
    let cfg = match s {
        "uniform" => SchemeConfig::Uniform,
        "online-suffix" => SchemeConfig::OnlineSuffix,
        "adaptive" => SchemeConfig::Adaptive {
            alpha: default_alpha,
        },
        _ => {
            if let Some(rest) = s.strip_prefix("poly:gamma=") {
                let gamma = parse_param(rest, s)?;
                SchemeConfig::PolyDecay { gamma }
            } else if let Some(rest) = s.strip_prefix("suffix:kappa=") {
                let kappa = parse_param(rest, s)?;
                SchemeConfig::Suffix { kappa }
            } else if let Some(rest) = s.strip_prefix("adaptive:alpha=") {
                let alpha = parse_param(rest, s)?;
                SchemeConfig::Adaptive { alpha }
            } else if let Some(path) = s.strip_prefix("explicit:@") {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::config(format!("cannot read weight file {path}: {e}"))
                })?;
                let weights = parse_weight_file(&text)?;
                SchemeConfig::Explicit { weights }
            } else {
                return Err(Error::config(format!("unknown scheme '{s}'")));
            }
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_param(text: &str, whole: &str) -> Result<f64> {
    text.parse::<f64>()
        .map_err(|_| Error::config(format!("bad numeric parameter in scheme '{whole}'")))
}

fn parse_weight_file(text: &str) -> Result<WeightVector> {
    let mut w = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.rsplit(',').next().unwrap().trim();
        match field.parse::<f64>() {
            Ok(v) => w.push(v),
            // Header lines ("weight", "scheme,index,weight") fall out here.
            Err(_) => continue,
        }
    }
    let wv = WeightVector { w };
    wv.validate()?;
    Ok(wv)
}

/// Suffix window length ceil(kappa * t). Products that land within 1e-9
/// of an integer are treated as that integer so binary rounding in
/// kappa * t cannot shift the window by one.
fn suffix_window(kappa: f64, t: u64) -> usize {
    let len = (kappa * t as f64 - 1e-9).ceil().max(1.0) as usize;
    len.min(t as usize)
}

fn ceil_log2(t: u64) -> u32 {
    debug_assert!(t >= 1);
    if t == 1 {
        0
    } else {
        64 - (t - 1).leading_zeros()
    }
}

/// First index excluded from the online-suffix window at time t:
/// floor(2^(ceil(log2 t) - 2)). Weights cover (start, t].
fn online_suffix_start(t: u64) -> u64 {
    let m = ceil_log2(t);
    if m >= 2 {
        1u64 << (m - 2)
    } else {
        0
    }
}

/// Explicit weights for a scheme at horizon n.
pub fn materialize_weights(cfg: &SchemeConfig, n: u64) -> Result<WeightVector> {
    assert!(n >= 1);
    let nf = n as f64;
    let w = match cfg {
        SchemeConfig::Uniform => vec![1.0 / nf; n as usize],
        SchemeConfig::PolyDecay { gamma } => {
            // Backward product recursion; the Gamma-function form of these
            // weights overflows past n ~ 170, this does not.
            let mut w = vec![0.0; n as usize];
            let mut cur = (gamma + 1.0) / (gamma + nf);
            w[n as usize - 1] = cur;
            for i in (1..n).rev() {
                cur *= i as f64 / (gamma + i as f64);
                w[i as usize - 1] = cur;
            }
            w
        }
        SchemeConfig::Suffix { kappa } => {
            let k = suffix_window(*kappa, n);
            let mut w = vec![0.0; n as usize];
            for wi in w.iter_mut().skip(n as usize - k) {
                *wi = 1.0 / k as f64;
            }
            w
        }
        SchemeConfig::OnlineSuffix => {
            let start = online_suffix_start(n) as usize;
            let len = n as usize - start;
            let mut w = vec![0.0; n as usize];
            for wi in w.iter_mut().skip(start) {
                *wi = 1.0 / len as f64;
            }
            w
        }
        SchemeConfig::Adaptive { alpha } => {
            let mut w = vec![0.0; n as usize];
            for i in 1..n {
                let step = ((i + 1) as f64).powf(*alpha) - (i as f64).powf(*alpha);
                w[i as usize - 1] = (1.0 - step) / nf;
            }
            w[n as usize - 1] = nf.powf(alpha - 1.0);
            w
        }
        SchemeConfig::Explicit { weights } => {
            if weights.n() as u64 != n {
                return Err(Error::config(format!(
                    "explicit weights are for horizon {}, requested {n}",
                    weights.n()
                )));
            }
            weights.w.clone()
        }
    };
    Ok(WeightVector { w })
}

/// Closed-form limit of n * sum w^2, where it exists.
pub fn prefactor(cfg: &SchemeConfig) -> Result<f64> {
    match cfg {
        SchemeConfig::Uniform => Ok(1.0),
        SchemeConfig::PolyDecay { gamma } => {
            Ok((gamma + 1.0) * (gamma + 1.0) / (2.0 * gamma + 1.0))
        }
        SchemeConfig::Suffix { kappa } => Ok(1.0 / kappa),
        SchemeConfig::Adaptive { .. } => Ok(1.0),
        SchemeConfig::OnlineSuffix => Err(Error::unsupported(
            "online-suffix has no prefactor limit (the window fraction oscillates); \
             use prefactor_numeric at the horizon of interest",
        )),
        SchemeConfig::Explicit { .. } => Err(Error::unsupported(
            "explicit weights have no closed-form prefactor; use prefactor_numeric",
        )),
    }
}

/// Finite-n variance prefactor n * sum w^2.
///
/// For the adaptive scheme the terminal weight n^(alpha-1) is excluded:
/// its contribution to the estimator error vanishes at a faster rate
/// than the CLT scale, so the variance-relevant prefactor is the limit
/// over the first n-1 weights (which is 1). Including it would make the
/// sum diverge like n^(2 alpha - 1) and misscale every interval built on
/// top of it.
pub fn prefactor_numeric(cfg: &SchemeConfig, n: u64) -> Result<f64> {
    let wv = materialize_weights(cfg, n)?;
    let square_sum: f64 = match cfg {
        SchemeConfig::Adaptive { .. } => {
            wv.w[..wv.n() - 1].iter().map(|v| v * v).sum()
        }
        _ => wv.w.iter().map(|v| v * v).sum(),
    };
    Ok(n as f64 * square_sum)
}

/// Diagnostics for the CLT weight conditions at horizon n.
#[derive(Clone, Debug)]
pub struct ConditionReport {
    pub n: u64,
    /// |sum w - 1|
    pub sum_abs_error: f64,
    /// max over i < n of n |w_i| (the uniform C/n bound)
    pub max_scaled_weight: f64,
    /// n |w_n|, reported separately because the adaptive scheme's
    /// terminal weight is exempt from the C/n bound by design
    pub terminal_scaled_weight: f64,
    /// n * sum of all squared weights (no terminal exemption here)
    pub n_sum_w_sq: f64,
    /// sum_i eta_i sum_{k>i} |w_k - w_i| exp(-lambda sum_{t=i+1..k} eta_t)
    pub smoothness_sum: f64,
    /// n^2 max |w_{i+1} - w_i|, for the C~/n^2 sufficient condition
    pub max_scaled_increment: f64,
    /// true when the scheme documents a terminal-weight exemption
    pub terminal_exempt: bool,
}

impl ConditionReport {
    /// Does the simpler sufficient smoothness condition hold for this
    /// bound constant?
    pub fn increment_bound_holds(&self, c_tilde: f64) -> bool {
        self.max_scaled_increment <= c_tilde
    }
}

/// Evaluate the weight conditions for a scheme at horizon n. `lambda`
/// is the exponential-forgetting rate of the underlying recursion,
/// min(smallest curvature eigenvalue, 1/(2 eta)).
///
/// The double sum is evaluated with a running decay product per outer
/// index and a hard cutoff once the decay drops below 1e-18; truncated
/// mass is bounded by 1e-18 * n * max|w|, far below anything reported.
pub fn check_theorem2(
    cfg: &SchemeConfig,
    n: u64,
    lambda: f64,
    schedule: &StepSchedule,
) -> Result<ConditionReport> {
    assert!(lambda > 0.0, "lambda must be positive");
    let wv = materialize_weights(cfg, n)?;
    let w = &wv.w;
    let nf = n as f64;
    let nu = n as usize;

    let sum_abs_error = (wv.sum() - 1.0).abs();
    let max_scaled_weight = w[..nu - 1]
        .iter()
        .map(|v| nf * v.abs())
        .fold(0.0f64, f64::max);
    let terminal_scaled_weight = nf * w[nu - 1].abs();
    let n_sum_w_sq = wv.scaled_square_sum();
    let max_scaled_increment = w
        .windows(2)
        .map(|p| (p[1] - p[0]).abs())
        .fold(0.0f64, f64::max)
        * nf
        * nf;

    // Precompute per-step decay factors exp(-lambda * eta_k) once; the
    // inner loop is then pure multiply-accumulate.
    let decay_step: Vec<f64> = (1..=n)
        .map(|k| (-lambda * schedule.step_size(k)).exp())
        .collect();

    let mut smoothness_sum = 0.0;
    for i in 1..nu {
        let wi = w[i - 1];
        let eta_i = schedule.step_size(i as u64);
        let mut decay = 1.0;
        let mut inner = 0.0;
        for k in (i + 1)..=nu {
            decay *= decay_step[k - 1];
            if decay < 1e-18 {
                break;
            }
            inner += (w[k - 1] - wi).abs() * decay;
        }
        smoothness_sum += eta_i * inner;
    }

    Ok(ConditionReport {
        n,
        sum_abs_error,
        max_scaled_weight,
        terminal_scaled_weight,
        n_sum_w_sq,
        smoothness_sum,
        max_scaled_increment,
        terminal_exempt: matches!(cfg, SchemeConfig::Adaptive { .. }),
    })
}

/// Average of the last ceil(kappa * n) entries of `buffer`, which must
/// hold at least that many of the most recent iterates.
pub fn finalize_suffix(buffer: &[Vec<f64>], n: u64, kappa: f64) -> Result<Vec<f64>> {
    assert!(kappa > 0.0 && kappa < 1.0);
    let k = suffix_window(kappa, n);
    if buffer.len() < k {
        return Err(Error::InsufficientBuffer {
            have: buffer.len(),
            need: k,
        });
    }
    let d = buffer[0].len();
    let mut out = vec![0.0; d];
    for x in &buffer[buffer.len() - k..] {
        for (o, v) in out.iter_mut().zip(x) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= k as f64;
    }
    Ok(out)
}

/// Fixed-capacity ring over the most recent iterates, stored flat.
#[derive(Clone, Debug)]
struct IterateRing {
    data: Vec<f64>,
    dim: usize,
    cap: usize,
}

impl IterateRing {
    fn new(dim: usize, cap: usize) -> Self {
        IterateRing {
            data: vec![0.0; dim * cap],
            dim,
            cap,
        }
    }

    fn store(&mut self, i: u64, x: &[f64]) {
        let slot = ((i - 1) % self.cap as u64) as usize * self.dim;
        self.data[slot..slot + self.dim].copy_from_slice(x);
    }

    /// Mean of iterates t-k+1..=t; valid while they are still resident.
    fn tail_mean(&self, t: u64, k: usize) -> Vec<f64> {
        debug_assert!(k >= 1 && k as u64 <= t && k <= self.cap);
        let mut out = vec![0.0; self.dim];
        for j in (t - k as u64 + 1)..=t {
            let slot = ((j - 1) % self.cap as u64) as usize * self.dim;
            for (o, v) in out.iter_mut().zip(&self.data[slot..slot + self.dim]) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= k as f64;
        }
        out
    }
}

#[derive(Clone, Debug)]
enum State {
    Uniform {
        mean: Vec<f64>,
    },
    Poly {
        est: Vec<f64>,
    },
    Suffix {
        ring: IterateRing,
    },
    OnlineSuffix {
        m: u32,
        s0: Vec<f64>,
        s1: Vec<f64>,
    },
    Adaptive {
        est: Vec<f64>,
        prev_x: Vec<f64>,
    },
    Explicit {
        buf: Vec<Vec<f64>>,
    },
}

/// Streaming averager: O(d) state and O(d) work per step for every
/// scheme except `suffix` and `explicit`, which buffer iterates (suffix
/// keeps a ring of ceil(kappa * horizon), explicit keeps everything).
#[derive(Clone, Debug)]
pub struct AveragerState {
    cfg: SchemeConfig,
    dim: usize,
    t: u64,
    state: State,
}

impl AveragerState {
    /// `horizon` bounds the suffix ring; it is required for `suffix`
    /// when you intend to query estimates up to that time. Servers that
    /// do not know the horizon may pass None to buffer without bound.
    pub fn new(cfg: &SchemeConfig, dim: usize, horizon: Option<u64>) -> Result<Self> {
        cfg.validate()?;
        assert!(dim >= 1);
        let state = match cfg {
            SchemeConfig::Uniform => State::Uniform {
                mean: vec![0.0; dim],
            },
            SchemeConfig::PolyDecay { .. } => State::Poly {
                est: vec![0.0; dim],
            },
            SchemeConfig::Suffix { kappa } => {
                let cap = match horizon {
                    Some(h) => suffix_window(*kappa, h),
                    None => {
                        return Err(Error::config(
                            "suffix averaging needs a horizon to size its buffer; \
                             pass one or use online-suffix",
                        ))
                    }
                };
                State::Suffix {
                    ring: IterateRing::new(dim, cap),
                }
            }
            SchemeConfig::OnlineSuffix => State::OnlineSuffix {
                m: 0,
                s0: vec![0.0; dim],
                s1: vec![0.0; dim],
            },
            SchemeConfig::Adaptive { .. } => State::Adaptive {
                est: vec![0.0; dim],
                prev_x: vec![0.0; dim],
            },
            SchemeConfig::Explicit { .. } => State::Explicit { buf: Vec::new() },
        };
        Ok(AveragerState {
            cfg: cfg.clone(),
            dim,
            t: 0,
            state,
        })
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Fold in iterate x_i. Steps must arrive in order starting at 1.
    pub fn update(&mut self, i: u64, x: &[f64]) -> Result<()> {
        if i != self.t + 1 {
            return Err(Error::OutOfOrder {
                expected: self.t + 1,
                got: i,
            });
        }
        debug_assert_eq!(x.len(), self.dim);
        let t = i;
        match &mut self.state {
            State::Uniform { mean } => {
                let tf = t as f64;
                for (m, v) in mean.iter_mut().zip(x) {
                    *m += (v - *m) / tf;
                }
            }
            State::Poly { est } => {
                let SchemeConfig::PolyDecay { gamma } = &self.cfg else {
                    unreachable!()
                };
                // beta_1 = 1, so the first update installs x_1 exactly.
                let beta = (gamma + 1.0) / (gamma + t as f64);
                for (e, v) in est.iter_mut().zip(x) {
                    *e += beta * (v - *e);
                }
            }
            State::Suffix { ring } => ring.store(t, x),
            State::OnlineSuffix { m, s0, s1 } => {
                if t > 1u64 << *m {
                    *m += 1;
                    std::mem::swap(s0, s1);
                    s1.copy_from_slice(x);
                } else {
                    for (s, v) in s1.iter_mut().zip(x) {
                        *s += v;
                    }
                }
            }
            State::Adaptive { est, prev_x } => {
                let SchemeConfig::Adaptive { alpha } = &self.cfg else {
                    unreachable!()
                };
                if t == 1 {
                    // c_{1,1} = 1^(alpha-1) = 1.
                    est.copy_from_slice(x);
                } else {
                    let np1 = t as f64;
                    let shrink = (np1 - 1.0) / np1;
                    let mid = (1.0 - np1.powf(*alpha)) / np1;
                    let last = np1.powf(alpha - 1.0);
                    for ((e, p), v) in est.iter_mut().zip(prev_x.iter()).zip(x) {
                        *e = shrink * *e + mid * *p + last * *v;
                    }
                }
                prev_x.copy_from_slice(x);
            }
            State::Explicit { buf } => {
                let SchemeConfig::Explicit { weights } = &self.cfg else {
                    unreachable!()
                };
                if t as usize > weights.n() {
                    return Err(Error::config(format!(
                        "explicit weights cover {} steps, got step {t}",
                        weights.n()
                    )));
                }
                buf.push(x.to_vec());
            }
        }
        self.t = t;
        Ok(())
    }

    /// Current weighted-average estimate. Suffix estimates cover the
    /// last ceil(kappa * t) iterates; explicit weights are only defined
    /// at their own horizon.
    pub fn estimate(&self) -> Result<Vec<f64>> {
        if self.t == 0 {
            return Err(Error::InsufficientBuffer { have: 0, need: 1 });
        }
        match &self.state {
            State::Uniform { mean } => Ok(mean.clone()),
            State::Poly { est } => Ok(est.clone()),
            State::Suffix { ring } => {
                let SchemeConfig::Suffix { kappa } = &self.cfg else {
                    unreachable!()
                };
                let k = suffix_window(*kappa, self.t);
                if k > ring.cap || (k as u64) > self.t {
                    return Err(Error::InsufficientBuffer {
                        have: ring.cap,
                        need: k,
                    });
                }
                Ok(ring.tail_mean(self.t, k))
            }
            State::OnlineSuffix { m, s0, s1 } => {
                let start = if *m >= 2 { 1u64 << (*m - 2) } else { 0 };
                let len = (self.t - start) as f64;
                Ok(s0
                    .iter()
                    .zip(s1)
                    .map(|(a, b)| (a + b) / len)
                    .collect())
            }
            State::Adaptive { est, .. } => Ok(est.clone()),
            State::Explicit { buf } => {
                let SchemeConfig::Explicit { weights } = &self.cfg else {
                    unreachable!()
                };
                if buf.len() != weights.n() {
                    return Err(Error::InsufficientBuffer {
                        have: buf.len(),
                        need: weights.n(),
                    });
                }
                let mut out = vec![0.0; self.dim];
                for (wi, x) in weights.w.iter().zip(buf) {
                    for (o, v) in out.iter_mut().zip(x) {
                        *o += wi * v;
                    }
                }
                Ok(out)
            }
        }
    }
}

impl StreamSink for AveragerState {
    fn accept(&mut self, i: u64, x: &[f64]) -> Result<()> {
        self.update(i, x)
    }
}
