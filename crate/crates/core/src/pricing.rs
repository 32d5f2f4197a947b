//! Discrete-monitoring payoffs, Monte Carlo estimates, Black–Scholes prices
//! and implied volatility. The risk-free rate is zero throughout, so nothing
//! is discounted.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ROW_CHUNK;
use crate::paths::PricePaths;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    European,
    Asian,
    Lookback,
    #[serde(alias = "barrier")]
    UpAndOutBarrier,
}

impl fmt::Display for OptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptionKind::European => "european",
            OptionKind::Asian => "asian",
            OptionKind::Lookback => "lookback",
            OptionKind::UpAndOutBarrier => "up_and_out_barrier",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionSpec {
    pub kind: OptionKind,
    pub strike: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<f64>,
}

impl OptionSpec {
    pub fn european(strike: f64) -> Self {
        Self { kind: OptionKind::European, strike, barrier: None }
    }

    pub fn asian(strike: f64) -> Self {
        Self { kind: OptionKind::Asian, strike, barrier: None }
    }

    pub fn lookback(strike: f64) -> Self {
        Self { kind: OptionKind::Lookback, strike, barrier: None }
    }

    pub fn barrier(strike: f64, barrier: f64) -> Self {
        Self { kind: OptionKind::UpAndOutBarrier, strike, barrier: Some(barrier) }
    }

    /// The four contracts of the benchmark tables: K = 100, B = 105.
    pub fn benchmark_set() -> Vec<OptionSpec> {
        vec![Self::european(100.0), Self::asian(100.0), Self::lookback(100.0), Self::barrier(100.0, 105.0)]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::InvalidInput(format!("strike must be positive, got {}", self.strike)));
        }
        match (self.kind, self.barrier) {
            (OptionKind::UpAndOutBarrier, None) => {
                Err(Error::InvalidInput("barrier option needs a barrier level".into()))
            }
            (OptionKind::UpAndOutBarrier, Some(b)) if !(b > 0.0 && b.is_finite()) => {
                Err(Error::InvalidInput(format!("barrier must be positive, got {b}")))
            }
            (OptionKind::UpAndOutBarrier, Some(_)) => Ok(()),
            (kind, Some(_)) => Err(Error::InvalidInput(format!("{kind} option takes no barrier"))),
            (_, None) => Ok(()),
        }
    }
}

/// Payoff on the observed prices `S_{t_1}, …, S_{t_M}`.
pub fn payoff(spec: &OptionSpec, path: &[f64]) -> Result<f64> {
    spec.validate()?;
    if path.is_empty() {
        return Err(Error::InvalidInput("payoff needs at least one observation".into()));
    }
    Ok(payoff_unchecked(spec, path))
}

fn payoff_unchecked(spec: &OptionSpec, path: &[f64]) -> f64 {
    let k = spec.strike;
    let last = path[path.len() - 1];
    let max = path.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match spec.kind {
        OptionKind::European => (last - k).max(0.0),
        OptionKind::Asian => (path.iter().sum::<f64>() / path.len() as f64 - k).max(0.0),
        OptionKind::Lookback => (max - k).max(0.0),
        OptionKind::UpAndOutBarrier => {
            if max < spec.barrier.expect("validated") {
                (last - k).max(0.0)
            } else {
                0.0
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl PriceEstimate {
    /// Sample mean and `s/√n` with the `n − 1` sample standard deviation.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 values for a standard error, got {n}")));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        Ok(Self { mean, std_error: sd / (n as f64).sqrt(), n_samples: n })
    }
}

/// Payoff of every path, evaluated on the `t1..tM` columns.
pub fn payoffs(spec: &OptionSpec, paths: &PricePaths) -> Result<Vec<f64>> {
    spec.validate()?;
    let obs = paths.observed();
    if obs.n_cols() == 0 {
        return Err(Error::InvalidInput("paths have no observation columns".into()));
    }
    let width = obs.n_cols();
    Ok(obs
        .data()
        .par_chunks(ROW_CHUNK * width)
        .flat_map_iter(|chunk| chunk.chunks_exact(width).map(|r| payoff_unchecked(spec, r)).collect::<Vec<_>>())
        .collect())
}

pub fn monte_carlo_price(spec: &OptionSpec, paths: &PricePaths) -> Result<PriceEstimate> {
    if paths.n_paths() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 paths, got {}", paths.n_paths())));
    }
    PriceEstimate::from_values(&payoffs(spec, paths)?)
}

/// Standard normal CDF, `Φ(x) = erfc(−x/√2)/2`.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Black–Scholes call at zero rate: `Φ(d₊)S₀ − Φ(d₋)K`,
/// `d± = (ln(S₀/K) ± σ²t/2)/(σ√t)`.
pub fn bs_call_price(s0: f64, k: f64, t: f64, sigma: f64) -> Result<f64> {
    for (name, v) in [("s0", s0), ("k", k), ("t", t)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!("Black-Scholes {name} must be positive, got {v}")));
        }
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("Black-Scholes sigma must be non-negative, got {sigma}")));
    }
    let sd = sigma * t.sqrt();
    if sd < 1e-12 {
        return Ok((s0 - k).max(0.0));
    }
    let d_plus = ((s0 / k).ln() + 0.5 * sd * sd) / sd;
    let d_minus = d_plus - sd;
    Ok(s0 * norm_cdf(d_plus) - k * norm_cdf(d_minus))
}

pub const IV_LOWER: f64 = 1e-6;
pub const IV_UPPER: f64 = 5.0;
const IV_PRICE_TOL: f64 = 1e-10;

/// σ with `bs_call_price(s0, k, t, σ) = c`, searched on `[1e-6, 5]`.
///
/// Newton steps on the bracket, falling back to bisection whenever a step
/// leaves it, until the price residual is within `1e-10`.
pub fn implied_vol(c: f64, s0: f64, k: f64, t: f64) -> Result<f64> {
    let intrinsic = (s0 - k).max(0.0);
    if !c.is_finite() {
        return Err(Error::NoImpliedVol(format!("price {c} is not finite")));
    }
    if c <= intrinsic {
        return Err(Error::NoImpliedVol(format!("price {c} is at or below the lower bound max(S0 - K, 0) = {intrinsic}")));
    }
    if c >= s0 {
        return Err(Error::NoImpliedVol(format!("price {c} is at or above the upper bound S0 = {s0}")));
    }
    let f = |s: f64| bs_call_price(s0, k, t, s).map(|p| p - c);
    let (mut lo, mut hi) = (IV_LOWER, IV_UPPER);
    let f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo > 0.0 {
        return Err(Error::NoImpliedVol(format!("price {c} is below the price at sigma = {IV_LOWER}")));
    }
    if f_hi < 0.0 {
        return Err(Error::NoImpliedVol(format!("price {c} is above the price at sigma = {IV_UPPER}")));
    }
    let mut sigma = 0.5 * (lo + hi);
    for _ in 0..200 {
        let r = f(sigma)?;
        if r.abs() <= IV_PRICE_TOL {
            return Ok(sigma);
        }
        if r > 0.0 {
            hi = sigma;
        } else {
            lo = sigma;
        }
        let vega = bs_vega(s0, k, t, sigma);
        let newton = sigma - r / vega;
        sigma = if vega > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-15 {
            break;
        }
    }
    let r = f(sigma)?;
    if r.abs() <= IV_PRICE_TOL {
        Ok(sigma)
    } else {
        Err(Error::NoImpliedVol(format!("root search stalled at sigma = {sigma} with residual {r:e}")))
    }
}

fn bs_vega(s0: f64, k: f64, t: f64, sigma: f64) -> f64 {
    let sd = sigma * t.sqrt();
    let d_plus = ((s0 / k).ln() + 0.5 * sd * sd) / sd;
    s0 * t.sqrt() * (-0.5 * d_plus * d_plus).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// One row of a price report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceRecord {
    pub option: OptionKind,
    pub strike: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<f64>,
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iv_error: Option<String>,
}

impl PriceRecord {
    /// From an estimate; the implied volatility is attached for European
    /// options only, given the spot and maturity.
    pub fn new(spec: &OptionSpec, est: PriceEstimate, s0: f64, maturity: f64) -> Self {
        let (iv, iv_error) = if spec.kind == OptionKind::European {
            match implied_vol(est.mean, s0, spec.strike, maturity) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            }
        } else {
            (None, None)
        };
        Self {
            option: spec.kind,
            strike: spec.strike,
            barrier: spec.barrier,
            mean: est.mean,
            std_error: est.std_error,
            n: est.n_samples,
            iv,
            iv_error,
        }
    }
}
