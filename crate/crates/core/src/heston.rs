//! Heston paths by Euler–Maruyama with reflected variance.
//!
//! ```text
//! S_{i+1} = S_i + √ν_i S_i √Δt Z^S
//! ν_{i+1} = ν_i + κ(θ − ν_i)Δt + ξ √ν_i √Δt Z^ν,   ν_{i+1} ← |ν_{i+1}|
//! ```
//!
//! `(Z^S, Z^ν)` is a standard bivariate normal with correlation `ρ`. Path `i`
//! draws from its own stream, so output does not depend on the thread count.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::PricePaths;
use crate::rng::{derive_seed, purpose, StreamRng, RNG_ALGORITHM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HestonParams {
    pub s0: f64,
    pub v0: f64,
    pub kappa: f64,
    pub theta: f64,
    pub xi: f64,
    pub rho: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl Default for HestonParams {
    fn default() -> Self {
        Self { s0: 100.0, v0: 0.04, kappa: 1.0, theta: 0.04, xi: 2.0, rho: -0.7, dt: 1.0 / 250.0, n_steps: 5 }
    }
}

impl HestonParams {
    /// `κ = 0` and `ξ = 0` are accepted so the constant-volatility limit can
    /// be simulated directly.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidInput(format!("Heston parameter {what} = {v} out of range")));
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return bad("s0", self.s0);
        }
        if !(self.v0 >= 0.0 && self.v0.is_finite()) {
            return bad("v0", self.v0);
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad("kappa", self.kappa);
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return bad("theta", self.theta);
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return bad("xi", self.xi);
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return bad("rho", self.rho);
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", self.dt);
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidInput("Heston n_steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Option maturity `M·Δt`.
    pub fn maturity(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }
}

/// `(z_s, ρ z_s + √(1−ρ²) z⊥)`.
pub fn correlated_normal_pair(rho: f64, rng: &mut StreamRng) -> (f64, f64) {
    let (zs, zp) = rng.normal_pair();
    (zs, rho * zs + (1.0 - rho * rho).max(0.0).sqrt() * zp)
}

fn simulate_path(p: &HestonParams, rng: &mut StreamRng, out: &mut [f64], path: usize) -> Result<()> {
    let sq_dt = p.dt.sqrt();
    let mut s = p.s0;
    let mut v = p.v0;
    out[0] = s;
    for i in 0..p.n_steps {
        let (zs, zv) = correlated_normal_pair(p.rho, rng);
        let sq_v = v.sqrt();
        s += sq_v * s * sq_dt * zs;
        v += p.kappa * (p.theta - v) * p.dt + p.xi * sq_v * sq_dt * zv;
        if v < 0.0 {
            v = -v;
        }
        if !s.is_finite() || !v.is_finite() {
            return Err(Error::NonFinite(format!("Heston state on path {path}, step {}", i + 1)));
        }
        out[i + 1] = s;
    }
    Ok(())
}

/// `n_paths` paths with columns `t0..tM` (the first is the constant `S_0`).
pub fn heston_paths(params: &HestonParams, n_paths: usize, seed: u64) -> Result<PricePaths> {
    params.validate()?;
    if n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be at least 1".into()));
    }
    let width = params.n_steps + 1;
    let base = derive_seed(seed, purpose::HESTON);
    let mut data = vec![0.0; n_paths * width];
    data.par_chunks_mut(width).enumerate().try_for_each(|(i, row)| {
        let mut rng = StreamRng::new(base, i as u64);
        simulate_path(params, &mut rng, row, i)
    })?;
    PricePaths::new(n_paths, width, 0, data)
}

/// JSON sidecar written next to a simulated CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HestonSidecar {
    pub params: HestonParams,
    pub n_paths: usize,
    pub seed: u64,
    pub rng: String,
}

impl HestonSidecar {
    pub fn new(params: &HestonParams, n_paths: usize, seed: u64) -> Self {
        Self { params: params.clone(), n_paths, seed, rng: RNG_ALGORITHM.to_string() }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
