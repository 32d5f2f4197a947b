//! Exact autoregressive sampling.
//!
//! Symbols are drawn left to right from the conditionals
//! `p(x_k | x_1..x_{k−1}) ∝ v_k(s) R_k v_k(s)ᵀ`, where `v_k(s)` is the prefix
//! row vector extended by symbol `s` and `R_k` the right environment of the
//! remaining sites. With the right environments cached a path costs
//! `O(M · P · D²)`.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{quadratic_form, vec_times_slice, Env, Mps};
use crate::paths::{PricePaths, SymbolPaths};
use crate::rng::{derive_seed, purpose, StreamRng};

/// The sampler's view of a model: the model plus its right environments.
pub struct Sampler<'a> {
    mps: &'a Mps,
    right_envs: Vec<Env>,
}

impl<'a> Sampler<'a> {
    pub fn new(mps: &'a Mps) -> Result<Self> {
        mps.log_partition()?;
        Ok(Self { mps, right_envs: mps.right_environments() })
    }

    /// One sequence and the log of the product of the conditionals used.
    pub fn sample(&self, rng: &mut StreamRng) -> Result<(Vec<u32>, f64)> {
        let m = self.mps.n_sites();
        let p = self.mps.physical_dim();
        let mut x = Vec::with_capacity(m);
        let mut v = vec![1.0];
        let mut log_prob = 0.0;
        let mut weights = vec![0.0; p];
        let mut cands: Vec<Vec<f64>> = Vec::with_capacity(p);
        for k in 0..m {
            let site = self.mps.site(k);
            let env = &self.right_envs[k + 1];
            cands.clear();
            for (s, w) in weights.iter_mut().enumerate() {
                let next = vec_times_slice(&v, site, s);
                *w = quadratic_form(&next, &env.mat).max(0.0);
                cands.push(next);
            }
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::ImpossiblePrefix { prefix: x });
            }
            let s = inverse_cdf(&weights, total, rng.uniform());
            log_prob += (weights[s] / total).ln();
            x.push(s as u32);
            // renormalize so the prefix vector stays O(1)
            v = std::mem::take(&mut cands[s]);
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
        }
        Ok((x, log_prob))
    }
}

/// Smallest `s` with `Σ_{r≤s} w_r > u·total`; zero-weight symbols are never chosen.
fn inverse_cdf(weights: &[f64], total: f64, u: f64) -> usize {
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (s, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = s;
        if acc > target {
            return s;
        }
    }
    // rounding left target at or past the accumulated total
    last
}

/// One sequence drawn from `mps`.
pub fn sample_one(mps: &Mps, rng: &mut StreamRng) -> Result<Vec<u32>> {
    Ok(Sampler::new(mps)?.sample(rng)?.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub symbols: SymbolPaths,
    pub decoded: PricePaths,
    pub seed: u64,
}

impl SampleBatch {
    /// Decoded paths as CSV, header `t1..tM`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.decoded.write_csv(path)
    }
}

/// `n` independent paths; path `i` uses stream `i` of the sampling seed.
pub fn sample_paths(mps: &Mps, n: usize, seed: u64) -> Result<SampleBatch> {
    let sampler = Sampler::new(mps)?;
    let base = derive_seed(seed, purpose::SAMPLE);
    let rows: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = StreamRng::new(base, i as u64);
            sampler.sample(&mut rng).map(|r| r.0)
        })
        .collect::<Result<_>>()?;
    let m = mps.n_sites();
    let data = rows.into_iter().flatten().collect();
    let symbols = SymbolPaths::new(n, m, 1, data)?;
    let decoded = mps.disc().decode_paths(&symbols)?;
    Ok(SampleBatch { symbols, decoded, seed })
}
