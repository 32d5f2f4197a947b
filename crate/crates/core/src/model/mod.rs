//! Matrix product state over `m`-bit price symbols.
//!
//! An [`Mps`] with `M` sites assigns the amplitude
//!
//! ```text
//! Ψ(x_1..x_M) = A1[x_1] · A2[x_2] ⋯ AM[x_M]
//! ```
//!
//! where `Aj[s]` is the `D_{j-1} × D_j` slice of site `j` at physical index
//! `s`, and `D_0 = D_M = 1`. Probabilities follow the Born rule
//! `p(x) = Ψ(x)² / Z` with `Z = Σ_x Ψ(x)²`.
//!
//! Sites are indexed from 0 in code. Chained contractions keep their working
//! buffers inside `[1e-150, 1e150]` by tracked power-of-two rescaling so long
//! chains neither underflow nor overflow.

mod discretize;
pub mod format;

use std::collections::BTreeMap;

use rayon::prelude::*;

pub use discretize::{decode, encode, DiscretizationMap, MAX_BITS};

use crate::error::{Error, Result};
use crate::paths::SymbolPaths;
use crate::tensor::{gemm, qr, Matrix};

const LN_2: f64 = std::f64::consts::LN_2;

/// Rows per work unit in data-parallel reductions. Fixed so sums do not
/// depend on the number of worker threads.
pub(crate) const ROW_CHUNK: usize = 256;

/// Rank-3 site tensor with index order (left bond, physical, right bond).
#[derive(Clone, Debug, PartialEq)]
pub struct SiteTensor {
    left: usize,
    phys: usize,
    right: usize,
    data: Vec<f64>,
}

impl SiteTensor {
    pub fn new(left: usize, phys: usize, right: usize, data: Vec<f64>) -> Result<Self> {
        if left == 0 || phys == 0 || right == 0 {
            return Err(Error::Shape(format!("site shape ({left}, {phys}, {right}) has a zero dimension")));
        }
        if data.len() != left * phys * right {
            return Err(Error::Shape(format!(
                "{} entries for site shape ({left}, {phys}, {right})",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("site entry {i} is {}", data[i])));
        }
        Ok(Self { left, phys, right, data })
    }

    pub fn from_fn(left: usize, phys: usize, right: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(left * phys * right);
        for l in 0..left {
            for p in 0..phys {
                for r in 0..right {
                    data.push(f(l, p, r));
                }
            }
        }
        Self { left, phys, right, data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.left, self.phys, self.right)
    }

    pub fn left(&self) -> usize {
        self.left
    }

    pub fn phys(&self) -> usize {
        self.phys
    }

    pub fn right(&self) -> usize {
        self.right
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, l: usize, p: usize, r: usize) -> f64 {
        self.data[(l * self.phys + p) * self.right + r]
    }

    /// Row `(l, p)` of the `(left·phys) × right` matricization.
    #[inline]
    pub(crate) fn fiber(&self, l: usize, p: usize) -> &[f64] {
        let o = (l * self.phys + p) * self.right;
        &self.data[o..o + self.right]
    }

    /// `(left·phys) × right` matricization.
    pub fn to_left_matrix(&self) -> Matrix {
        Matrix::from_vec(self.left * self.phys, self.right, self.data.clone()).expect("finite")
    }

    /// `left × (phys·right)` matricization.
    pub fn to_right_matrix(&self) -> Matrix {
        Matrix::from_vec(self.left, self.phys * self.right, self.data.clone()).expect("finite")
    }

    fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }
}

/// Contracted environment matrix whose true value is `mat · 2^log2_scale`.
#[derive(Clone, Debug)]
pub struct Env {
    pub mat: Matrix,
    pub log2_scale: i64,
}

impl Env {
    fn unit() -> Self {
        Env { mat: Matrix::identity(1), log2_scale: 0 }
    }

    pub fn ln_scale(&self) -> f64 {
        self.log2_scale as f64 * LN_2
    }
}

/// Rescale `buf` by a power of two when its largest magnitude leaves
/// `[1e-150, 1e150]`, adding the exponent to `log2`.
pub(crate) fn rescale(buf: &mut [f64], log2: &mut i64) {
    let m = buf.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m == 0.0 || !m.is_finite() || (1e-150..=1e150).contains(&m) {
        return;
    }
    let e = libm::ilogb(m);
    for x in buf.iter_mut() {
        *x = libm::scalbn(*x, -e);
    }
    *log2 += e as i64;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mps {
    sites: Vec<SiteTensor>,
    disc: DiscretizationMap,
}

impl Mps {
    pub fn new(sites: Vec<SiteTensor>, disc: DiscretizationMap) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::Shape("an MPS needs at least one site".into()));
        }
        let phys = disc.levels();
        if sites[0].left != 1 || sites[sites.len() - 1].right != 1 {
            return Err(Error::Shape("boundary bond dimensions must be 1".into()));
        }
        for (k, s) in sites.iter().enumerate() {
            if s.phys != phys {
                return Err(Error::Shape(format!("site {k} has physical dimension {}, expected {phys}", s.phys)));
            }
            if k + 1 < sites.len() && s.right != sites[k + 1].left {
                return Err(Error::Shape(format!(
                    "bond {} mismatch: {} vs {}",
                    k + 1,
                    s.right,
                    sites[k + 1].left
                )));
            }
        }
        Ok(Self { sites, disc })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn physical_dim(&self) -> usize {
        self.disc.levels()
    }

    pub fn disc(&self) -> &DiscretizationMap {
        &self.disc
    }

    pub fn sites(&self) -> &[SiteTensor] {
        &self.sites
    }

    pub fn site(&self, k: usize) -> &SiteTensor {
        &self.sites[k]
    }

    pub(crate) fn set_site(&mut self, k: usize, t: SiteTensor) {
        self.sites[k] = t;
    }

    /// `[D_0, …, D_M]`.
    pub fn bond_dims(&self) -> Vec<usize> {
        let mut d = vec![1];
        d.extend(self.sites.iter().map(|s| s.right));
        d
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Multiply every amplitude by `c` (applied to the first site).
    pub fn scale(&mut self, c: f64) {
        self.sites[0].scale(c);
    }

    pub(crate) fn check_symbols(&self, x: &[u32]) -> Result<()> {
        if x.len() != self.sites.len() {
            return Err(Error::Shape(format!(
                "sequence of length {} for an MPS with {} sites",
                x.len(),
                self.sites.len()
            )));
        }
        let levels = self.physical_dim() as u32;
        if let Some(&s) = x.iter().find(|&&s| s >= levels) {
            return Err(Error::SymbolOutOfRange { symbol: s, bits: self.disc.bits() });
        }
        Ok(())
    }

    /// Row vector `A1[x_1] ⋯ Ak[x_k]`, returned with its power-of-two scale.
    pub(crate) fn left_vector(&self, prefix: &[u32]) -> (Vec<f64>, i64) {
        let mut v = vec![1.0];
        let mut log2 = 0i64;
        for (k, &s) in prefix.iter().enumerate() {
            let site = &self.sites[k];
            v = vec_times_slice(&v, site, s as usize);
            rescale(&mut v, &mut log2);
        }
        (v, log2)
    }

    /// Column vector `A_{k+1}[x_{k+1}] ⋯ AM[x_M]` for `suffix = x_{k+1..M}`.
    pub(crate) fn right_vector(&self, suffix: &[u32]) -> (Vec<f64>, i64) {
        let start = self.sites.len() - suffix.len();
        let mut v = vec![1.0];
        let mut log2 = 0i64;
        for (k, &s) in suffix.iter().enumerate().rev() {
            let site = &self.sites[start + k];
            v = slice_times_vec(site, s as usize, &v);
            rescale(&mut v, &mut log2);
        }
        (v, log2)
    }

    /// Sign and natural log of `|Ψ(x)|` (`-inf` for a zero amplitude).
    pub fn log_amplitude(&self, x: &[u32]) -> Result<(f64, f64)> {
        self.check_symbols(x)?;
        let (v, log2) = self.left_vector(x);
        let psi = v[0];
        if psi == 0.0 {
            return Ok((0.0, f64::NEG_INFINITY));
        }
        Ok((psi.signum(), psi.abs().ln() + log2 as f64 * LN_2))
    }

    /// `Ψ(x)`, contracted left to right.
    pub fn evaluate(&self, x: &[u32]) -> Result<f64> {
        self.check_symbols(x)?;
        let (v, log2) = self.left_vector(x);
        Ok(scale_pow2(v[0], log2))
    }

    /// Left environments `L_k = Σ_{x_1..x_k} (A1⋯Ak)ᵀ(A1⋯Ak)` for `k = 0..=M`.
    pub fn left_environments(&self) -> Vec<Env> {
        let mut envs = Vec::with_capacity(self.sites.len() + 1);
        envs.push(Env::unit());
        for site in &self.sites {
            let prev = envs.last().expect("nonempty");
            envs.push(transfer_left(prev, site));
        }
        envs
    }

    /// Right environments `R_k` over sites `k+1..M` for `k = 0..=M`
    /// (`R_M` is the unit scalar).
    pub fn right_environments(&self) -> Vec<Env> {
        let m = self.sites.len();
        let mut envs = vec![Env::unit(); m + 1];
        for k in (0..m).rev() {
            envs[k] = transfer_right(&envs[k + 1], &self.sites[k]);
        }
        envs
    }

    /// `ln Z`; fails if the model is identically zero.
    pub fn log_partition(&self) -> Result<f64> {
        let mut env = Env::unit();
        for site in &self.sites {
            env = transfer_left(&env, site);
        }
        let z = env.mat.get(0, 0);
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::DegenerateModel(z));
        }
        Ok(z.ln() + env.ln_scale())
    }

    /// `Z = Σ_x Ψ(x)²` by the transfer-matrix ladder.
    pub fn partition_function(&self) -> Result<f64> {
        Ok(self.log_partition()?.exp())
    }

    /// Born probability `Ψ(x)²/Z`.
    pub fn probability(&self, x: &[u32]) -> Result<f64> {
        let (_, ln_abs) = self.log_amplitude(x)?;
        Ok((2.0 * ln_abs - self.log_partition()?).exp())
    }

    /// Marginal probability of a prefix `x_1..x_k`, summing `Ψ²/Z` over all suffixes.
    pub fn marginal(&self, prefix: &[u32]) -> Result<f64> {
        if prefix.len() > self.sites.len() {
            return Err(Error::Shape(format!("prefix of length {} exceeds {} sites", prefix.len(), self.sites.len())));
        }
        let levels = self.physical_dim() as u32;
        if let Some(&s) = prefix.iter().find(|&&s| s >= levels) {
            return Err(Error::SymbolOutOfRange { symbol: s, bits: self.disc.bits() });
        }
        let ln_z = self.log_partition()?;
        let k = prefix.len();
        let mut env = Env::unit();
        for site in self.sites[k..].iter().rev() {
            env = transfer_right(&env, site);
        }
        let (v, log2) = self.left_vector(prefix);
        let q = quadratic_form(&v, &env.mat);
        if q <= 0.0 {
            return Ok(0.0);
        }
        Ok((q.ln() + (2 * log2) as f64 * LN_2 + env.ln_scale() - ln_z).exp())
    }

    /// `−(1/|T|) Σ_i ln(Ψ(x^i)²/Z)`.
    pub fn negative_log_likelihood(&self, data: &SymbolPaths) -> Result<f64> {
        if data.n_paths() == 0 {
            return Err(Error::InvalidInput("empty dataset".into()));
        }
        let ln_z = self.log_partition()?;
        let sum_ln_abs = self.sum_log_abs_amplitudes(data)?;
        Ok(-(2.0 * sum_ln_abs / data.n_paths() as f64 - ln_z))
    }

    /// `Σ_i ln|Ψ(x^i)|` reduced over fixed row chunks in order.
    pub(crate) fn sum_log_abs_amplitudes(&self, data: &SymbolPaths) -> Result<f64> {
        let width = data.n_cols();
        if width != self.sites.len() {
            return Err(Error::Shape(format!("data has {width} columns, model has {} sites", self.sites.len())));
        }
        let partials: Vec<Result<f64>> = data
            .data()
            .par_chunks(ROW_CHUNK * width)
            .enumerate()
            .map(|(c, chunk)| {
                let mut acc = 0.0;
                for (i, row) in chunk.chunks_exact(width).enumerate() {
                    let (_, ln_abs) = self.log_amplitude(row)?;
                    if ln_abs == f64::NEG_INFINITY {
                        return Err(Error::ZeroAmplitude { row: c * ROW_CHUNK + i });
                    }
                    acc += ln_abs;
                }
                Ok(acc)
            })
            .collect();
        let mut total = 0.0;
        for p in partials {
            total += p?;
        }
        Ok(total)
    }

    /// Forward KL divergence `Σ_x π̂(x) ln(π̂(x)/p(x))` from the empirical
    /// distribution of `data`; `+inf` if the model gives zero mass to an
    /// observed sequence.
    pub fn kl_to_empirical(&self, data: &SymbolPaths) -> Result<f64> {
        if data.n_paths() == 0 {
            return Err(Error::InvalidInput("empty dataset".into()));
        }
        let mut counts: BTreeMap<&[u32], usize> = BTreeMap::new();
        for row in data.rows() {
            *counts.entry(row).or_default() += 1;
        }
        let ln_z = self.log_partition()?;
        let n = data.n_paths() as f64;
        let mut kl = 0.0;
        for (row, c) in counts {
            let (_, ln_abs) = self.log_amplitude(row)?;
            if ln_abs == f64::NEG_INFINITY {
                return Ok(f64::INFINITY);
            }
            let pi = c as f64 / n;
            kl += pi * (pi.ln() - (2.0 * ln_abs - ln_z));
        }
        Ok(kl)
    }

    /// Bring sites `0..upto` into left-canonical form (`Σ_s A[s]ᵀA[s] = I`)
    /// by QR, pushing each remainder into the next site. Amplitudes are
    /// unchanged; bond `k+1` may shrink to `min(D_k·P, D_{k+1})`.
    pub fn left_canonicalize(&mut self, upto: usize) {
        let upto = upto.min(self.sites.len().saturating_sub(1));
        for k in 0..upto {
            let site = &self.sites[k];
            let (q, r) = qr(&site.to_left_matrix());
            let new_bond = q.cols();
            let (left, phys) = (site.left, site.phys);
            self.sites[k] = SiteTensor { left, phys, right: new_bond, data: q.into_vec() };
            let next = &self.sites[k + 1];
            let carried = r.matmul(&next.to_right_matrix()).expect("bond shapes agree");
            let (p2, r2) = (next.phys, next.right);
            self.sites[k + 1] = SiteTensor { left: new_bond, phys: p2, right: r2, data: carried.into_vec() };
        }
    }
}

pub(crate) fn scale_pow2(x: f64, log2: i64) -> f64 {
    // two steps keep intermediate exponents inside scalbn's range
    let half = (log2 / 2).clamp(i32::MIN as i64, i32::MAX as i64) as i32;
    let rest = (log2 - half as i64).clamp(i32::MIN as i64, i32::MAX as i64) as i32;
    libm::scalbn(libm::scalbn(x, half), rest)
}

/// `v · A[s]` for a row vector of length `left`.
pub(crate) fn vec_times_slice(v: &[f64], site: &SiteTensor, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; site.right];
    for (l, &vl) in v.iter().enumerate() {
        if vl == 0.0 {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(site.fiber(l, s)) {
            *o += vl * a;
        }
    }
    out
}

/// `A[s] · v` for a column vector of length `right`.
pub(crate) fn slice_times_vec(site: &SiteTensor, s: usize, v: &[f64]) -> Vec<f64> {
    (0..site.left)
        .map(|l| site.fiber(l, s).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// `v · E · vᵀ`.
pub(crate) fn quadratic_form(v: &[f64], e: &Matrix) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        if v[i] == 0.0 {
            continue;
        }
        let row = e.row(i);
        let dot: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
        acc += v[i] * dot;
    }
    acc
}

/// `E' = Σ_s A[s]ᵀ · E · A[s]`.
pub(crate) fn transfer_left(env: &Env, site: &SiteTensor) -> Env {
    let (dl, p, dr) = site.shape();
    let rs = p * dr;
    let mut out = Matrix::zeros(dr, dr);
    let mut tmp = vec![0.0; dl * dr];
    for s in 0..p {
        let a = &site.data[s * dr..];
        // tmp = E · A[s]
        gemm(dl, dl, dr, 1.0, (env.mat.data(), dl, 1), (a, rs, 1), 0.0, (&mut tmp, dr, 1));
        // out += A[s]ᵀ · tmp
        gemm(dr, dl, dr, 1.0, (a, 1, rs), (&tmp, dr, 1), 1.0, (out.data_mut(), dr, 1));
    }
    let mut log2 = env.log2_scale;
    rescale(out.data_mut(), &mut log2);
    Env { mat: out, log2_scale: log2 }
}

/// `E' = Σ_s A[s] · E · A[s]ᵀ`.
pub(crate) fn transfer_right(env: &Env, site: &SiteTensor) -> Env {
    let (dl, p, dr) = site.shape();
    let rs = p * dr;
    let mut out = Matrix::zeros(dl, dl);
    let mut tmp = vec![0.0; dl * dr];
    for s in 0..p {
        let a = &site.data[s * dr..];
        // tmp = A[s] · E
        gemm(dl, dr, dr, 1.0, (a, rs, 1), (env.mat.data(), dr, 1), 0.0, (&mut tmp, dr, 1));
        // out += tmp · A[s]ᵀ
        gemm(dl, dr, dl, 1.0, (&tmp, dr, 1), (a, 1, rs), 1.0, (out.data_mut(), dl, 1));
    }
    let mut log2 = env.log2_scale;
    rescale(out.data_mut(), &mut log2);
    Env { mat: out, log2_scale: log2 }
}
