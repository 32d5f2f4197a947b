//! Two-site sweeping gradient descent on the negative log-likelihood.
//!
//! One update of the adjacent pair `(j, j+1)`:
//!
//! 1. merge the two sites over their shared bond into a rank-4 tensor
//!    `A[l, s, t, r]`;
//! 2. step `A ← A − η ∂L/∂A` with
//!    `∂L/∂A = (1/Z)∂Z/∂A − (2/|T|) Σ_i ∂Ψ(x^i)/∂A / Ψ(x^i)`;
//! 3. split `A` back into two sites by a truncated SVD, which sets the new
//!    bond dimension (relative cutoff plus a hard cap `d_max`).
//!
//! An epoch sweeps the pairs right to left and then left to right. The
//! trainer keeps the model in mixed-canonical form with the orthogonality
//! center on the active pair, so the environments are identities and the
//! merged tensor is normalized to `Z = 1` before each step. `L` is invariant
//! under rescaling, so the normalization changes only the step geometry.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiscretizationMap, Env, Mps, SiteTensor, ROW_CHUNK};
use crate::paths::SymbolPaths;
use crate::rng::{derive_seed, purpose, StreamRng, RNG_ALGORITHM};
use crate::tensor::{gemm, svd_leading, truncate_rank, Matrix};

/// Gradient batch selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BatchRepr", into = "BatchRepr")]
pub enum Batch {
    Full,
    Size(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BatchRepr {
    Word(String),
    Size(usize),
}

impl TryFrom<BatchRepr> for Batch {
    type Error = String;

    fn try_from(r: BatchRepr) -> Result<Self, String> {
        match r {
            BatchRepr::Word(w) if w == "full" => Ok(Batch::Full),
            BatchRepr::Word(w) => Err(format!("batch must be \"full\" or a positive integer, got \"{w}\"")),
            BatchRepr::Size(0) => Err("batch size must be positive".into()),
            BatchRepr::Size(n) => Ok(Batch::Size(n)),
        }
    }
}

impl From<Batch> for BatchRepr {
    fn from(b: Batch) -> Self {
        match b {
            Batch::Full => BatchRepr::Word("full".into()),
            Batch::Size(n) => BatchRepr::Size(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d_max: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub trunc_cutoff: f64,
    pub seed: u64,
    pub batch: Batch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { d_max: 64, learning_rate: 1e-2, epochs: 10, trunc_cutoff: 1e-10, seed: 0, batch: Batch::Full }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_max == 0 {
            return Err(Error::InvalidInput("d_max must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidInput(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.trunc_cutoff) {
            return Err(Error::InvalidInput(format!(
                "truncation cutoff must lie in [0, 1), got {}",
                self.trunc_cutoff
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub rng: String,
    pub config: TrainConfig,
    pub initial_nll: f64,
    pub epoch_nll: Vec<f64>,
    pub final_bond_dims: Vec<usize>,
    /// Not serialized, so report files stay byte-identical across runs.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Merged tensor of sites `(site, site + 1)` with index order `(l, s, t, r)`.
///
/// Row-major storage coincides with the `(l·P + s) × (t·D_r + r)` matrix used
/// by the split.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedPair {
    pub site: usize,
    pub left: usize,
    pub phys: usize,
    pub right: usize,
    pub data: Vec<f64>,
}

impl MergedPair {
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.left, self.phys, self.phys, self.right)
    }

    #[inline]
    pub fn index(&self, l: usize, s: usize, t: usize, r: usize) -> usize {
        ((l * self.phys + s) * self.phys + t) * self.right + r
    }

    pub fn get(&self, l: usize, s: usize, t: usize, r: usize) -> f64 {
        self.data[self.index(l, s, t, r)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn like(&self, data: Vec<f64>) -> MergedPair {
        MergedPair { site: self.site, left: self.left, phys: self.phys, right: self.right, data }
    }

    /// Amplitude block `v_l · A[:, s, t, :] · w_r`.
    fn contract(&self, lv: &[f64], s: usize, t: usize, rv: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (l, &a) in lv.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let o = self.index(l, s, t, 0);
            let row = &self.data[o..o + self.right];
            acc += a * row.iter().zip(rv).map(|(x, y)| x * y).sum::<f64>();
        }
        acc
    }
}

/// How the singular values are distributed when a merged pair is split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// `A_j = U√Λ`, `A_{j+1} = √Λ Vᵀ`.
    Balanced,
    /// `A_j = UΛ`, `A_{j+1} = Vᵀ` (right site becomes right-canonical).
    AbsorbLeft,
    /// `A_j = U`, `A_{j+1} = ΛVᵀ` (left site becomes left-canonical).
    AbsorbRight,
}

/// Initial model: entries i.i.d. uniform on `[0.9, 1.1]`, interior bonds
/// `min(2, d_max)`. Every amplitude is strictly positive.
pub fn init_mps(n_sites: usize, disc: DiscretizationMap, d_max: usize, seed: u64) -> Result<Mps> {
    if n_sites < 2 {
        return Err(Error::InvalidInput(format!("training needs at least 2 sites, got {n_sites}")));
    }
    let bond = d_max.clamp(1, 2);
    let phys = disc.levels();
    let base = derive_seed(seed, purpose::INIT);
    let sites = (0..n_sites)
        .map(|k| {
            let mut rng = StreamRng::new(base, k as u64);
            let l = if k == 0 { 1 } else { bond };
            let r = if k + 1 == n_sites { 1 } else { bond };
            SiteTensor::from_fn(l, phys, r, |_, _, _| rng.uniform_range(0.9, 1.1))
        })
        .collect();
    Mps::new(sites, disc)
}

/// Contract sites `j` and `j + 1` (0-based) over their shared bond.
pub fn merge_pair(mps: &Mps, j: usize) -> Result<MergedPair> {
    if j + 1 >= mps.n_sites() {
        return Err(Error::InvalidInput(format!("no pair ({j}, {}) in a {}-site MPS", j + 1, mps.n_sites())));
    }
    let a = mps.site(j);
    let b = mps.site(j + 1);
    let prod = a.to_left_matrix().matmul(&b.to_right_matrix())?;
    Ok(MergedPair { site: j, left: a.left(), phys: a.phys(), right: b.right(), data: prod.into_vec() })
}

/// Everything outside the active pair that the gradient needs: the two
/// transfer environments and, for every data row, the boundary vectors and
/// physical indices at the pair.
pub struct PairEnvironment {
    site: usize,
    left_env: Env,
    right_env: Env,
    left_vecs: Vec<f64>,
    right_vecs: Vec<f64>,
    phys_idx: Vec<(u32, u32)>,
    n_rows: usize,
    dl: usize,
    dr: usize,
}

impl PairEnvironment {
    pub fn new(mps: &Mps, j: usize, data: &SymbolPaths) -> Result<Self> {
        let m = mps.n_sites();
        if j + 1 >= m {
            return Err(Error::InvalidInput(format!("no pair at site {j}")));
        }
        if data.n_cols() != m {
            return Err(Error::Shape(format!("data has {} columns, model has {m} sites", data.n_cols())));
        }
        if data.n_paths() == 0 {
            return Err(Error::InvalidInput("empty dataset".into()));
        }
        let levels = mps.physical_dim() as u32;
        if let Some(&s) = data.data().iter().find(|&&s| s >= levels) {
            return Err(Error::SymbolOutOfRange { symbol: s, bits: mps.disc().bits() });
        }
        let dl = mps.site(j).left();
        let dr = mps.site(j + 1).right();
        let mut left_env = Env { mat: Matrix::identity(1), log2_scale: 0 };
        for site in &mps.sites()[..j] {
            left_env = crate::model::transfer_left(&left_env, site);
        }
        let mut right_env = Env { mat: Matrix::identity(1), log2_scale: 0 };
        for site in mps.sites()[j + 2..].iter().rev() {
            right_env = crate::model::transfer_right(&right_env, site);
        }
        let width = data.n_cols();
        let chunks: Vec<(Vec<f64>, Vec<f64>)> = data
            .data()
            .par_chunks(ROW_CHUNK * width)
            .map(|chunk| {
                let mut lv = Vec::with_capacity(chunk.len() / width * dl);
                let mut rv = Vec::with_capacity(chunk.len() / width * dr);
                for row in chunk.chunks_exact(width) {
                    // scales cancel in Ψ⁻¹ ∂Ψ, only directions matter
                    lv.extend(mps.left_vector(&row[..j]).0);
                    rv.extend(mps.right_vector(&row[j + 2..]).0);
                }
                (lv, rv)
            })
            .collect();
        let mut left_vecs = Vec::with_capacity(data.n_paths() * dl);
        let mut right_vecs = Vec::with_capacity(data.n_paths() * dr);
        for (l, r) in chunks {
            left_vecs.extend(l);
            right_vecs.extend(r);
        }
        let phys_idx = data.rows().map(|r| (r[j], r[j + 1])).collect();
        Ok(Self {
            site: j,
            left_env,
            right_env,
            left_vecs,
            right_vecs,
            phys_idx,
            n_rows: data.n_paths(),
            dl,
            dr,
        })
    }

    fn check(&self, merged: &MergedPair) -> Result<()> {
        if merged.site != self.site || merged.left != self.dl || merged.right != self.dr {
            return Err(Error::Shape(format!(
                "merged pair ({}, {}x{}) does not match environment ({}, {}x{})",
                merged.site, merged.left, merged.right, self.site, self.dl, self.dr
            )));
        }
        Ok(())
    }

    /// `W = E_L · A · E_R`, the environment-contracted merged tensor, so that
    /// `Z ∝ ⟨A, W⟩` and `∂Z/∂A ∝ 2W`.
    fn contract_envs(&self, merged: &MergedPair) -> Vec<f64> {
        let (dl, p, dr) = (merged.left, merged.phys, merged.right);
        let inner = p * p * dr;
        let mut w = if is_identity(&self.left_env.mat) {
            merged.data.clone()
        } else {
            let mut out = vec![0.0; merged.data.len()];
            gemm(dl, dl, inner, 1.0, (self.left_env.mat.data(), dl, 1), (&merged.data, inner, 1), 0.0, (&mut out, inner, 1));
            out
        };
        if !is_identity(&self.right_env.mat) {
            let rows = dl * p * p;
            let mut out = vec![0.0; w.len()];
            gemm(rows, dr, dr, 1.0, (&w, dr, 1), (self.right_env.mat.data(), dr, 1), 0.0, (&mut out, dr, 1));
            w = out;
        }
        w
    }

    /// `ln Z` of the model with the pair replaced by `merged`.
    pub fn log_partition(&self, merged: &MergedPair) -> Result<f64> {
        self.check(merged)?;
        let w = self.contract_envs(merged);
        let z: f64 = merged.data.iter().zip(&w).map(|(a, b)| a * b).sum();
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::DegenerateModel(z));
        }
        Ok(z.ln() + self.left_env.ln_scale() + self.right_env.ln_scale())
    }

    fn amplitudes(&self, merged: &MergedPair) -> Vec<f64> {
        let (dl, dr) = (self.dl, self.dr);
        (0..self.n_rows)
            .into_par_iter()
            .with_min_len(ROW_CHUNK)
            .map(|i| {
                let (s, t) = self.phys_idx[i];
                merged.contract(
                    &self.left_vecs[i * dl..(i + 1) * dl],
                    s as usize,
                    t as usize,
                    &self.right_vecs[i * dr..(i + 1) * dr],
                )
            })
            .collect()
    }
}

fn is_identity(m: &Matrix) -> bool {
    let n = m.rows();
    (0..n).all(|i| (0..n).all(|j| m.get(i, j) == if i == j { 1.0 } else { 0.0 }))
}

/// `∂L/∂A` for the merged pair under the data summarised by `env`.
pub fn nll_gradient(merged: &MergedPair, env: &PairEnvironment) -> Result<MergedPair> {
    env.check(merged)?;
    let w = env.contract_envs(merged);
    let z: f64 = merged.data.iter().zip(&w).map(|(a, b)| a * b).sum();
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::DegenerateModel(z));
    }
    let mut grad: Vec<f64> = w.iter().map(|x| 2.0 * x / z).collect();
    let psi = env.amplitudes(merged);
    let weight = 2.0 / env.n_rows as f64;
    let (dl, dr) = (env.dl, env.dr);
    for (i, &a) in psi.iter().enumerate() {
        if a == 0.0 || !a.is_finite() {
            return Err(Error::ZeroAmplitude { row: i });
        }
        let c = weight / a;
        let (s, t) = env.phys_idx[i];
        let lv = &env.left_vecs[i * dl..(i + 1) * dl];
        let rv = &env.right_vecs[i * dr..(i + 1) * dr];
        for (l, &x) in lv.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let o = merged.index(l, s as usize, t as usize, 0);
            let cx = c * x;
            for (g, &y) in grad[o..o + dr].iter_mut().zip(rv) {
                *g -= cx * y;
            }
        }
    }
    Ok(merged.like(grad))
}

/// `A − η·∂L/∂A`.
pub fn apply_update(merged: &MergedPair, grad: &MergedPair, learning_rate: f64) -> Result<MergedPair> {
    if merged.shape() != grad.shape() {
        return Err(Error::Shape("gradient shape differs from merged pair".into()));
    }
    let data: Vec<f64> = merged.data.iter().zip(&grad.data).map(|(a, g)| a - learning_rate * g).collect();
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("updated merged entry {i} (step exploded)")));
    }
    Ok(merged.like(data))
}

/// Split a merged pair into two rank-3 sites through a truncated SVD.
///
/// Returns the two sites and the new bond dimension. `sketch_seed` seeds the
/// randomized SVD used for large matrices.
pub fn split_pair(
    merged: &MergedPair,
    cutoff: f64,
    d_max: usize,
    mode: SplitMode,
    sketch_seed: u64,
) -> Result<(SiteTensor, SiteTensor, usize)> {
    let (dl, p, dr) = (merged.left, merged.phys, merged.right);
    let mat = Matrix::from_vec(dl * p, p * dr, merged.data.clone())?;
    let dec = svd_leading(&mat, d_max, sketch_seed)?;
    let rank = truncate_rank(&dec.singular_values, cutoff, d_max).min(dec.rank().max(1));
    let rows = dl * p;
    let cols = p * dr;
    let (left_w, right_w): (Vec<f64>, Vec<f64>) = dec.singular_values[..rank]
        .iter()
        .map(|&s| match mode {
            SplitMode::Balanced => (s.sqrt(), s.sqrt()),
            SplitMode::AbsorbLeft => (s, 1.0),
            SplitMode::AbsorbRight => (1.0, s),
        })
        .unzip();
    let mut left = Vec::with_capacity(rows * rank);
    for i in 0..rows {
        for k in 0..rank {
            left.push(dec.u.get(i, k) * left_w[k]);
        }
    }
    let mut right = Vec::with_capacity(rank * cols);
    for k in 0..rank {
        let row = dec.vt.row(k);
        right.extend(row.iter().map(|x| x * right_w[k]));
    }
    Ok((SiteTensor::new(dl, p, rank, left)?, SiteTensor::new(rank, p, dr, right)?, rank))
}

/// Rows used for the `step`-th pair update of an epoch.
fn batch_rows(data: &SymbolPaths, batch: Batch, seed: u64, epoch: usize, step: usize, order: &mut Option<Vec<usize>>) -> Option<SymbolPaths> {
    let Batch::Size(b) = batch else { return None };
    let n = data.n_paths();
    if b >= n {
        return None;
    }
    let perm = order.get_or_insert_with(|| {
        let mut rng = StreamRng::new(derive_seed(seed, purpose::BATCH), epoch as u64);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let k = rng.below(i as u64 + 1) as usize;
            idx.swap(i, k);
        }
        idx
    });
    let rows: Vec<usize> = (0..b).map(|k| perm[(step * b + k) % n]).collect();
    Some(data.select_rows(&rows))
}

fn update_pair(
    mps: &mut Mps,
    j: usize,
    data: &SymbolPaths,
    config: &TrainConfig,
    mode: SplitMode,
    sketch_seed: u64,
) -> Result<()> {
    let env = PairEnvironment::new(mps, j, data)?;
    let mut merged = merge_pair(mps, j)?;
    let ln_z = env.log_partition(&merged)?;
    let norm = (-0.5 * ln_z).exp();
    merged.data.iter_mut().for_each(|x| *x *= norm);
    let grad = nll_gradient(&merged, &env)?;
    let updated = apply_update(&merged, &grad, config.learning_rate)?;
    let (a, b, _) = split_pair(&updated, config.trunc_cutoff, config.d_max, mode, sketch_seed)?;
    mps.set_site(j, a);
    mps.set_site(j + 1, b);
    Ok(())
}

/// One epoch: pairs `M−2, …, 0` then `0, …, M−2` (0-based left sites),
/// each updated once per direction. Returns the NLL after the epoch.
pub fn sweep_epoch(mps: &Mps, data: &SymbolPaths, config: &TrainConfig, epoch: usize) -> Result<(Mps, f64)> {
    config.validate()?;
    let m = mps.n_sites();
    if m < 2 {
        return Err(Error::InvalidInput("sweeping needs at least 2 sites".into()));
    }
    let mut model = mps.clone();
    model.left_canonicalize(m - 2);
    let sketch_base = derive_seed(derive_seed(config.seed, purpose::SVD_SKETCH), epoch as u64);
    let mut order = None;
    let mut step = 0usize;
    let pairs: Vec<(usize, SplitMode)> = (0..m - 1)
        .rev()
        .map(|j| (j, SplitMode::AbsorbLeft))
        .chain((0..m - 1).map(|j| (j, SplitMode::AbsorbRight)))
        .collect();
    for (j, mode) in pairs {
        let batch = batch_rows(data, config.batch, config.seed, epoch, step, &mut order);
        let rows = batch.as_ref().unwrap_or(data);
        update_pair(&mut model, j, rows, config, mode, derive_seed(sketch_base, step as u64))?;
        step += 1;
    }
    let nll = model.negative_log_likelihood(data)?;
    Ok((model, nll))
}

/// Train from [`init_mps`] for `config.epochs` epochs.
pub fn train(data: &SymbolPaths, disc: DiscretizationMap, config: &TrainConfig) -> Result<(Mps, TrainReport)> {
    config.validate()?;
    if data.n_paths() == 0 {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let start = Instant::now();
    let mut mps = init_mps(data.n_cols(), disc, config.d_max, config.seed)?;
    let initial_nll = mps.negative_log_likelihood(data)?;
    let mut epoch_nll = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (next, nll) = sweep_epoch(&mps, data, config, epoch)
            .map_err(|e| annotate_epoch(e, epoch))?;
        if !nll.is_finite() {
            return Err(Error::NonFinite(format!("NLL {nll} after epoch {epoch}")));
        }
        mps = next;
        epoch_nll.push(nll);
    }
    let report = TrainReport {
        seed: config.seed,
        rng: RNG_ALGORITHM.to_string(),
        config: config.clone(),
        initial_nll,
        epoch_nll,
        final_bond_dims: mps.bond_dims(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((mps, report))
}

fn annotate_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}: {msg}")),
        Error::InvalidInput(msg) => Error::InvalidInput(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}
