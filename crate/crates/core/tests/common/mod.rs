#![allow(dead_code)]

use mps_heston::rng::StreamRng;
use mps_heston::tensor::Matrix;
use mps_heston::{DiscretizationMap, Mps, SiteTensor, SymbolPaths};

pub fn random_matrix(rows: usize, cols: usize, rng: &mut StreamRng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-1.0, 1.0))
}

pub fn random_mps(n_sites: usize, bits: u32, bond: usize, rng: &mut StreamRng) -> Mps {
    let disc = DiscretizationMap::new(0.0, 1.0, bits).unwrap();
    let p = disc.levels();
    let sites = (0..n_sites)
        .map(|k| {
            let l = if k == 0 { 1 } else { bond };
            let r = if k + 1 == n_sites { 1 } else { bond };
            SiteTensor::from_fn(l, p, r, |_, _, _| rng.uniform_range(-1.0, 1.0))
        })
        .collect();
    Mps::new(sites, disc).unwrap()
}

pub fn random_rows(n: usize, width: usize, levels: u32, rng: &mut StreamRng) -> SymbolPaths {
    let rows: Vec<Vec<u32>> =
        (0..n).map(|_| (0..width).map(|_| rng.below(levels as u64) as u32).collect()).collect();
    SymbolPaths::from_rows(&rows, 1).unwrap()
}

/// Every sequence of length `n` over `0..p`, in lexicographic order.
pub fn all_configs(n: usize, p: usize) -> Vec<Vec<u32>> {
    let total = p.pow(n as u32);
    (0..total)
        .map(|mut i| {
            let mut x = vec![0u32; n];
            for k in (0..n).rev() {
                x[k] = (i % p) as u32;
                i /= p;
            }
            x
        })
        .collect()
}

/// Amplitude by explicit matrix-chain multiplication, no rescaling.
pub fn brute_amplitude(mps: &Mps, x: &[u32]) -> f64 {
    let mut v = vec![1.0];
    for (k, &s) in x.iter().enumerate() {
        let site = mps.site(k);
        let mut next = vec![0.0; site.right()];
        for (l, &a) in v.iter().enumerate() {
            for (r, n) in next.iter_mut().enumerate() {
                *n += a * site.get(l, s as usize, r);
            }
        }
        v = next;
    }
    v[0]
}

/// Singular values by one-sided Jacobi rotations, in descending order.
pub fn jacobi_singular_values(a: &Matrix) -> Vec<f64> {
    // work on the orientation with at least as many rows as columns
    let mut w: Vec<Vec<f64>> = if a.rows() >= a.cols() {
        (0..a.cols()).map(|j| (0..a.rows()).map(|i| a.get(i, j)).collect()).collect()
    } else {
        (0..a.rows()).map(|i| a.row(i).to_vec()).collect()
    };
    let cols = w.len();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = w[p].iter().map(|x| x * x).sum();
                let beta: f64 = w[q].iter().map(|x| x * x).sum();
                let gamma: f64 = w[p].iter().zip(&w[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = w.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut s: Vec<f64> = w.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn frobenius(m: &Matrix) -> f64 {
    m.frobenius_norm()
}
