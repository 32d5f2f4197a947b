//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line
//! with the measured values and then asserts.
//!
//! Criterion 6 trains the m = 4, 5, 6 models at D_max = 64 (about five
//! minutes on one core). The D_max = 100 and 150 cells are added when
//! `MPS_FULL_GRID=1` is set.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{all_configs, brute_amplitude, jacobi_singular_values, random_matrix, random_mps, random_rows};
use mps_heston::heston::{heston_paths, HestonParams};
use mps_heston::pipeline::{reproduce, ExperimentConfig, GridCell, TableRow};
use mps_heston::pricing::{bs_call_price, implied_vol, monte_carlo_price, OptionKind, OptionSpec};
use mps_heston::rng::StreamRng;
use mps_heston::sampling::sample_paths;
use mps_heston::tensor::{svd, truncate_rank};
use mps_heston::train::{merge_pair, nll_gradient, train, MergedPair, PairEnvironment, TrainConfig};
use mps_heston::{DiscretizationMap, Mps, SiteTensor, SymbolPaths};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn report(n: u32, ok: bool, detail: &str) -> bool {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn criterion_1_heston_benchmark_price() -> bool {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let (price, iv) = pool.install(|| {
        let params = HestonParams::default();
        let paths = heston_paths(&params, 10_000, 0).unwrap();
        let est = monte_carlo_price(&OptionSpec::european(100.0), &paths).unwrap();
        (est, implied_vol(est.mean, 100.0, 100.0, params.maturity()).unwrap())
    });
    let secs = start.elapsed().as_secs_f64();
    let ok = (price.mean - 1.1098).abs() <= 0.05 && (iv - 0.1967).abs() <= 0.009 && secs <= 10.0;
    report(1, ok, &format!("price {:.4} (se {:.4}), iv {iv:.4}, {secs:.2} s", price.mean, price.std_error))
}

fn criterion_2_constant_vol_matches_black_scholes() -> bool {
    let params = HestonParams { kappa: 0.0, xi: 0.0, v0: 0.04, ..Default::default() };
    let paths = heston_paths(&params, 100_000, 1).unwrap();
    let est = monte_carlo_price(&OptionSpec::european(100.0), &paths).unwrap();
    let bs = bs_call_price(100.0, 100.0, params.maturity(), 0.2).unwrap();
    let z = (est.mean - bs) / est.std_error;
    let ok = z.abs() <= 3.0;
    report(2, ok, &format!("mc {:.4} (se {:.4}) vs bs {bs:.4}, z = {z:.2}", est.mean, est.std_error))
}

/// Loss with the pair replaced by `merged`, through a bond-`P·D_r` site and
/// an identity site, evaluated by the model's own NLL.
fn nll_with_merged(mps: &Mps, merged: &MergedPair, data: &SymbolPaths) -> f64 {
    let (dl, p, _, dr) = merged.shape();
    let a = SiteTensor::new(dl, p, p * dr, merged.data.clone()).unwrap();
    let b = SiteTensor::from_fn(p * dr, p, dr, |k, t, r| if k == t * dr + r { 1.0 } else { 0.0 });
    let mut sites = mps.sites().to_vec();
    sites[merged.site] = a;
    sites[merged.site + 1] = b;
    Mps::new(sites, *mps.disc()).unwrap().negative_log_likelihood(data).unwrap()
}

fn criterion_3_gradient_matches_finite_differences() -> bool {
    let start = Instant::now();
    let mut rng = StreamRng::new(2024, 0);
    let mut worst_rel = 0.0f64;
    let mut failures = 0usize;
    let mut entries = 0usize;
    for inst in 0..20 {
        let bond = 1 + inst % 3;
        let mps = random_mps(3, 2, bond, &mut rng);
        let n = 5 + (rng.below(46) as usize);
        let data = random_rows(n, 3, 4, &mut rng);
        for j in 0..2 {
            let merged = merge_pair(&mps, j).unwrap();
            let env = PairEnvironment::new(&mps, j, &data).unwrap();
            let g = nll_gradient(&merged, &env).unwrap();
            for e in 0..merged.data.len() {
                // Richardson-extrapolated central difference, O(h^4)
                let central = |h: f64| {
                    let mut up = merged.clone();
                    up.data[e] += h;
                    let mut dn = merged.clone();
                    dn.data[e] -= h;
                    (nll_with_merged(&mps, &up, &data) - nll_with_merged(&mps, &dn, &data)) / (2.0 * h)
                };
                let richardson = |h: f64| (4.0 * central(h / 2.0) - central(h)) / 3.0;
                // shrink h until consecutive estimates agree; rows with a
                // small amplitude need the smaller steps
                let mut fd = richardson(1e-3);
                for h in [1e-4, 1e-5, 1e-6] {
                    let next = richardson(h);
                    let settled = (next - fd).abs() <= 1e-9 * next.abs().max(1.0);
                    fd = next;
                    if settled {
                        break;
                    }
                }
                let err = (g.data[e] - fd).abs();
                entries += 1;
                if err > 1e-9 {
                    worst_rel = worst_rel.max(err / fd.abs());
                }
                if err > 1e-6 * fd.abs() && err > 1e-9 {
                    failures += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = failures == 0 && secs <= 30.0;
    report(3, ok, &format!("{entries} entries, {failures} outside tolerance, worst rel {worst_rel:.2e}, {secs:.2} s"))
}

fn criterion_4_exact_inference_and_sampler() -> bool {
    let mut rng = StreamRng::new(7, 0);
    let shapes = [(2usize, 1u32), (3, 2), (4, 3), (6, 2), (12, 1), (3, 4), (4, 2), (5, 2)];
    let mut worst = 0.0f64;
    for &(m, bits) in &shapes {
        for bond in [1, 2, 3] {
            let mps = random_mps(m, bits, bond, &mut rng);
            let configs = all_configs(m, 1 << bits);
            let psi: Vec<f64> = configs.iter().map(|x| brute_amplitude(&mps, x)).collect();
            let z: f64 = psi.iter().map(|a| a * a).sum();
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
            worst = worst.max(rel(mps.partition_function().unwrap(), z));
            // marginals of every prefix of the first few configurations
            for x in configs.iter().step_by(configs.len() / 7 + 1) {
                for k in 1..=m {
                    let want: f64 = configs
                        .iter()
                        .zip(&psi)
                        .filter(|(y, _)| y[..k] == x[..k])
                        .map(|(_, a)| a * a)
                        .sum::<f64>()
                        / z;
                    if want > 0.0 {
                        worst = worst.max(rel(mps.marginal(&x[..k]).unwrap(), want));
                    }
                }
            }
            let data = random_rows(40, m, 1 << bits, &mut rng);
            let nll_brute = -data
                .rows()
                .map(|r| (brute_amplitude(&mps, r).powi(2) / z).ln())
                .sum::<f64>()
                / 40.0;
            worst = worst.max(rel(mps.negative_log_likelihood(&data).unwrap(), nll_brute));
        }
    }

    let mps = random_mps(3, 2, 2, &mut rng);
    let n = 100_000;
    let batch = sample_paths(&mps, n, 99).unwrap();
    let configs = all_configs(3, 4);
    let z: f64 = configs.iter().map(|x| brute_amplitude(&mps, x).powi(2)).sum();
    let mut counts = std::collections::HashMap::new();
    for r in batch.symbols.rows() {
        *counts.entry(r.to_vec()).or_insert(0usize) += 1;
    }
    let mut stat = 0.0;
    for x in &configs {
        let e = n as f64 * brute_amplitude(&mps, x).powi(2) / z;
        let o = *counts.get(x).unwrap_or(&0) as f64;
        stat += (o - e).powi(2) / e;
    }
    let p_value = 1.0 - ChiSquared::new((configs.len() - 1) as f64).unwrap().cdf(stat);
    let ok = worst <= 1e-10 && p_value >= 1e-3;
    report(4, ok, &format!("worst relative error {worst:.2e}, chi-square {stat:.1} on 63 dof, p = {p_value:.3}"))
}

fn criterion_5_point_mass_learning() -> bool {
    let target = vec![5u32, 0, 7, 3, 6];
    let data = SymbolPaths::from_rows(&vec![target.clone(); 20], 1).unwrap();
    let disc = DiscretizationMap::new(90.0, 110.0, 3).unwrap();
    let cfg = TrainConfig { d_max: 8, epochs: 30, learning_rate: 0.05, ..Default::default() };
    let (mps, rep) = train(&data, disc, &cfg).unwrap();
    let p = mps.probability(&target).unwrap();
    let ok = p >= 0.99;
    report(5, ok, &format!("p(target) = {p:.6}, final nll {:.2e}", rep.epoch_nll.last().unwrap()))
}

fn european(row: &TableRow) -> Option<(f64, f64)> {
    row.prices.iter().find(|c| c.option == OptionKind::European).and_then(|c| c.iv.map(|iv| (c.mean, iv)))
}

fn dominance_holds(row: &TableRow) -> bool {
    let get = |k: OptionKind| row.prices.iter().find(|c| c.option == k).map(|c| c.mean);
    match (get(OptionKind::European), get(OptionKind::Asian), get(OptionKind::Lookback), get(OptionKind::UpAndOutBarrier)) {
        (Some(e), Some(a), Some(l), Some(b)) => l >= e && e >= b && l >= a,
        _ => false,
    }
}

fn criterion_6_table_trends() -> bool {
    let start = Instant::now();
    let full = std::env::var("MPS_FULL_GRID").is_ok_and(|v| v == "1");
    let mut grid = vec![
        GridCell { m_bits: 4, d_max: 64 },
        GridCell { m_bits: 5, d_max: 64 },
        GridCell { m_bits: 6, d_max: 64 },
    ];
    if full {
        grid.extend([
            GridCell { m_bits: 4, d_max: 150 },
            GridCell { m_bits: 5, d_max: 150 },
            GridCell { m_bits: 6, d_max: 100 },
            GridCell { m_bits: 6, d_max: 150 },
        ]);
    }
    let cfg = ExperimentConfig { grid, ..Default::default() };
    let rep = reproduce(&cfg).unwrap();
    let iv = |m, d| rep.row(m, d).and_then(european).map(|x| x.1);
    let heston_iv = european(&rep.rows[0]).unwrap().1;
    let mut notes = vec![format!("heston iv {heston_iv:.4}")];
    let mut ok = rep.rows.iter().all(|r| r.error.is_none());

    let d64: Vec<Option<f64>> = [4, 5, 6].iter().map(|&m| iv(m, 64)).collect();
    notes.push(format!("D=64 ivs {:?}", d64.iter().map(|v| v.map(|x| (x * 1e4).round() / 1e4)).collect::<Vec<_>>()));
    let m6_64 = d64[2].unwrap_or(f64::NAN);
    ok &= (m6_64 - 0.1731).abs() <= 0.02;
    ok &= d64.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if a < b && b <= heston_iv + 0.02));

    if full {
        let d150: Vec<Option<f64>> = [4, 5, 6].iter().map(|&m| iv(m, 150)).collect();
        ok &= d150.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if a < b));
        let m6_150 = d150[2].unwrap_or(f64::NAN);
        ok &= (m6_150 - 0.1967).abs() <= 0.02;
        let by_d: Vec<f64> = [64, 100, 150].iter().map(|&d| iv(6, d).unwrap_or(f64::NAN)).collect();
        ok &= by_d.windows(2).all(|w| w[0] <= w[1]);
        notes.push(format!("D=150 ivs {d150:?}, m=6 by D {by_d:?}"));
    } else {
        notes.push("D=100/150 cells skipped (set MPS_FULL_GRID=1)".into());
    }
    let dominance = rep.rows.iter().filter(|r| r.error.is_none()).all(dominance_holds);
    ok &= dominance;
    let secs = start.elapsed().as_secs_f64();
    ok &= secs <= 1800.0;
    notes.push(format!("dominance {dominance}, {secs:.0} s"));
    println!("{}", rep.to_markdown());
    report(6, ok, &notes.join("; "))
}

fn criterion_7_truncation_error_is_discarded_weight() -> bool {
    let mut rng = StreamRng::new(77, 0);
    let mut worst = 0.0f64;
    let mut worst_sv = 0.0f64;
    for i in 0..100 {
        let rows = 2 + rng.below(20) as usize;
        let cols = 2 + rng.below(20) as usize;
        let a = random_matrix(rows, cols, &mut rng);
        let dec = svd(&a).unwrap();
        let oracle = jacobi_singular_values(&a);
        for (s, o) in dec.singular_values.iter().zip(&oracle) {
            worst_sv = worst_sv.max((s - o).abs());
        }
        let keep = truncate_rank(&dec.singular_values, 0.0, 1 + i % rows.min(cols));
        let discarded = oracle[keep..].iter().map(|s| s * s).sum::<f64>().sqrt();
        let err = dec.reconstruct(keep).sub(&a).unwrap().frobenius_norm();
        worst = worst.max((err - discarded).abs());
    }
    let ok = worst <= 1e-8 && worst_sv <= 1e-10;
    report(7, ok, &format!("max |error - discarded weight| {worst:.2e}, max singular value gap vs Jacobi {worst_sv:.2e}"))
}

fn run_cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_mps-heston"))
        .current_dir(dir)
        .args(args)
        .args(["--threads", "1", "--out", "out"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Runs every subcommand inside `dir` with relative paths, so that the
/// paths echoed into reports are identical across directories.
fn run_all_commands(dir: &Path) {
    let cfg = ExperimentConfig {
        n_paths: 400,
        m_bits: 4,
        n_price_runs: 3,
        train: TrainConfig { d_max: 8, epochs: 2, ..Default::default() },
        grid: vec![GridCell { m_bits: 3, d_max: 4 }],
        ..Default::default()
    };
    std::fs::write(dir.join("config.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    let c = "config.json";
    run_cli(dir, &["generate", "--config", c, "--seed", "5"]);
    run_cli(dir, &["train", "--config", c, "--seed", "5", "--data", "out/paths.csv"]);
    run_cli(dir, &["sample", "--config", c, "--seed", "5", "--model", "out/model.mps", "-n", "300"]);
    run_cli(dir, &["price", "--config", c, "--seed", "5", "--paths", "out/samples.csv"]);
    run_cli(dir, &["hist", "--config", c, "--paths", "out/paths.csv", "-t", "5", "--bins", "20"]);
    run_cli(dir, &["reproduce", "--config", c, "--seed", "5"]);
}

fn criterion_8_byte_identical_artifacts() -> bool {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_all_commands(a.path());
    run_all_commands(b.path());
    let files = [
        "paths.csv",
        "paths.json",
        "model.mps",
        "train_report.json",
        "samples.csv",
        "prices.json",
        "hist_t5.csv",
        "reproduce.json",
        "reproduce.md",
        "resolved_config.json",
    ];
    let mut differing = Vec::new();
    for f in files {
        let x = std::fs::read(a.path().join("out").join(f)).unwrap();
        let y = std::fs::read(b.path().join("out").join(f)).unwrap();
        if x != y || x.is_empty() {
            differing.push(f);
        }
    }
    let ok = differing.is_empty();
    report(8, ok, &format!("{} artifacts compared, differing: {differing:?}", files.len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> bool); 8] = [
        (1, "heston_benchmark_price", criterion_1_heston_benchmark_price),
        (2, "constant_vol_matches_black_scholes", criterion_2_constant_vol_matches_black_scholes),
        (3, "gradient_matches_finite_differences", criterion_3_gradient_matches_finite_differences),
        (4, "exact_inference_and_sampler", criterion_4_exact_inference_and_sampler),
        (5, "point_mass_learning", criterion_5_point_mass_learning),
        (6, "table_trends", criterion_6_table_trends),
        (7, "truncation_error_is_discarded_weight", criterion_7_truncation_error_is_discarded_weight),
        (8, "byte_identical_artifacts", criterion_8_byte_identical_artifacts),
    ];
    // optional name filters, as with the default harness; flags are ignored
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (n, name, f) in criteria {
        let full = format!("criterion_{n}_{name}");
        if !filters.is_empty() && !filters.iter().any(|p| full.contains(p.as_str())) {
            continue;
        }
        let ok = std::panic::catch_unwind(f).unwrap_or_else(|_| report(n, false, "panicked"));
        if !ok {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
