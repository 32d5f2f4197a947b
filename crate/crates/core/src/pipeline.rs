//! Commands behind the CLI: generate, train, sample, price, hist, reproduce.
//!
//! Every command takes a resolved [`ExperimentConfig`], writes its artifacts
//! into the output directory together with `resolved_config.json`, and
//! returns the paths it wrote. Artifacts contain no timestamps or timings, so
//! repeating a command with the same seeds reproduces them byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heston::{heston_paths, HestonParams, HestonSidecar};
use crate::model::{format, DiscretizationMap};
use crate::paths::PricePaths;
use crate::pricing::{monte_carlo_price, OptionSpec, PriceEstimate, PriceRecord};
use crate::rng::{derive_seed, purpose, StreamRng, RNG_ALGORITHM};
use crate::sampling::sample_paths;
use crate::train::{train, TrainConfig, TrainReport};

/// One `(m, D_max)` model configuration of the reproduce grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub m_bits: u32,
    pub d_max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub heston: HestonParams,
    pub n_paths: usize,
    pub m_bits: u32,
    pub train: TrainConfig,
    pub options: Vec<OptionSpec>,
    pub n_price_runs: usize,
    /// Seed for path simulation and model sampling; training uses `train.seed`.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub grid: Vec<GridCell>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            heston: HestonParams::default(),
            n_paths: 10_000,
            m_bits: 6,
            train: TrainConfig::default(),
            options: OptionSpec::benchmark_set(),
            n_price_runs: 10,
            seed: 0,
            out_dir: PathBuf::from("out"),
            grid: vec![
                GridCell { m_bits: 4, d_max: 150 },
                GridCell { m_bits: 5, d_max: 150 },
                GridCell { m_bits: 6, d_max: 150 },
                GridCell { m_bits: 6, d_max: 64 },
                GridCell { m_bits: 6, d_max: 100 },
            ],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.heston.validate()?;
        self.train.validate()?;
        DiscretizationMap::new(0.0, 1.0, self.m_bits)?;
        if self.n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be at least 1".into()));
        }
        if self.n_price_runs == 0 {
            return Err(Error::InvalidInput("n_price_runs must be at least 1".into()));
        }
        for o in &self.options {
            o.validate()?;
        }
        for c in &self.grid {
            DiscretizationMap::new(0.0, 1.0, c.m_bits)?;
            if c.d_max == 0 {
                return Err(Error::InvalidInput("grid d_max must be at least 1".into()));
            }
        }
        Ok(())
    }

    fn write_echo(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join("resolved_config.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<&Path> {
    cfg.validate()?;
    let out = cfg.out_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(out)
}

/// Simulate `n_paths` Heston paths to `paths.csv` with a `paths.json` sidecar.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let out = prepare_out(cfg)?;
    let paths = heston_paths(&cfg.heston, cfg.n_paths, cfg.seed)?;
    let csv = out.join("paths.csv");
    paths.write_csv(&csv)?;
    let sidecar = out.join("paths.json");
    HestonSidecar::new(&cfg.heston, cfg.n_paths, cfg.seed).write(&sidecar)?;
    Ok(vec![csv, sidecar, cfg.write_echo(out)?])
}

/// Fit a model to the `t1..tM` columns of `paths`.
pub fn fit_model(paths: &PricePaths, m_bits: u32, train_cfg: &TrainConfig) -> Result<(crate::Mps, TrainReport)> {
    let obs = paths.observed();
    let (symbols, disc) = crate::model::encode(&obs, m_bits)?;
    train(&symbols, disc, train_cfg)
}

/// Train on a paths CSV; writes `model.mps` and `train_report.json`.
pub fn cmd_train(cfg: &ExperimentConfig, dataset: &Path) -> Result<(Vec<PathBuf>, TrainReport)> {
    let out = prepare_out(cfg)?;
    let paths = PricePaths::read_csv(dataset)?;
    let (mps, report) = fit_model(&paths, cfg.m_bits, &cfg.train)?;
    let model = out.join("model.mps");
    format::save(&mps, &model)?;
    let rep = out.join("train_report.json");
    write_json(&rep, &report)?;
    Ok((vec![model, rep, cfg.write_echo(out)?], report))
}

/// Draw `n` paths from a model file to `samples.csv` (header only for `n = 0`).
pub fn cmd_sample(cfg: &ExperimentConfig, model: &Path, n: usize) -> Result<Vec<PathBuf>> {
    let out = prepare_out(cfg)?;
    let mps = format::load(model)?;
    let batch = sample_paths(&mps, n, cfg.seed)?;
    let csv = out.join("samples.csv");
    batch.write_csv(&csv)?;
    Ok(vec![csv, cfg.write_echo(out)?])
}

/// Aggregate of one option over several pricing runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceCell {
    pub option: crate::pricing::OptionKind,
    pub strike: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<f64>,
    /// Mean over runs of the per-run Monte Carlo price.
    pub mean: f64,
    /// Standard error across runs; the Monte Carlo error of the single run
    /// when there is only one.
    pub std_error: f64,
    /// Paths per run.
    pub n: usize,
    pub runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iv_std_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iv_error: Option<String>,
    pub per_run: Vec<PriceRecord>,
}

fn mean_and_se(values: &[f64]) -> (f64, Option<f64>) {
    match PriceEstimate::from_values(values) {
        Ok(e) => (e.mean, Some(e.std_error)),
        Err(_) => (values[0], None),
    }
}

/// Price every option on each run's path set and aggregate across runs.
pub fn price_runs(options: &[OptionSpec], runs: &[PricePaths], s0: f64, maturity: f64) -> Result<Vec<PriceCell>> {
    if runs.is_empty() {
        return Err(Error::InvalidInput("no pricing runs".into()));
    }
    options
        .iter()
        .map(|spec| {
            let per_run = runs
                .iter()
                .map(|p| Ok(PriceRecord::new(spec, monte_carlo_price(spec, p)?, s0, maturity)))
                .collect::<Result<Vec<_>>>()?;
            let means: Vec<f64> = per_run.iter().map(|r| r.mean).collect();
            let (mean, se) = mean_and_se(&means);
            let std_error = se.unwrap_or(per_run[0].std_error);
            let (iv, iv_std_error, iv_error) = if spec.kind == crate::pricing::OptionKind::European {
                match per_run.iter().map(|r| r.iv.ok_or(r)).collect::<std::result::Result<Vec<f64>, _>>() {
                    Ok(ivs) => {
                        let (m, s) = mean_and_se(&ivs);
                        (Some(m), s, None)
                    }
                    Err(r) => (None, None, r.iv_error.clone()),
                }
            } else {
                (None, None, None)
            };
            Ok(PriceCell {
                option: spec.kind,
                strike: spec.strike,
                barrier: spec.barrier,
                mean,
                std_error,
                n: runs[0].n_paths(),
                runs: runs.len(),
                iv,
                iv_std_error,
                iv_error,
                per_run,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceReport {
    pub source: String,
    pub n_paths: usize,
    pub seed: u64,
    pub rng: String,
    /// Prices on the file as given.
    pub full: Vec<PriceRecord>,
    /// Bootstrap resamples of the file, one per run.
    pub resampled: Vec<PriceCell>,
}

fn bootstrap(paths: &PricePaths, seed: u64, run: usize) -> PricePaths {
    let mut rng = StreamRng::new(derive_seed(seed, purpose::BOOTSTRAP), run as u64);
    let n = paths.n_paths();
    let idx: Vec<usize> = (0..n).map(|_| rng.below(n as u64) as usize).collect();
    paths.select_rows(&idx)
}

/// Price the options on a paths CSV; writes `prices.json`.
///
/// Runs are bootstrap resamples of the file. The reproduce command draws
/// genuinely fresh path sets instead.
pub fn cmd_price(cfg: &ExperimentConfig, paths_csv: &Path) -> Result<(Vec<PathBuf>, PriceReport)> {
    let out = prepare_out(cfg)?;
    let paths = PricePaths::read_csv(paths_csv)?;
    if paths.n_paths() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 paths to price, got {}", paths.n_paths())));
    }
    let (s0, t) = (cfg.heston.s0, cfg.heston.maturity());
    let full = cfg
        .options
        .iter()
        .map(|spec| Ok(PriceRecord::new(spec, monte_carlo_price(spec, &paths)?, s0, t)))
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<PricePaths> = (0..cfg.n_price_runs).map(|r| bootstrap(&paths, cfg.seed, r)).collect();
    let resampled = price_runs(&cfg.options, &runs, s0, t)?;
    let report = PriceReport {
        source: paths_csv.display().to_string(),
        n_paths: paths.n_paths(),
        seed: cfg.seed,
        rng: RNG_ALGORITHM.to_string(),
        full,
        resampled,
    };
    let json = out.join("prices.json");
    write_json(&json, &report)?;
    Ok((vec![json, cfg.write_echo(out)?], report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistBin {
    pub left: f64,
    pub right: f64,
    pub density: f64,
}

/// Density histogram of `values` with `bins` equal bins on `range` (default
/// the data range; a zero-width range becomes `[x − 0.5, x + 0.5]`).
pub fn histogram(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Vec<HistBin>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("histogram of an empty column".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidInput("histogram needs at least one bin".into()));
    }
    let (mut lo, mut hi) = match range {
        Some((a, b)) if a.is_finite() && b.is_finite() && b > a => (a, b),
        Some((a, b)) => return Err(Error::InvalidInput(format!("invalid histogram range [{a}, {b}]"))),
        None => values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x))),
    };
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::NonFinite("histogram input".into()));
    }
    if hi == lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    let mut inside = 0usize;
    for &x in values {
        if x < lo || x > hi {
            continue;
        }
        let b = (((x - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
        inside += 1;
    }
    let n = values.len() as f64;
    Ok(counts
        .iter()
        .enumerate()
        .map(|(b, &c)| HistBin {
            left: lo + b as f64 * width,
            right: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
            // normalized by all values, so mass outside an explicit range is lost
            density: if inside == 0 { 0.0 } else { c as f64 / (n * width) },
        })
        .collect())
}

/// Histogram of column `tK` of a paths CSV; writes `hist_tK.csv` with
/// `bin_left,bin_right,density`.
pub fn cmd_hist(
    cfg: &ExperimentConfig,
    paths_csv: &Path,
    t_index: usize,
    bins: usize,
    range: Option<(f64, f64)>,
) -> Result<Vec<PathBuf>> {
    let out = prepare_out(cfg)?;
    let paths = PricePaths::read_csv(paths_csv)?;
    let first = paths.first_time();
    if t_index < first || t_index >= first + paths.n_cols() {
        return Err(Error::InvalidInput(format!(
            "no column t{t_index} in {} (has t{first}..t{})",
            paths_csv.display(),
            first + paths.n_cols().saturating_sub(1)
        )));
    }
    let values: Vec<f64> = paths.column(t_index - first).collect();
    let hist = histogram(&values, bins, range)?;
    let mut text = String::from("bin_left,bin_right,density\n");
    for b in &hist {
        writeln!(text, "{},{},{}", b.left, b.right, b.density).expect("string write");
    }
    let csv = out.join(format!("hist_t{t_index}.csv"));
    std::fs::write(&csv, text).map_err(|e| Error::io(&csv, e))?;
    Ok(vec![csv, cfg.write_echo(out)?])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<GridCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_bond_dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_nll: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prices: Vec<PriceCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproduceReport {
    pub config: ExperimentConfig,
    pub rng: String,
    pub maturity: f64,
    pub rows: Vec<TableRow>,
}

impl ReproduceReport {
    pub fn row(&self, m_bits: u32, d_max: usize) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.cell == Some(GridCell { m_bits, d_max }))
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let opts = &self.config.options;
        s.push_str("| Model |");
        for o in opts {
            s.push_str(&format!(" {} price |", o.kind));
            if o.kind == crate::pricing::OptionKind::European {
                s.push_str(" European IV |");
            }
        }
        s.push('\n');
        s.push_str("|---|");
        for o in opts {
            s.push_str("---|");
            if o.kind == crate::pricing::OptionKind::European {
                s.push_str("---|");
            }
        }
        s.push('\n');
        for row in &self.rows {
            s.push_str(&format!("| {} |", row.label));
            if let Some(e) = &row.error {
                s.push_str(&format!(" failed: {} |\n", e.replace('|', "/")));
                continue;
            }
            for c in &row.prices {
                s.push_str(&format!(" {:.4} ({:.4}) |", c.mean, c.std_error));
                if c.option == crate::pricing::OptionKind::European {
                    match (c.iv, c.iv_std_error) {
                        (Some(v), Some(e)) => s.push_str(&format!(" {v:.4} ({e:.4}) |")),
                        (Some(v), None) => s.push_str(&format!(" {v:.4} |")),
                        _ => s.push_str(" n/a |"),
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Heston reference row plus one row per grid cell.
///
/// The Heston row prices `n_price_runs` fresh simulations. Each grid cell
/// trains one model on a common simulated training set and prices
/// `n_price_runs` fresh sample batches drawn from it. A failing cell is
/// recorded in its row and the remaining cells still run.
pub fn reproduce(cfg: &ExperimentConfig) -> Result<ReproduceReport> {
    cfg.validate()?;
    let (s0, t) = (cfg.heston.s0, cfg.heston.maturity());
    let runs = cfg.n_price_runs;
    let heston_runs = (0..runs)
        .map(|r| heston_paths(&cfg.heston, cfg.n_paths, derive_seed(cfg.seed, 1 + r as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = vec![TableRow {
        label: "Heston".into(),
        cell: None,
        final_bond_dims: None,
        final_nll: None,
        prices: price_runs(&cfg.options, &heston_runs, s0, t)?,
        error: None,
    }];
    drop(heston_runs);
    if cfg.grid.is_empty() {
        return Ok(ReproduceReport { config: cfg.clone(), rng: RNG_ALGORITHM.into(), maturity: t, rows });
    }
    let training = heston_paths(&cfg.heston, cfg.n_paths, cfg.seed)?;
    for &cell in &cfg.grid {
        let label = format!("MPS (m={}, D_max={})", cell.m_bits, cell.d_max);
        let run_cell = || -> Result<TableRow> {
            let train_cfg = TrainConfig { d_max: cell.d_max, ..cfg.train.clone() };
            let (mps, report) = fit_model(&training, cell.m_bits, &train_cfg)?;
            let sample_seed = derive_seed(cfg.seed, ((cell.m_bits as u64) << 32) | cell.d_max as u64);
            let batches = (0..runs)
                .map(|r| sample_paths(&mps, cfg.n_paths, derive_seed(sample_seed, r as u64)).map(|b| b.decoded))
                .collect::<Result<Vec<_>>>()?;
            Ok(TableRow {
                label: label.clone(),
                cell: Some(cell),
                final_bond_dims: Some(report.final_bond_dims.clone()),
                final_nll: report.epoch_nll.last().copied().or(Some(report.initial_nll)),
                prices: price_runs(&cfg.options, &batches, s0, t)?,
                error: None,
            })
        };
        rows.push(run_cell().unwrap_or_else(|e| TableRow {
            label,
            cell: Some(cell),
            final_bond_dims: None,
            final_nll: None,
            prices: Vec::new(),
            error: Some(e.to_string()),
        }));
    }
    Ok(ReproduceReport { config: cfg.clone(), rng: RNG_ALGORITHM.into(), maturity: t, rows })
}

/// Run [`reproduce`] and write `reproduce.json` and `reproduce.md`.
pub fn cmd_reproduce(cfg: &ExperimentConfig) -> Result<(Vec<PathBuf>, ReproduceReport)> {
    let out = prepare_out(cfg)?;
    let report = reproduce(cfg)?;
    let json = out.join("reproduce.json");
    write_json(&json, &report)?;
    let md = out.join("reproduce.md");
    std::fs::write(&md, report.to_markdown()).map_err(|e| Error::io(&md, e))?;
    Ok((vec![json, md, cfg.write_echo(out)?], report))
}
