use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mps_heston::pipeline::{self, ExperimentConfig, GridCell};
use mps_heston::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "mps-heston", version, about = "MPS generative model for Heston paths and option pricing")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for simulation, sampling and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate Heston paths to paths.csv.
    Generate {
        #[arg(long)]
        n_paths: Option<usize>,
    },
    /// Train a model on a paths CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bits: Option<u32>,
        #[arg(long)]
        d_max: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Draw paths from a model file to samples.csv.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, short)]
        n: Option<usize>,
    },
    /// Price the configured options on a paths CSV.
    Price {
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Density histogram of one time column.
    Hist {
        #[arg(long)]
        paths: PathBuf,
        /// Time index of the column (tK).
        #[arg(long, short)]
        t: usize,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Explicit bin range as LO,HI.
        #[arg(long, value_parser = parse_range)]
        range: Option<(f64, f64)>,
    },
    /// Heston row plus one row per (m, D_max) model.
    Reproduce {
        /// Grid as m:D pairs, e.g. 4:64,5:64,6:64 (empty string for none).
        #[arg(long, value_parser = parse_grid)]
        grid: Option<Grid>,
    },
}

#[derive(Clone, Debug)]
struct Grid(Vec<GridCell>);

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    Ok((lo, hi))
}

fn parse_grid(s: &str) -> std::result::Result<Grid, String> {
    if s.trim().is_empty() {
        return Ok(Grid(Vec::new()));
    }
    s.split(',')
        .map(|c| {
            let (m, d) = c.split_once(':').ok_or_else(|| format!("expected m:D, got `{c}`"))?;
            Ok(GridCell {
                m_bits: m.trim().parse().map_err(|_| format!("bad m `{m}`"))?,
                d_max: d.trim().parse().map_err(|_| format!("bad D_max `{d}`"))?,
            })
        })
        .collect::<std::result::Result<_, _>>()
        .map(Grid)
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(Error::InvalidInput("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    let mut cfg = resolve(&cli.common)?;
    let written = match cli.command {
        Command::Generate { n_paths } => {
            if let Some(n) = n_paths {
                cfg.n_paths = n;
            }
            pipeline::cmd_generate(&cfg)?
        }
        Command::Train { data, bits, d_max, epochs, lr } => {
            if let Some(b) = bits {
                cfg.m_bits = b;
            }
            if let Some(d) = d_max {
                cfg.train.d_max = d;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(l) = lr {
                cfg.train.learning_rate = l;
            }
            let (files, report) = pipeline::cmd_train(&cfg, &data)?;
            for (e, nll) in report.epoch_nll.iter().enumerate() {
                eprintln!("epoch {e}: nll {nll:.6}");
            }
            eprintln!("bond dims {:?}, {:.1} s", report.final_bond_dims, report.wall_time_secs);
            files
        }
        Command::Sample { model, n } => pipeline::cmd_sample(&cfg, &model, n.unwrap_or(cfg.n_paths))?,
        Command::Price { paths, runs } => {
            if let Some(r) = runs {
                cfg.n_price_runs = r;
            }
            let (files, report) = pipeline::cmd_price(&cfg, &paths)?;
            for c in &report.resampled {
                let iv = c.iv.map(|v| format!(", iv {v:.4}")).unwrap_or_default();
                eprintln!("{}: {:.4} ({:.4}){iv}", c.option, c.mean, c.std_error);
            }
            files
        }
        Command::Hist { paths, t, bins, range } => pipeline::cmd_hist(&cfg, &paths, t, bins, range)?,
        Command::Reproduce { grid } => {
            if let Some(Grid(g)) = grid {
                cfg.grid = g;
            }
            let (files, report) = pipeline::cmd_reproduce(&cfg)?;
            eprint!("{}", report.to_markdown());
            files
        }
    };
    for f in written {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
