use std::path::Path;
use std::process::{Command, Output};

use mps_heston::pipeline::PriceReport;
use mps_heston::pricing::OptionKind;
use mps_heston::train::{init_mps, TrainReport};
use mps_heston::DiscretizationMap;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mps-heston"))
        .current_dir(dir)
        .args(args)
        .args(["--threads", "1", "--out", "out"])
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generate(dir: &Path, n: usize) {
    let o = cli(dir, &["generate", "--n-paths", &n.to_string(), "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cli(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&cli(dir.path(), &["train"])), 1);
    assert_eq!(code(&cli(dir.path(), &["hist", "--paths", "x.csv", "-t", "1", "--range", "3"])), 1);
    assert_eq!(code(&cli(dir.path(), &["reproduce", "--grid", "6"])), 1);
}

#[test]
fn help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("reproduce"));
}

#[test]
fn corrupt_model_names_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.mps"), b"MPSXgarbage").unwrap();
    let o = cli(dir.path(), &["sample", "--model", "bad.mps", "-n", "5"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));
}

#[test]
fn missing_and_malformed_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cli(dir.path(), &["price", "--paths", "nope.csv"])), 2);
    std::fs::write(dir.path().join("ragged.csv"), "t0,t1\n1,2\n3\n").unwrap();
    assert_eq!(code(&cli(dir.path(), &["price", "--paths", "ragged.csv"])), 2);
    std::fs::write(dir.path().join("cfg.json"), r#"{"n_paths": 10, "colour": 1}"#).unwrap();
    assert_eq!(code(&cli(dir.path(), &["generate", "--config", "cfg.json"])), 2);
    assert_eq!(code(&cli(dir.path(), &["generate", "--n-paths", "0"])), 2);
}

#[test]
fn sample_zero_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 50);
    let o = cli(dir.path(), &["train", "--data", "out/paths.csv", "--bits", "3", "--d-max", "4", "--epochs", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = cli(dir.path(), &["sample", "--model", "out/model.mps", "-n", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/samples.csv")).unwrap();
    assert_eq!(text, "t1,t2,t3,t4,t5\n");
}

#[test]
fn zero_epochs_returns_initialization() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 80);
    let o = cli(dir.path(), &["train", "--data", "out/paths.csv", "--bits", "3", "--d-max", "5", "--epochs", "0", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let model = mps_heston::model::format::load(&dir.path().join("out/model.mps")).unwrap();
    let report: TrainReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/train_report.json")).unwrap()).unwrap();
    assert!(report.epoch_nll.is_empty());
    let disc = *model.disc();
    let init = init_mps(5, disc, 5, 3).unwrap();
    assert_eq!(model.sites(), init.sites());
    assert_eq!(report.final_bond_dims, init.bond_dims());
}

#[test]
fn histogram_has_unit_mass() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 500);
    let o = cli(dir.path(), &["hist", "--paths", "out/paths.csv", "-t", "3", "--bins", "25"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/hist_t3.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("bin_left,bin_right,density"));
    let mass: f64 = lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (v[1] - v[0]) * v[2]
        })
        .sum();
    assert!((mass - 1.0).abs() < 1e-9, "mass {mass}");
    assert_eq!(code(&cli(dir.path(), &["hist", "--paths", "out/paths.csv", "-t", "9"])), 2);
}

#[test]
fn constant_paths_price_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("t0,t1,t2,t3,t4,t5\n");
    for _ in 0..20 {
        csv.push_str("100,100,100,100,100,100\n");
    }
    std::fs::write(dir.path().join("flat.csv"), csv).unwrap();
    let o = cli(dir.path(), &["price", "--paths", "flat.csv", "--runs", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: PriceReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/prices.json")).unwrap()).unwrap();
    for rec in &report.full {
        assert_eq!(rec.mean, 0.0, "{:?}", rec.option);
        assert_eq!(rec.std_error, 0.0);
    }
    let eu = report.full.iter().find(|r| r.option == OptionKind::European).unwrap();
    assert!(eu.iv.is_none() && eu.iv_error.is_some());
}

#[test]
fn seed_flag_changes_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&cli(a.path(), &["generate", "--n-paths", "20", "--seed", "1"])), 0);
    assert_eq!(code(&cli(b.path(), &["generate", "--n-paths", "20", "--seed", "2"])), 0);
    let x = std::fs::read(a.path().join("out/paths.csv")).unwrap();
    let y = std::fs::read(b.path().join("out/paths.csv")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn reproduce_with_empty_grid_has_heston_row() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"n_paths": 300, "n_price_runs": 2}"#).unwrap();
    let o = cli(dir.path(), &["reproduce", "--config", "cfg.json", "--grid", ""]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let md = std::fs::read_to_string(dir.path().join("out/reproduce.md")).unwrap();
    assert!(md.contains("Heston"), "{md}");
}

#[test]
fn model_round_trip_through_disc() {
    let disc = DiscretizationMap::new(90.0, 110.0, 4).unwrap();
    let mps = init_mps(5, disc, 6, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.mps");
    mps_heston::model::format::save(&mps, &p).unwrap();
    let back = mps_heston::model::format::load(&p).unwrap();
    assert_eq!(back.sites(), mps.sites());
    assert_eq!(back.disc(), mps.disc());
}
