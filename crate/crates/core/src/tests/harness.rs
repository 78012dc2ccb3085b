//! End-to-end checks of the training loop and run-log tooling on short runs.

use std::fs;
use std::path::{Path, PathBuf};

use crate::env::{Cell, VisitDensity};
use crate::harness::{
    self, compare_runs, plot_density, train_into, EnvName, MetricsTable, RunConfig, RunLog, Trainer, Variant,
    DENSITY_FILE, METRICS_FILE, REWARDS_FILE, SUMMARY_FILE,
};
use tempfile::TempDir;

fn short(env: EnvName, variant: Variant) -> RunConfig {
    let mut cfg = RunConfig::for_env(env, variant);
    cfg.total_steps = 1536;
    cfg.ppo.horizon = 512;
    cfg.log_rewards = true;
    cfg.checkpoint_every = 2;
    cfg
}

fn run(cfg: &RunConfig, seed: u64, dir: &Path) -> PathBuf {
    let mut trainer = Trainer::new(cfg, seed).unwrap();
    train_into(&mut trainer, dir).unwrap();
    dir.to_path_buf()
}

#[derive(Debug, serde::Deserialize)]
struct Reward {
    r_ext: f64,
    r_int: f64,
    alpha: f64,
    r_total: f64,
}

fn rewards(dir: &Path) -> Vec<Reward> {
    csv::Reader::from_path(dir.join(REWARDS_FILE))
        .unwrap()
        .deserialize()
        .map(|r| r.unwrap())
        .collect()
}

#[test]
fn no_intrinsic_trains_on_extrinsic_reward_only() {
    let tmp = TempDir::new().unwrap();
    let dir = run(&short(EnvName::FourRooms, Variant::NoIntrinsic), 0, tmp.path());
    let rows = rewards(&dir);
    assert_eq!(rows.len(), 1536);
    for r in &rows {
        assert_eq!(r.alpha, 1.0);
        assert_eq!(r.r_total, r.r_ext);
    }
}

#[test]
fn no_adaptive_adds_the_full_intrinsic_reward() {
    let tmp = TempDir::new().unwrap();
    let dir = run(&short(EnvName::FourRooms, Variant::NoAdaptive), 0, tmp.path());
    let rows = rewards(&dir);
    assert_eq!(rows.len(), 1536);
    for r in &rows {
        assert_eq!(r.alpha, 0.0);
        assert!(r.r_int > 0.0);
        assert_eq!(r.r_total, r.r_ext + r.r_int);
    }
}

#[test]
fn same_seed_reproduces_metrics_bytes() {
    let cfg = short(EnvName::DarkChamber, Variant::Adazero);
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    run(&cfg, 3, a.path());
    run(&cfg, 3, b.path());
    for file in [METRICS_FILE, REWARDS_FILE, DENSITY_FILE] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
    let (sa, sb) = (harness::read_summary(a.path()).unwrap(), harness::read_summary(b.path()).unwrap());
    assert_eq!(sa.metrics_sha256, sb.metrics_sha256);

    let c = TempDir::new().unwrap();
    run(&cfg, 4, c.path());
    assert_ne!(harness::read_summary(c.path()).unwrap().metrics_sha256, sa.metrics_sha256);
}

#[test]
fn config_echo_reruns_identically() {
    let cfg = short(EnvName::FourRooms, Variant::Adazero);
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    run(&cfg, 1, a.path());
    let echoed = RunConfig::load(a.path().join(harness::CONFIG_FILE)).unwrap();
    run(&echoed, 1, b.path());
    assert_eq!(fs::read(a.path().join(METRICS_FILE)).unwrap(), fs::read(b.path().join(METRICS_FILE)).unwrap());
}

#[test]
fn saturated_evaluator_matches_no_adaptive() {
    // An evaluator whose output is pinned at sigmoid(-800) == 0 makes
    // adazero's alpha path equal to the forced alpha of no_adaptive; every
    // other code path must then produce the same bytes.
    let tmp = TempDir::new().unwrap();
    let mut dirs = Vec::new();
    for variant in [Variant::Adazero, Variant::NoAdaptive] {
        let mut cfg = short(EnvName::FourRooms, variant);
        cfg.evaluator.lr = 0.0;
        let mut trainer = Trainer::new(&cfg, 5).unwrap();
        let head = trainer.evaluator_mut().network_mut().layers_mut().last_mut().unwrap();
        head.weight.iter_mut().for_each(|w| *w = 0.0);
        head.bias[0] = -800.0;
        let dir = tmp.path().join(variant.name());
        train_into(&mut trainer, &dir).unwrap();
        dirs.push(dir);
    }
    for file in [METRICS_FILE, REWARDS_FILE, DENSITY_FILE] {
        assert_eq!(fs::read(dirs[0].join(file)).unwrap(), fs::read(dirs[1].join(file)).unwrap(), "{file}");
    }
}

#[test]
fn metrics_rows_advance_in_step() {
    let tmp = TempDir::new().unwrap();
    run(&short(EnvName::FourRooms, Variant::Adazero), 0, tmp.path());
    let table = MetricsTable::read(&tmp.path().join(METRICS_FILE)).unwrap();
    let steps = table.column("step").unwrap();
    assert_eq!(steps, vec![512.0, 1024.0, 1536.0]);
    assert!(tmp.path().join("checkpoints/update-00002").is_dir());
    assert!(tmp.path().join("checkpoints/final").is_dir());
}

fn density_dir(density: &VisitDensity) -> TempDir {
    let tmp = TempDir::new().unwrap();
    density.write_csv(tmp.path().join(DENSITY_FILE)).unwrap();
    tmp
}

fn pixels(png: &Path) -> Vec<u8> {
    image::open(png).unwrap().into_luma8().into_raw()
}

#[test]
fn single_visited_cell_lights_one_pixel() {
    let mut d = VisitDensity::new(6, 7);
    d.accumulate(Cell::new(2, 5)).unwrap();
    d.accumulate(Cell::new(2, 5)).unwrap();
    let tmp = density_dir(&d);
    let (png, coverage) = plot_density(tmp.path()).unwrap();
    assert_eq!(coverage, 1);
    let px = pixels(&png);
    assert_eq!(px.len(), 42);
    assert_eq!(px.iter().filter(|&&p| p > 0).count(), 1);
    assert_eq!(px[2 * 7 + 5], 255);
}

#[test]
fn uniform_visits_give_a_uniform_image() {
    let mut d = VisitDensity::new(4, 4);
    for r in 0..4 {
        for c in 0..4 {
            for _ in 0..3 {
                d.accumulate(Cell::new(r, c)).unwrap();
            }
        }
    }
    let tmp = density_dir(&d);
    let (png, coverage) = plot_density(tmp.path()).unwrap();
    assert_eq!(coverage, 16);
    assert!(pixels(&png).iter().all(|&p| p == 255));
}

#[test]
fn empty_density_is_an_error() {
    let tmp = density_dir(&VisitDensity::new(3, 3));
    assert!(plot_density(tmp.path()).is_err());
    let missing = TempDir::new().unwrap();
    assert!(plot_density(missing.path()).is_err());
}

fn copy_run(from: &Path, to: &Path, variant: Option<Variant>) {
    fs::create_dir_all(to).unwrap();
    for file in [METRICS_FILE, SUMMARY_FILE] {
        fs::copy(from.join(file), to.join(file)).unwrap();
    }
    if let Some(v) = variant {
        let text = fs::read_to_string(to.join(SUMMARY_FILE)).unwrap();
        let mut summary: serde_json::Value = serde_json::from_str(&text).unwrap();
        summary["variant"] = serde_json::Value::String(v.name().into());
        fs::write(to.join(SUMMARY_FILE), summary.to_string()).unwrap();
    }
}

#[test]
fn identical_logs_compare_to_zero() {
    let tmp = TempDir::new().unwrap();
    let src = run(&short(EnvName::FourRooms, Variant::Adazero), 0, &tmp.path().join("src"));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    copy_run(&src, &a, None);
    copy_run(&src, &b, None);
    copy_run(&src, &c, Some(Variant::NoAdaptive));
    let logs: Vec<RunLog> = [&a, &b, &c].into_iter().map(|d| RunLog::open(d).unwrap()).collect();
    let cmp = compare_runs(&logs).unwrap();
    assert_eq!(cmp.series.len(), 3);
    let mut checked = 0;
    for (j, name) in cmp.columns.iter().enumerate() {
        if name.ends_with("/spread") || name.starts_with("no_adaptive-adazero/") {
            for row in &cmp.series {
                assert!(row[j] == 0.0 || row[j].is_nan(), "{name} = {}", row[j]);
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 3 * 16);
    let az = cmp.variant(Variant::Adazero).unwrap();
    assert_eq!(az.runs, 2);
    assert_eq!(az.median_coverage, logs[0].summary.coverage as f64);
}

#[test]
fn empty_log_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let src = run(&short(EnvName::FourRooms, Variant::Adazero), 0, &tmp.path().join("src"));
    let empty = tmp.path().join("empty");
    copy_run(&src, &empty, None);
    let header = fs::read_to_string(src.join(METRICS_FILE)).unwrap();
    fs::write(empty.join(METRICS_FILE), header.lines().next().unwrap()).unwrap();
    assert!(RunLog::open(&empty).is_err());
    assert!(compare_runs(&[RunLog::open(&src).unwrap()]).is_err());
}
