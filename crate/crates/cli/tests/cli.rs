use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spr3d::io::{load_dataset, read_volume};

fn spr3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spr3d")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = spr3d(args);
    assert!(out.status.success(), "spr3d {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Phantom plus a small, cheap dataset.
fn small_dataset(root: &Path, views: &str, extra: &[&str]) -> std::path::PathBuf {
    let gt = root.join("gt.spfv");
    ok(&["phantom", "--size", "12", "--seed", "3", "--out", s(&gt)]);
    let data = root.join("data");
    let mut args = vec!["simulate", s(&gt), "--out", s(&data), "--views", views, "--scale-to-grid", "--seed", "5"];
    args.extend_from_slice(extra);
    ok(&args);
    data
}

const SMALL_RECON: &[&str] = &["--m-d", "32", "--m-psi", "8", "--n-d", "8", "--n-psi", "4", "--threads", "1"];

/// Reconstructs `data` into `out` on a small orientation grid.
fn reconstruct(data: &Path, out: &Path, extra: &[&str]) {
    let manifest = data.join("manifest.toml");
    let mut args = vec!["reconstruct", s(&manifest), "--out", s(out)];
    args.extend_from_slice(SMALL_RECON);
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn simulate_writes_views_manifest_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "4", &[]);
    for l in 0..4 {
        assert!(data.join(format!("view_{l:03}.spfv")).exists());
    }
    assert!(data.join("config.toml").exists());
    let set = load_dataset(data.join("manifest.toml")).unwrap();
    assert_eq!(set.set.views.len(), 4);
    assert_eq!(set.seed, Some(5));
    assert_eq!(set.set.true_poses.unwrap().len(), 4);
    let cfg = fs::read_to_string(data.join("config.toml")).unwrap();
    assert!(cfg.contains("n_views = 4"), "{cfg}");
}

#[test]
fn view_count_and_axial_blur_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "6", &["--sigma-z", "15"]);
    let set = load_dataset(data.join("manifest.toml")).unwrap();
    assert_eq!(set.set.views.len(), 6);
    assert_eq!(set.sim.unwrap().psf.sigma_z, 15.0);
}

#[test]
fn fixed_seed_simulations_are_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = small_dataset(a.path(), "4", &[]);
    let db = small_dataset(b.path(), "4", &[]);
    let mut names: Vec<_> = fs::read_dir(&da).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        assert_eq!(fs::read(da.join(&n)).unwrap(), fs::read(db.join(&n)).unwrap(), "{n:?} differs");
    }
}

#[test]
fn reconstruct_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "4", &[]);
    let out = dir.path().join("recon");
    reconstruct(&data, &out, &["--epochs", "3", "--checkpoint-every", "2", "-vv"]);
    for f in ["recon.spfv", "poses.csv", "energy.csv", "config.toml", "sampler.csv", "checkpoints/epoch_002/recon.spfv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert_eq!(read_volume(out.join("recon.spfv")).unwrap().dims().nx, 12);
    assert_eq!(fs::read_to_string(out.join("energy.csv")).unwrap().lines().count(), 4);
    assert_eq!(fs::read_to_string(out.join("poses.csv")).unwrap().lines().count(), 5);
    // 3 epochs x 4 views x (8 + 32) entries plus the header.
    assert_eq!(fs::read_to_string(out.join("sampler.csv")).unwrap().lines().count(), 1 + 3 * 4 * 40);
}

#[test]
fn zero_epochs_return_the_initial_volume() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "4", &[]);
    let init = dir.path().join("gt.spfv");
    let out = dir.path().join("r0");
    reconstruct(&data, &out, &["--epochs", "0", "--init-volume", s(&init)]);
    let a = read_volume(out.join("recon.spfv")).unwrap();
    let b = read_volume(&init).unwrap();
    let max = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(max < 1e-6, "{max}");
}

#[test]
fn single_threaded_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "4", &[]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        reconstruct(&data, &out, &["--epochs", "2"]);
        fs::read(out.join("recon.spfv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn known_poses_beat_search_on_noiseless_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "4", &["--noise", "0", "--spots", "0"]);
    let final_energy = |name: &str, known: bool| {
        let out = dir.path().join(name);
        reconstruct(&data, &out, if known { &["--epochs", "4", "--known-poses"] } else { &["--epochs", "4"] });
        let text = fs::read_to_string(out.join("energy.csv")).unwrap();
        text.lines().last().unwrap().split(',').nth(1).unwrap().parse::<f64>().unwrap()
    };
    let known = final_energy("known", true);
    let searched = final_energy("search", false);
    assert!(known < searched, "known {known} vs searched {searched}");
}

#[test]
fn evaluate_gt_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.spfv");
    ok(&["phantom", "--size", "16", "--out", s(&gt)]);
    let out = dir.path().join("eval");
    ok(&["evaluate", s(&gt), s(&gt), "--out", s(&out), "--no-register", "--cfsc", "--cfsc-directions", "20"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!((m["ssim"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let fsc = fs::read_to_string(out.join("fsc.csv")).unwrap();
    for row in fsc.lines().skip(1) {
        let v: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{row}");
    }
    assert!(out.join("cfsc.csv").exists());
}

#[test]
fn evaluate_with_registration_recovers_identity() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.spfv");
    ok(&["phantom", "--size", "16", "--out", s(&gt)]);
    let out = dir.path().join("eval");
    ok(&["evaluate", s(&gt), s(&gt), "--out", s(&out), "--threads", "1"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(m["ssim"].as_f64().unwrap() > 0.999);
}

#[test]
fn missing_ground_truth_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.spfv");
    ok(&["phantom", "--size", "8", "--out", s(&gt)]);
    let out = spr3d(&["evaluate", s(&gt), "/nonexistent/gt.spfv", "--out", s(&dir.path().join("e"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nonexistent"), "{err}");
}

#[test]
fn missing_output_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.spfv");
    ok(&["phantom", "--size", "8", "--out", s(&gt)]);
    let out = spr3d(&["simulate", s(&gt)]);
    assert!(!out.status.success());
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.spfv");
    ok(&["phantom", "--size", "8", "--out", s(&gt)]);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[sim]\nn_views = 3\nnoise_sigma = 0.05\n").unwrap();
    let data = dir.path().join("d");
    ok(&["simulate", s(&gt), "--config", s(&cfg), "--out", s(&data), "--noise", "0.1"]);
    let set = load_dataset(data.join("manifest.toml")).unwrap();
    assert_eq!(set.set.views.len(), 3);
    assert_eq!(set.sim.unwrap().noise_sigma, 0.1);
}
