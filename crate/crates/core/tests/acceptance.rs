//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits nonzero if any fails.
//!
//! The benchmark reconstruction (32^3, 20 views, 20 epochs) dominates the
//! runtime, roughly 25 minutes on one core.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spr3d::eval::{directional_fsc, register_to_ground_truth, ssim3d, Registration, RegistrationParams};
use spr3d::forward::{align_view, blob_phantom, generate_dataset, SimConfig, ViewSet};
use spr3d::grid::{energy_term, fft, forward_spectrum, Dims, Interpolation, SpectralVolume, Translation, Volume};
use spr3d::io::encode_volume;
use spr3d::pose::{
    draw_candidate_sets, evaluate_candidate, marginal_estimates, search_orientation, Candidate,
    OrientationSearchResult, SamplerParams, SamplerState,
};
use spr3d::recon::{gradient_term, reconstruct, reconstruct_with, ReconConfig, Reconstruction};
use spr3d::shift::{cross_correlate, phase_correlate, CrossCorrelation};
use spr3d::so3::{axis_distance, Orientation, Pose, So3Grid};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_volume(n: usize, rng: &mut ChaCha8Rng) -> Volume {
    Volume::from_fn(Dims::cube(n).unwrap(), |_, _, _| rng.random::<f64>() - 0.5)
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    Pose::new(
        Orientation::new(rng.random_range(0.0..6.28), rng.random_range(0.0..3.14), rng.random_range(0.0..6.28)),
        Translation::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
    )
}

fn gradient_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for seed in 0..20u64 {
        for interp in [Interpolation::Trilinear, Interpolation::Tricubic] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = fft(&random_volume(8, &mut rng));
            let y = fft(&random_volume(8, &mut rng));
            let h = fft(&random_volume(8, &mut rng));
            let pose = random_pose(&mut rng);
            let g = gradient_term(&f, &h, &y, &pose, interp).unwrap();
            let dir: Vec<Complex64> =
                (0..f.data().len()).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
            let analytic: f64 = g.data().iter().zip(&dir).map(|(g, d)| g.re * d.re + g.im * d.im).sum();
            let energy = |s: f64| {
                let data = f.data().iter().zip(&dir).map(|(a, d)| a + s * d).collect();
                let fs = SpectralVolume::from_vec(f.dims(), data).unwrap();
                energy_term(&y, &h, &fs, &pose, interp).unwrap() * 512.0
            };
            let eps = 1e-4;
            let numeric = (energy(eps) - energy(-eps)) / (2.0 * eps);
            worst = worst.max(((analytic - numeric) / numeric).abs());
            cases += 1;
        }
    }
    outcome(worst < 1e-5, format!("{cases} instances, max rel err {worst:.2e}"))
}

fn parseval() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let f = fft(&random_volume(8, &mut rng));
        let y = fft(&random_volume(8, &mut rng));
        let h = fft(&random_volume(8, &mut rng));
        let pose = random_pose(&mut rng);
        let model = forward_spectrum(&h, &f, &pose, Interpolation::Trilinear).unwrap();
        let residual = SpectralVolume::from_vec(y.dims(), y.data().iter().zip(model.data()).map(|(a, b)| a - b).collect()).unwrap();
        let spatial: f64 = residual.inverse_complex().iter().map(|c| c.norm_sqr()).sum();
        let fourier = energy_term(&y, &h, &f, &pose, Interpolation::Trilinear).unwrap();
        worst = worst.max(((spatial - fourier) / spatial).abs());
    }
    outcome(worst < 1e-8, format!("20 instances, max rel err {worst:.2e}"))
}

fn smooth_particle(n: usize) -> Volume {
    let c = (n as f64 - 1.0) / 2.0;
    let s = n as f64 / 12.0;
    Volume::from_fn(Dims::cube(n).unwrap(), |x, y, z| {
        let (a, b, d) = ((x as f64 - c) / s, (y as f64 - c) / s, (z as f64 - c) / s);
        (-(a - 1.5).powi(2) / 6.0 - b * b / 3.0 - d * d / 2.0).exp()
            + 0.6 * (-((a + 2.0).powi(2) + (b - 2.0).powi(2) + (d - 1.0).powi(2)) / 2.0).exp()
    })
}

fn exhaustive_search() -> Outcome {
    let (n, m_d, m_psi) = (32, 128, 16);
    let grid = So3Grid::new(m_d, m_psi).unwrap();
    let f_hat = fft(&smooth_particle(n).center_to_origin());
    let psf_hat = SpectralVolume::from_fn(f_hat.dims(), |_, _, _| Complex64::new(1.0, 0.0));
    let truth = (11, 77);
    let pose = Pose::new(grid.orientation(truth.0, truth.1), Translation::from_integer([2, -1, 3]));
    let y_hat = forward_spectrum(&psf_hat, &f_hat, &pose, Interpolation::Trilinear).unwrap();
    let all_psi: Vec<usize> = (0..m_psi).collect();
    let all_d: Vec<usize> = (0..m_d).collect();
    let r = search_orientation(&f_hat, &psf_hat, &y_hat, &grid, &all_psi, &all_d, &CrossCorrelation, Interpolation::Trilinear)
        .unwrap();
    // Brute force, one candidate at a time, axes outermost.
    let mut brute = (f64::INFINITY, 0, 0);
    let mut same_energies = true;
    for j in 0..m_d {
        for i in 0..m_psi {
            let (e, _) =
                evaluate_candidate(&f_hat, &psf_hat, &y_hat, &grid.orientation(i, j), &CrossCorrelation, Interpolation::Trilinear)
                    .unwrap();
            same_energies &= r.energy(i, j) == Some(e);
            if e < brute.0 {
                brute = (e, i, j);
            }
        }
    }
    let relative = r.best_energy() * (n * n * n) as f64 / y_hat.norm_sqr();
    let t_ok = r.best_pose.translation == pose.translation;
    outcome(
        same_energies && r.best == (brute.1, brute.2) && r.best == truth && t_ok && relative < 1e-12,
        format!(
            "search {:?}, brute force {:?}, truth {:?}, identical energies {same_energies}, translation {:?}, relative residual {relative:.1e}",
            r.best,
            (brute.1, brute.2),
            truth,
            r.best_pose.translation.0
        ),
    )
}

fn shift_recovery() -> Outcome {
    let mut failures = Vec::new();
    // Exact recovery of constructed shifts.
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_volume(16, &mut rng);
        let t = [rng.random_range(-7..=8), rng.random_range(-7..=8), rng.random_range(-7..=8)];
        let (yh, bh) = (fft(&b.circular_shift(t)), fft(&b));
        let pc = phase_correlate(&yh, &bh).unwrap().shift;
        let cc = cross_correlate(&yh, &bh).unwrap().shift;
        if pc != t || cc != t {
            failures.push(format!("shift {t:?}: phase {pc:?}, cross {cc:?}"));
        }
    }
    // Brute force over every integer shift of an 8^3 grid.
    let n = 8i64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let b = random_volume(8, &mut rng);
        let t = [rng.random_range(-3..=4), rng.random_range(-3..=4), rng.random_range(-3..=4)];
        let (yh, bh) = (fft(&b.circular_shift(t)), fft(&b));
        let mut best = ([0i64; 3], f64::INFINITY);
        for tz in -(n - 1) / 2..=n / 2 {
            for ty in -(n - 1) / 2..=n / 2 {
                for tx in -(n - 1) / 2..=n / 2 {
                    let cand = [tx, ty, tz];
                    let shifted = spr3d::grid::apply_phase_shift(&bh, &Translation::from_integer(cand));
                    let e: f64 = yh.data().iter().zip(shifted.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
                    if e < best.1 {
                        best = (cand, e);
                    }
                }
            }
        }
        let pc = phase_correlate(&yh, &bh).unwrap().shift;
        if pc != best.0 {
            failures.push(format!("8^3 seed {seed}: brute force {:?}, phase peak {pc:?}", best.0));
        }
    }
    let pass = failures.is_empty();
    outcome(pass, if pass { "10 exact recoveries, 10 brute-force matches".into() } else { failures.join("; ") })
}

/// Shared state of the 32^3 benchmark.
struct Benchmark {
    gt: Volume,
    views: ViewSet,
    poses: Vec<Pose>,
    best_view: usize,
    best_view_ssim: f64,
    best_aligned: Volume,
    known_ssim: f64,
    joint: Reconstruction,
    registration: Registration,
    joint_ssim: f64,
}

fn run_benchmark() -> Benchmark {
    let n = 32;
    let gt = blob_phantom(n, 0).unwrap();
    let mut sim = SimConfig::scaled_to(n);
    sim.seed = 1;
    let views = generate_dataset(&gt, &sim).unwrap();
    let poses = views.true_poses.clone().unwrap();
    let aligned: Vec<Volume> = views.views.iter().zip(&poses).map(|(v, p)| align_view(v, p).unwrap()).collect();
    let scores: Vec<f64> = aligned.iter().map(|a| ssim3d(a, &gt).unwrap()).collect();
    let best_view = (0..scores.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();

    let t = Instant::now();
    let known = reconstruct(&views, &ReconConfig { known_poses: Some(poses.clone()), ..Default::default() }).unwrap();
    let known_ssim = ssim3d(&known.volume, &gt).unwrap();
    println!("  known-pose reconstruction: {:.0?}", t.elapsed());

    let t = Instant::now();
    let joint = reconstruct_with(&views, &ReconConfig::default(), |rep| {
        println!("  epoch {:>2}  energy {:.3}  ({:.0?})", rep.epoch, rep.mean_energy, t.elapsed());
        Ok(())
    })
    .unwrap();
    let t = Instant::now();
    let registration = register_to_ground_truth(&joint.volume, &gt, &RegistrationParams::default()).unwrap();
    let joint_ssim = ssim3d(&registration.aligned, &gt).unwrap();
    println!("  registration: {:.0?}", t.elapsed());

    Benchmark {
        gt,
        views,
        best_view,
        best_view_ssim: scores[best_view],
        best_aligned: aligned[best_view].clone(),
        poses,
        known_ssim,
        joint,
        registration,
        joint_ssim,
    }
}

fn end_to_end(b: &Benchmark) -> Outcome {
    let pass = b.joint_ssim > b.best_view_ssim && b.known_ssim >= b.joint_ssim - 0.05;
    outcome(
        pass,
        format!(
            "SSIM joint {:.4} vs best view {:.4} (view {}), known poses {:.4}",
            b.joint_ssim, b.best_view_ssim, b.best_view, b.known_ssim
        ),
    )
}

fn axial_restoration(b: &Benchmark) -> Outcome {
    // Directions of the best view's own axes, in the ground-truth frame.
    let rt = b.poses[b.best_view].orientation.matrix().transpose();
    let (axial, lat_x, lat_y) = (rt * Vector3::z(), rt * Vector3::x(), rt * Vector3::y());
    let res = |v: &Volume, d: &Vector3<f64>| {
        directional_fsc(v, &b.gt, d, 20f64.to_radians(), 0.143).unwrap().expect("cone has shells").cutoff_resolution
    };
    let lateral = |v: &Volume| (res(v, &lat_x) + res(v, &lat_y)) / 2.0;
    let (view_z, view_lat) = (res(&b.best_aligned, &axial), lateral(&b.best_aligned));
    let (joint_z, joint_lat) = (res(&b.registration.aligned, &axial), lateral(&b.registration.aligned));
    let pass = joint_z >= 1.5 * view_z && joint_lat >= 0.75 * view_lat;
    outcome(
        pass,
        format!(
            "axial {joint_z:.3} vs {view_z:.3} ({:.2}x), lateral {joint_lat:.3} vs {view_lat:.3} cycles/voxel",
            joint_z / view_z
        ),
    )
}

fn energy_descent(b: &Benchmark) -> Outcome {
    let mut rows = Vec::new();
    let mut pass = true;
    let mut check = |seed: u64, trace: &[f64]| {
        let ok = trace[9] < trace[0];
        pass &= ok;
        rows.push(format!("seed {seed}: {:.2} -> {:.2}", trace[0], trace[9]));
    };
    // The first ten epochs of the 20-epoch benchmark run are a 10-epoch run.
    check(0, &b.joint.energy_trace);
    for seed in 1..5 {
        let t = Instant::now();
        let r = reconstruct(&b.views, &ReconConfig { seed, epochs: 10, ..Default::default() }).unwrap();
        println!("  seed {seed}: {:.0?}", t.elapsed());
        check(seed, &r.energy_trace);
    }
    outcome(pass, rows.join(", "))
}

fn sampler_convergence(b: &Benchmark) -> Outcome {
    let cfg = ReconConfig::default();
    let grid = So3Grid::new(cfg.m_d, cfg.m_psi).unwrap();
    let g = b.registration.pose.orientation.matrix();
    let mut within = 0;
    let mut errs = Vec::new();
    for (l, p) in b.poses.iter().enumerate() {
        let mode = grid.axes()[b.joint.sampler.mode_d(l)];
        let truth = Orientation::from_matrix(&(p.orientation.matrix() * g)).axis();
        // (d, psi) and (-d, -psi) are the same rotation.
        let d = axis_distance(&mode, &truth).min(axis_distance(&-mode, &truth)).to_degrees();
        within += (d < 15.0) as usize;
        errs.push(format!("{d:.0}"));
    }
    outcome(within >= 16, format!("{within}/20 modes within 15 deg (errors: {})", errs.join(" ")))
}

fn determinism() -> Outcome {
    let n = 16;
    let gt = blob_phantom(n, 4).unwrap();
    let views = generate_dataset(&gt, &SimConfig { n_views: 6, seed: 9, ..SimConfig::scaled_to(n) }).unwrap();
    let cfg = ReconConfig {
        epochs: 3,
        m_d: 128,
        m_psi: 16,
        sampler: SamplerParams { n_d: 16, n_psi: 4, ..Default::default() },
        seed: 7,
        ..Default::default()
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let r = pool.install(|| reconstruct(&views, &cfg)).unwrap();
        let path = dir.path().join(name);
        spr3d::io::write_volume(&r.volume, &path).unwrap();
        (std::fs::read(&path).unwrap(), encode_volume(&r.volume))
    };
    let (a, ea) = run("a.spfv");
    let (b, eb) = run("b.spfv");
    outcome(a == b && ea == eb && a == ea, format!("{} bytes, identical: {}", a.len(), a == b))
}

fn unbiasedness() -> Outcome {
    let (m_psi, m_d, n) = (6, 6, 3);
    let table = |i: usize, j: usize| 0.3 * ((i * 5 + j * 3) % 7) as f64 + 0.1 * i as f64 + 0.05 * j as f64;
    let p = |i: usize, j: usize| (-table(i, j)).exp();
    let params = SamplerParams { n_d: n, n_psi: n, alpha_r: 1.2, beta_d: 1.0, beta_psi: 1.0 };
    let state = SamplerState::new(1, m_d, m_psi, params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut sum_psi, mut seen_psi) = (vec![0.0; m_psi], vec![0.0; m_psi]);
    let (mut sum_d, mut seen_d) = (vec![0.0; m_d], vec![0.0; m_d]);
    for _ in 0..10_000 {
        let (i_psi, i_d) = draw_candidate_sets(&state, 0, &mut rng).unwrap();
        let mut candidates = Vec::new();
        let mut likelihoods = Vec::new();
        for &i in &i_psi {
            for &j in &i_d {
                candidates.push(Candidate { i, j, energy: table(i, j), translation: Translation::ZERO });
                likelihoods.push(p(i, j));
            }
        }
        let result = OrientationSearchResult {
            best: (i_psi[0], i_d[0]),
            best_pose: Pose::identity(),
            candidates,
            likelihoods,
        };
        let (pi_psi, pi_d) = marginal_estimates(&result, &i_psi, &i_d, state.q_psi(0), state.q_d(0)).unwrap();
        // Each index is drawn without replacement, so the sum over the
        // drawn set carries a factor of the set size.
        for (k, &i) in i_psi.iter().enumerate() {
            sum_psi[i] += pi_psi[k] / n as f64;
            seen_psi[i] += 1.0;
        }
        for (k, &j) in i_d.iter().enumerate() {
            sum_d[j] += pi_d[k] / n as f64;
            seen_d[j] += 1.0;
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..m_psi {
        let exact: f64 = (0..m_d).map(|j| p(i, j)).sum();
        worst = worst.max((sum_psi[i] / seen_psi[i] - exact).abs() / exact);
    }
    for j in 0..m_d {
        let exact: f64 = (0..m_psi).map(|i| p(i, j)).sum();
        worst = worst.max((sum_d[j] / seen_d[j] - exact).abs() / exact);
    }
    outcome(worst < 0.05, format!("10^4 draws, max rel err {worst:.4}"))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut failed = 0;
    let mut report = |k: usize, name: &str, run: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += !o.pass as usize;
        println!("{tag} {k:>2} {name}: {} [{:.1?}]", o.detail, t.elapsed());
    };
    report(1, "gradient matches finite differences", &mut gradient_oracle);
    report(2, "spatial and spectral energies agree", &mut parseval);
    report(3, "exhaustive search equals brute force", &mut exhaustive_search);
    report(4, "integer shifts are recovered", &mut shift_recovery);
    report(9, "single-threaded runs are bit-identical", &mut determinism);
    report(10, "importance estimate is unbiased", &mut unbiasedness);

    println!("running the 32^3 benchmark");
    let t = Instant::now();
    let bench = run_benchmark();
    println!("  benchmark total: {:.0?}", t.elapsed());
    report(5, "joint reconstruction beats every view", &mut || end_to_end(&bench));
    report(6, "axial resolution is restored", &mut || axial_restoration(&bench));
    report(7, "energy decreases over ten epochs", &mut || energy_descent(&bench));
    report(8, "axis distributions peak at the true axes", &mut || sampler_convergence(&bench));

    println!("{} of 10 criteria failed, {:.0?} total", failed, start.elapsed());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
