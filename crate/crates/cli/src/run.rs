//! Subcommand bodies. Each writes its artifacts under the output directory
//! and re-reads the volume files it wrote before reporting success.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use spr3d::eval::{conical_fsc, fsc, register_to_ground_truth, ssim3d, write_cfsc_csv, write_fsc_csv};
use spr3d::forward::{blob_phantom, generate_dataset};
use spr3d::grid::{Dims, Volume};
use spr3d::io::{self, PoseRecord};
use spr3d::pose::{write_sampler_csv, SAMPLER_CSV_HEADER};
use spr3d::recon::{reconstruct_with, Init};
use spr3d::so3::Pose;

use crate::config::RunConfig;

fn init_threads(cfg: &RunConfig) -> Result<()> {
    if cfg.threads > 0 {
        // Fails only if a pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let Some(dir) = cfg.out.clone() else { bail!("no output directory: pass --out or set `out` in the config") };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Writes a volume and checks that reading it back gives the same bytes.
fn write_checked(v: &Volume, path: &Path) -> Result<()> {
    io::write_volume(v, path).with_context(|| format!("writing {}", path.display()))?;
    let back = io::read_volume(path).with_context(|| format!("re-reading {}", path.display()))?;
    ensure!(io::encode_volume(&back) == io::encode_volume(v), "{} did not round-trip", path.display());
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn phantom(size: usize, seed: u64, out: &Path) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_checked(&blob_phantom(size, seed)?, out)
}

pub fn simulate(gt_path: &Path, cfg: &RunConfig) -> Result<()> {
    init_threads(cfg)?;
    let dir = out_dir(cfg)?;
    let gt = io::read_volume(gt_path).with_context(|| format!("reading ground truth {}", gt_path.display()))?;
    let set = generate_dataset(&gt, &cfg.sim)?;
    let manifest = io::save_dataset_with(&set, &dir, Some(&cfg.sim))?;
    let loaded = io::load_dataset(&manifest).context("validating the written dataset")?;
    ensure!(loaded.set.views.len() == set.views.len(), "dataset did not round-trip");
    cfg.echo(&dir)?;
    if cfg.verbosity > 0 {
        eprintln!("wrote {} views to {}", set.views.len(), dir.display());
    }
    Ok(())
}

fn write_poses(poses: &[Pose], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "view,phi1,phi2,psi,tx,ty,tz")?;
    for (l, p) in poses.iter().enumerate() {
        let r = PoseRecord::from(p);
        writeln!(w, "{l},{},{},{},{},{},{}", r.phi1, r.phi2, r.psi, r.t[0], r.t[1], r.t[2])?;
    }
    w.flush()?;
    Ok(())
}

pub fn reconstruct(manifest: &Path, cfg: &RunConfig) -> Result<()> {
    init_threads(cfg)?;
    let dir = out_dir(cfg)?;
    let data = io::load_dataset(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    if cfg.verbosity > 0 && (!data.padded_views.is_empty() || data.psf_padded) {
        eprintln!("padded views {:?} (psf padded: {}) to a common cube", data.padded_views, data.psf_padded);
    }
    let mut rc = cfg.recon.to_config()?;
    if let Some(p) = &cfg.recon.init_volume {
        rc.init = Init::Provided(io::read_volume(p).with_context(|| format!("reading {}", p.display()))?);
    }
    if cfg.recon.known_poses {
        let Some(poses) = &data.set.true_poses else { bail!("--known-poses needs poses in the manifest") };
        rc.known_poses = Some(poses.clone());
    }
    cfg.echo(&dir)?;

    let mut sampler_csv = if cfg.verbosity >= 2 {
        let mut w = create(&dir.join("sampler.csv"))?;
        writeln!(w, "{SAMPLER_CSV_HEADER}")?;
        Some(w)
    } else {
        None
    };
    let every = cfg.recon.checkpoint_every;
    let result = reconstruct_with(&data.set, &rc, |rep| {
        if cfg.verbosity > 0 {
            eprintln!("epoch {:>3}  energy {:.6}  alpha {:.4}", rep.epoch, rep.mean_energy, rep.alpha);
        }
        if let Some(w) = sampler_csv.as_mut() {
            write_sampler_csv(w, rep.epoch, &rep.state.sampler)?;
        }
        if every > 0 && rep.epoch % every == 0 {
            let ck = dir.join("checkpoints").join(format!("epoch_{:03}", rep.epoch));
            let save = || -> Result<()> {
                fs::create_dir_all(&ck)?;
                write_checked(&rep.volume()?, &ck.join("recon.spfv"))?;
                write_poses(&rep.poses(), &ck.join("poses.csv"))?;
                let mut w = create(&ck.join("sampler.csv"))?;
                writeln!(w, "{SAMPLER_CSV_HEADER}")?;
                write_sampler_csv(&mut w, rep.epoch, &rep.state.sampler)?;
                w.flush()?;
                Ok(())
            };
            save().map_err(|e| spr3d::Error::Io(std::io::Error::other(format!("{e:#}"))))?;
        }
        Ok(())
    })?;
    if let Some(mut w) = sampler_csv {
        w.flush()?;
    }

    write_checked(&result.volume, &dir.join("recon.spfv"))?;
    let poses = match &rc.known_poses {
        Some(p) => p.clone(),
        None => result.poses.clone(),
    };
    write_poses(&poses, &dir.join("poses.csv"))?;
    let mut w = create(&dir.join("energy.csv"))?;
    writeln!(w, "epoch,mean_energy")?;
    for (k, e) in result.energy_trace.iter().enumerate() {
        writeln!(w, "{},{e}", k + 1)?;
    }
    w.flush()?;
    if cfg.verbosity > 0 {
        eprintln!("wrote reconstruction after {} epochs (step {:.3e}) to {}", result.epochs, result.mu, dir.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct Metrics {
    ssim: f64,
    fsc_resolution: f64,
    fsc_cutoff: f64,
    registered: bool,
    pose: PoseRecord,
    mutual_information: Option<f64>,
    cfsc_mean_resolution: Option<f64>,
}

pub fn evaluate(recon_path: &Path, gt_path: &Path, cfg: &RunConfig) -> Result<()> {
    init_threads(cfg)?;
    let recon = io::read_volume(recon_path).with_context(|| format!("reading reconstruction {}", recon_path.display()))?;
    let gt = io::read_volume(gt_path).with_context(|| format!("reading ground truth {}", gt_path.display()))?;
    let dir = out_dir(cfg)?;
    let m = [recon.dims(), gt.dims()].iter().map(|d| d.nx.max(d.ny).max(d.nz)).max().unwrap();
    let cube = Dims::cube(m)?;
    let pad = |v: Volume| if v.dims() == cube { v } else { io::pad_to(&v, cube) };
    let (recon, gt) = (pad(recon), pad(gt));
    let e = &cfg.eval;

    let (aligned, pose, mi) = if e.register {
        let reg = register_to_ground_truth(&recon, &gt, &e.registration())?;
        (reg.aligned, reg.pose, Some(reg.mutual_information))
    } else {
        (recon, Pose::identity(), None)
    };
    let ssim = ssim3d(&aligned, &gt)?;
    let curve = fsc(&aligned, &gt, e.cutoff)?;
    let mut w = create(&dir.join("fsc.csv"))?;
    write_fsc_csv(&curve, &mut w)?;
    w.flush()?;
    let cfsc_mean = if e.cfsc {
        let map = conical_fsc(&aligned, &gt, e.cfsc_directions, e.cone_half_angle_deg.to_radians(), e.cutoff)?;
        let mut w = create(&dir.join("cfsc.csv"))?;
        write_cfsc_csv(&map, &mut w)?;
        w.flush()?;
        map.mean_resolution()
    } else {
        None
    };
    write_checked(&aligned, &dir.join("aligned.spfv"))?;
    let metrics = Metrics {
        ssim,
        fsc_resolution: curve.cutoff_resolution,
        fsc_cutoff: e.cutoff,
        registered: e.register,
        pose: PoseRecord::from(&pose),
        mutual_information: mi,
        cfsc_mean_resolution: cfsc_mean,
    };
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)? + "\n")?;
    cfg.echo(&dir)?;
    if cfg.verbosity > 0 {
        eprintln!("ssim {ssim:.4}  fsc resolution {:.4} cycles/voxel", curve.cutoff_resolution);
    }
    Ok(())
}
