//! `spr3d`: simulate views of a particle, reconstruct it, and score the result.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "spr3d", version, about = "Ab initio 3D reconstruction from randomly oriented views")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic asymmetric blob phantom.
    Phantom(PhantomArgs),
    /// Generate a dataset of blurred, noisy views of a volume.
    Simulate(SimulateArgs),
    /// Reconstruct a volume and the view poses from a dataset.
    Reconstruct(ReconstructArgs),
    /// Register a reconstruction to ground truth and compute SSIM and FSC.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores, 1 = reproducible single-threaded).
    #[arg(long)]
    threads: Option<usize>,
    /// Repeat for more output: -v progress, -vv sampler distributions.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[arg(long, default_value_t = 50)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output volume file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Ground-truth volume file.
    gt: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    sigma_z: Option<f64>,
    #[arg(long)]
    sigma_xy: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    spots: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Rescale blur widths and spot count from a 50-voxel grid to the
    /// ground truth's size before applying the other flags.
    #[arg(long)]
    scale_to_grid: bool,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Dataset manifest.
    manifest: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    m_d: Option<usize>,
    #[arg(long)]
    m_psi: Option<usize>,
    #[arg(long)]
    n_d: Option<usize>,
    #[arg(long)]
    n_psi: Option<usize>,
    #[arg(long)]
    alpha_r: Option<f64>,
    #[arg(long)]
    beta_d: Option<f64>,
    #[arg(long)]
    beta_psi: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// random-uniform or random-uniform-spatial.
    #[arg(long)]
    init: Option<String>,
    /// Start from this volume file instead of a random one.
    #[arg(long)]
    init_volume: Option<PathBuf>,
    /// trilinear or tricubic.
    #[arg(long)]
    interpolation: Option<String>,
    /// cross-correlation or phase-correlation.
    #[arg(long)]
    translation: Option<String>,
    #[arg(long)]
    early_stop: bool,
    /// Skip the pose search and use the poses stored in the manifest.
    #[arg(long)]
    known_poses: bool,
    /// Write a checkpoint every k epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Reconstructed volume file.
    recon: PathBuf,
    /// Ground-truth volume file.
    gt: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Compare as is, without registering to the ground truth.
    #[arg(long)]
    no_register: bool,
    /// Also compute the conical FSC map.
    #[arg(long)]
    cfsc: bool,
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long)]
    cone_half_angle: Option<f64>,
    #[arg(long)]
    cfsc_directions: Option<usize>,
}

fn base_config(c: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(c.config.as_deref())?;
    if let Some(o) = &c.out {
        cfg.out = Some(o.clone());
    }
    if let Some(t) = c.threads {
        cfg.threads = t;
    }
    cfg.verbosity = cfg.verbosity.max(c.verbose);
    Ok(cfg)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Phantom(a) => run::phantom(a.size, a.seed, &a.out),
        Command::Simulate(a) => base_config(&a.common).and_then(|mut cfg| {
            let dims = spr3d::io::read_volume(&a.gt)?.dims();
            if a.scale_to_grid {
                let s = dims.nx as f64 / 50.0;
                cfg.sim.psf.sigma_xy *= s;
                cfg.sim.psf.sigma_z *= s;
                cfg.sim.dol_spots = (cfg.sim.dol_spots as f64 * s.powi(3)).round() as usize;
            }
            let sim = &mut cfg.sim;
            set(&mut sim.n_views, a.views);
            set(&mut sim.psf.sigma_z, a.sigma_z);
            set(&mut sim.psf.sigma_xy, a.sigma_xy);
            set(&mut sim.noise_sigma, a.noise);
            set(&mut sim.dol_spots, a.spots);
            set(&mut sim.seed, a.seed);
            run::simulate(&a.gt, &cfg)
        }),
        Command::Reconstruct(a) => base_config(&a.common).and_then(|mut cfg| {
            let r = &mut cfg.recon;
            set(&mut r.epochs, a.epochs);
            set(&mut r.m_d, a.m_d);
            set(&mut r.m_psi, a.m_psi);
            set(&mut r.n_d, a.n_d);
            set(&mut r.n_psi, a.n_psi);
            set(&mut r.alpha_r, a.alpha_r);
            set(&mut r.beta_d, a.beta_d);
            set(&mut r.beta_psi, a.beta_psi);
            set(&mut r.seed, a.seed);
            set(&mut r.init, a.init);
            set(&mut r.interpolation, a.interpolation);
            set(&mut r.translation, a.translation);
            set(&mut r.checkpoint_every, a.checkpoint_every);
            if a.mu.is_some() {
                r.mu = a.mu;
            }
            if a.init_volume.is_some() {
                r.init_volume = a.init_volume;
            }
            r.early_stop |= a.early_stop;
            r.known_poses |= a.known_poses;
            run::reconstruct(&a.manifest, &cfg)
        }),
        Command::Evaluate(a) => base_config(&a.common).and_then(|mut cfg| {
            let e = &mut cfg.eval;
            set(&mut e.cutoff, a.cutoff);
            set(&mut e.cone_half_angle_deg, a.cone_half_angle);
            set(&mut e.cfsc_directions, a.cfsc_directions);
            e.register &= !a.no_register;
            e.cfsc |= a.cfsc;
            run::evaluate(&a.recon, &a.gt, &cfg)
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
