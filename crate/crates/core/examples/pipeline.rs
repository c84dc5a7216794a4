//! Simulate, reconstruct and score a small synthetic dataset.
//!
//!     cargo run --release -p spr3d --example pipeline -- [size] [epochs]

use std::time::Instant;

use spr3d::eval::{register_to_ground_truth, ssim3d, RegistrationParams};
use spr3d::forward::{align_view, blob_phantom, generate_dataset, SimConfig};
use spr3d::recon::{reconstruct_with, ReconConfig};

fn main() -> spr3d::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("arguments are integers"));
    let n = args.next().unwrap_or(24);
    let epochs = args.next().unwrap_or(10);

    let gt = blob_phantom(n, 0)?;
    let views = generate_dataset(&gt, &SimConfig { seed: 1, ..SimConfig::scaled_to(n) })?;
    let poses = views.true_poses.clone().expect("simulated views carry poses");
    let mut best_view: f64 = 0.0;
    for (v, p) in views.views.iter().zip(&poses) {
        best_view = best_view.max(ssim3d(&align_view(v, p)?, &gt)?);
    }
    println!("{} views of a {n}^3 phantom, best aligned view SSIM {best_view:.4}", views.views.len());

    let start = Instant::now();
    let r = reconstruct_with(&views, &ReconConfig { epochs, ..Default::default() }, |rep| {
        println!("epoch {:>3}  energy {:.3}  alpha {:.3}  {:.0?}", rep.epoch, rep.mean_energy, rep.alpha, start.elapsed());
        Ok(())
    })?;
    let reg = register_to_ground_truth(&r.volume, &gt, &RegistrationParams::default())?;
    println!("reconstruction SSIM {:.4} after registration", ssim3d(&reg.aligned, &gt)?);
    Ok(())
}
