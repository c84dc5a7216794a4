//! Forward imaging model and the synthetic data generator.
//!
//! A view is `y = h * T_t(R(f)) + noise`: the particle is rotated, shifted,
//! blurred by the point spread function and corrupted by Gaussian noise.
//! PSF volumes keep their peak at voxel `n / 2` on every axis.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::grid::{self, apply_phase_shift, fft, ifft, Dims, Interpolation, Rotate, SpectralVolume, Translation, Volume};
use crate::so3::{Orientation, Pose};

/// Grid size the default simulation parameters were chosen for.
pub const REFERENCE_SIZE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfSpec {
    pub sigma_xy: f64,
    pub sigma_z: f64,
}

impl Default for PsfSpec {
    fn default() -> Self {
        Self { sigma_xy: 1.5, sigma_z: 5.0 }
    }
}

impl PsfSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("sigma_xy", self.sigma_xy), ("sigma_z", self.sigma_z)] {
            if !(s.is_finite() && s > 0.0) {
                return Err(argument(format!("{name} must be finite and positive, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_views: usize,
    pub noise_sigma: f64,
    pub dol_spots: usize,
    /// Spot standard deviation range, as a fraction of the grid size.
    pub spot_sigma_range: (f64, f64),
    pub spot_intensity_range: (f64, f64),
    pub seed: u64,
    pub psf: PsfSpec,
    /// Largest simulated shift per axis, as a fraction of the grid size.
    pub max_shift_frac: f64,
    /// Forces every view to this pose instead of drawing one.
    pub fixed_pose: Option<FixedPose>,
}

/// Serializable stand-in for a [`Pose`] in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPose {
    pub phi1: f64,
    pub phi2: f64,
    pub psi: f64,
    pub t: [f64; 3],
}

impl From<FixedPose> for Pose {
    fn from(p: FixedPose) -> Self {
        Pose::new(Orientation::new(p.phi1, p.phi2, p.psi), Translation(p.t))
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_views: 20,
            noise_sigma: 0.2,
            dol_spots: 120,
            spot_sigma_range: (0.02, 0.05),
            spot_intensity_range: (0.0, 1.0),
            seed: 0,
            psf: PsfSpec::default(),
            max_shift_frac: 0.1,
            fixed_pose: None,
        }
    }
}

impl SimConfig {
    /// Defaults rescaled from the 50-voxel reference to an `n`-voxel grid:
    /// blur widths scale with `n / 50`, the spot count with its cube.
    pub fn scaled_to(n: usize) -> Self {
        let s = n as f64 / REFERENCE_SIZE as f64;
        let base = Self::default();
        Self {
            psf: PsfSpec { sigma_xy: base.psf.sigma_xy * s, sigma_z: base.psf.sigma_z * s },
            dol_spots: (base.dol_spots as f64 * s.powi(3)).round() as usize,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.psf.validate()?;
        if self.n_views == 0 {
            return Err(argument("n_views must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(argument("noise_sigma must be finite and non-negative"));
        }
        let (slo, shi) = self.spot_sigma_range;
        if !(slo > 0.0 && slo <= shi && shi.is_finite()) {
            return Err(argument("spot_sigma_range must satisfy 0 < lo <= hi"));
        }
        let (ilo, ihi) = self.spot_intensity_range;
        if !(0.0 <= ilo && ilo <= ihi && ihi <= 1.0) {
            return Err(argument("spot_intensity_range must satisfy 0 <= lo <= hi <= 1"));
        }
        if !(0.0..0.5).contains(&self.max_shift_frac) {
            return Err(argument("max_shift_frac must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

/// Observed views, the PSF they were imaged with, and optionally their poses.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub views: Vec<Volume>,
    pub psf: Volume,
    pub true_poses: Option<Vec<Pose>>,
}

impl ViewSet {
    pub fn validate(&self) -> Result<()> {
        let d = self.psf.dims();
        if let Some(v) = self.views.iter().find(|v| v.dims() != d) {
            return Err(crate::error::shape(format!("view dims {:?} differ from PSF dims {d:?}", v.dims())));
        }
        if let Some(p) = &self.true_poses {
            if p.len() != self.views.len() {
                return Err(argument(format!("{} poses for {} views", p.len(), self.views.len())));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.psf.dims()
    }
}

/// Anisotropic Gaussian PSF with unit sum, peaked at voxel `n / 2`.
pub fn gaussian_psf(spec: &PsfSpec, dims: Dims) -> Result<Volume> {
    spec.validate()?;
    let n = dims.require_cubic()?;
    let c = (n / 2) as f64;
    let (ax, az) = (0.5 / (spec.sigma_xy * spec.sigma_xy), 0.5 / (spec.sigma_z * spec.sigma_z));
    let mut v = Volume::from_fn(dims, |x, y, z| {
        let (dx, dy, dz) = (x as f64 - c, y as f64 - c, z as f64 - c);
        (-(ax * (dx * dx + dy * dy) + az * dz * dz)).exp()
    });
    let total = v.sum();
    v.map_inplace(|x| x / total);
    Ok(v)
}

/// Spectrum of a PSF stored with its peak at `n / 2`, re-centered on the origin.
pub fn psf_spectrum(psf: &Volume) -> SpectralVolume {
    fft(&psf.center_to_origin())
}

/// Shifts, blurs, clamps at zero and adds noise to an already rotated particle.
fn image_rotated<R: Rng + ?Sized>(
    rotated: &Volume,
    psf_hat: &SpectralVolume,
    t: &Translation,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Volume> {
    let spectrum = apply_phase_shift(&fft(rotated), t);
    let mut out = ifft(&spectrum.hadamard(psf_hat))?;
    out.map_inplace(|v| v.max(0.0));
    add_noise(&mut out, noise_sigma, rng)?;
    Ok(out)
}

fn add_noise<R: Rng + ?Sized>(v: &mut Volume, sigma: f64, rng: &mut R) -> Result<()> {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| argument(e.to_string()))?;
        for x in v.data_mut() {
            *x += normal.sample(rng);
        }
    }
    Ok(())
}

/// Simulates one view `h * T_t(R(f)) + noise` of the particle `f`.
pub fn simulate_view<R: Rng + ?Sized>(
    f: &Volume,
    psf: &Volume,
    pose: &Pose,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Volume> {
    f.dims().require_same(&psf.dims())?;
    let rotated = grid::rotate(f, &pose.orientation, Interpolation::Trilinear)?;
    image_rotated(&rotated, &psf_spectrum(psf), &pose.translation, noise_sigma, rng)
}

/// Subtracts randomly placed isotropic Gaussian spots, clamping at zero.
pub fn apply_dol_defects<R: Rng + ?Sized>(f: &Volume, cfg: &SimConfig, rng: &mut R) -> Volume {
    let mut out = f.clone();
    let d = f.dims();
    let size = d.nx.max(d.ny).max(d.nz) as f64;
    let n = d.as_array();
    for _ in 0..cfg.dol_spots {
        let center: [f64; 3] = std::array::from_fn(|a| rng.random_range(0.0..n[a] as f64));
        let sigma = size * uniform(rng, cfg.spot_sigma_range);
        let peak = uniform(rng, cfg.spot_intensity_range);
        let inv = 0.5 / (sigma * sigma);
        let profile = |a: usize| -> Vec<f64> {
            (0..n[a]).map(|k| (-(k as f64 - center[a]).powi(2) * inv).exp()).collect()
        };
        let (px, py, pz) = (profile(0), profile(1), profile(2));
        let data = out.data_mut();
        let mut i = 0;
        for gz in &pz {
            for gy in &py {
                let s = peak * gz * gy;
                for gx in &px {
                    data[i] -= s * gx;
                    i += 1;
                }
            }
        }
    }
    out.map_inplace(|v| v.max(0.0));
    out
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Uniformly distributed axis, uniform in-axis angle, uniform shift in
/// `[-max_shift, max_shift]^3`.
pub fn random_pose<R: Rng + ?Sized>(rng: &mut R, max_shift: f64) -> Pose {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi1 = rng.random_range(0.0..TAU);
    let psi = rng.random_range(0.0..TAU);
    let t = std::array::from_fn(|_| if max_shift > 0.0 { rng.random_range(-max_shift..=max_shift) } else { 0.0 });
    Pose::new(Orientation::new(phi1, z.acos(), psi), Translation(t))
}

/// Generator for view `index`; independent of the order views are produced in.
pub fn view_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Simulates a full dataset from a ground-truth particle.
pub fn generate_dataset(f_gt: &Volume, cfg: &SimConfig) -> Result<ViewSet> {
    cfg.validate()?;
    let dims = f_gt.dims();
    let n = dims.require_cubic()?;
    let psf = gaussian_psf(&cfg.psf, dims)?;
    let psf_hat = psf_spectrum(&psf);
    let max_shift = cfg.max_shift_frac * n as f64;
    let mut views = Vec::with_capacity(cfg.n_views);
    let mut poses = Vec::with_capacity(cfg.n_views);
    for l in 0..cfg.n_views {
        let mut rng = view_rng(cfg.seed, l);
        let pose = match cfg.fixed_pose {
            Some(p) => p.into(),
            None => random_pose(&mut rng, max_shift),
        };
        let rotated = grid::rotate(f_gt, &pose.orientation, Interpolation::Trilinear)?;
        let damaged = apply_dol_defects(&rotated, cfg, &mut rng);
        views.push(image_rotated(&damaged, &psf_hat, &pose.translation, cfg.noise_sigma, &mut rng)?);
        poses.push(pose);
    }
    Ok(ViewSet { views, psf, true_poses: Some(poses) })
}

/// Undoes a view's pose: shifts by `-t` and rotates by `R^T`. The PSF blur stays.
pub fn align_view(view: &Volume, pose: &Pose) -> Result<Volume> {
    let unshifted = ifft(&apply_phase_shift(&fft(view), &pose.translation.neg()))?;
    unshifted.rotated(&pose.orientation.matrix().transpose(), Interpolation::Trilinear)
}

/// Seeded asymmetric phantom: a sum of anisotropic Gaussian blobs, scaled to `[0, 1]`.
pub fn blob_phantom(n: usize, seed: u64) -> Result<Volume> {
    let dims = Dims::cube(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = (n as f64 - 1.0) / 2.0;
    let s = n as f64 / 20.0;
    // Main body plus off-center lobes so that no rotation maps it onto itself.
    let mut blobs = vec![
        ([0.0, 0.0, 0.0], [4.0 * s, 2.6 * s, 2.0 * s], 1.0),
        ([4.5 * s, 1.5 * s, 0.5 * s], [1.6 * s, 1.6 * s, 1.6 * s], 0.9),
        ([-2.0 * s, 4.0 * s, 2.5 * s], [1.3 * s, 2.2 * s, 1.3 * s], 0.8),
        ([-s, -2.5 * s, -4.0 * s], [2.0 * s, 1.2 * s, 1.4 * s], 0.7),
    ];
    for _ in 0..4 {
        let off: [f64; 3] = std::array::from_fn(|_| rng.random_range(-5.0..5.0) * s);
        let sig: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.8..1.6) * s);
        blobs.push((off, sig, rng.random_range(0.4..0.8)));
    }
    let mut v = Volume::from_fn(dims, |x, y, z| {
        let p = [x as f64 - c, y as f64 - c, z as f64 - c];
        blobs
            .iter()
            .map(|(o, sg, a)| {
                let q: f64 = (0..3).map(|k| ((p[k] - o[k]) / sg[k]).powi(2)).sum();
                a * (-0.5 * q).exp()
            })
            .sum()
    });
    let (_, hi) = v.min_max();
    v.map_inplace(|x| x / hi);
    Ok(v)
}
