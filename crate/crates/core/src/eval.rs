//! Reconstruction quality metrics.
//!
//! * [`fsc`]: Fourier shell correlation and its resolution cutoff;
//! * [`conical_fsc`]: the same restricted to cones around many directions;
//! * [`ssim3d`]: structural similarity on 3D grids;
//! * [`register_to_ground_truth`]: rigid alignment by mutual information,
//!   needed because a reconstruction is only defined up to a global pose.
//!
//! Resolutions are shell radii in cycles per voxel, so `0.5` is Nyquist.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{argument, Error, Result};
use crate::grid::{apply_phase_shift, fft, ifft, signed_index, Dims, Interpolation, Rotate, Translation, Volume};
use crate::shift::phase_correlate;
use crate::so3::{exp_map, fibonacci_axes, Orientation, Pose};

/// Conventional FSC threshold.
pub const DEFAULT_CUTOFF: f64 = 0.143;
/// Default cone half-angle of the conical FSC, in degrees.
pub const DEFAULT_CONE_HALF_ANGLE_DEG: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FscCurve {
    /// Shell radii in cycles per voxel, strictly increasing.
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub cutoff: f64,
    /// Radius where the curve first drops below `cutoff`, or the last
    /// radius if it never does.
    pub cutoff_resolution: f64,
}

/// Signed frequency coordinates of every voxel, in index units.
fn frequency_coords(d: Dims) -> impl Iterator<Item = [f64; 3]> {
    (0..d.len()).map(move |i| {
        let [x, y, z] = d.coords(i);
        [signed_index(x, d.nx) as f64, signed_index(y, d.ny) as f64, signed_index(z, d.nz) as f64]
    })
}

/// Shell correlation of two spectra over the voxels accepted by `keep`.
/// Returns `(radius index, value)` for the populated shells.
fn shell_correlation(a: &Volume, b: &Volume, keep: impl Fn(&[f64; 3]) -> bool) -> Result<Vec<(usize, f64)>> {
    let d = a.dims();
    let n = d.require_cubic()?;
    d.require_same(&b.dims())?;
    let (fa, fb) = (fft(a), fft(b));
    let shells = n / 2 + 1;
    let mut cross = vec![0.0; shells];
    let mut pa = vec![0.0; shells];
    let mut pb = vec![0.0; shells];
    let mut count = vec![0usize; shells];
    for (i, k) in frequency_coords(d).enumerate() {
        let r = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt().round() as usize;
        if r >= shells || !keep(&k) {
            continue;
        }
        let (u, v) = (fa.data()[i], fb.data()[i]);
        cross[r] += (u * v.conj()).re;
        pa[r] += u.norm_sqr();
        pb[r] += v.norm_sqr();
        count[r] += 1;
    }
    Ok((0..shells)
        .filter(|&r| count[r] > 0)
        .map(|r| {
            let den = (pa[r] * pb[r]).sqrt();
            (r, if den > 0.0 { cross[r] / den } else { 0.0 })
        })
        .collect())
}

fn curve_from_shells(shells: &[(usize, f64)], n: usize, cutoff: f64) -> FscCurve {
    let radii: Vec<f64> = shells.iter().map(|&(r, _)| r as f64 / n as f64).collect();
    let values: Vec<f64> = shells.iter().map(|&(_, v)| v).collect();
    let cutoff_resolution = crossing(&radii, &values, cutoff);
    FscCurve { radii, values, cutoff, cutoff_resolution }
}

/// First down-crossing of `cutoff`, linearly interpolated.
fn crossing(radii: &[f64], values: &[f64], cutoff: f64) -> f64 {
    if values.first().is_some_and(|&v| v < cutoff) {
        return radii[0];
    }
    for i in 1..values.len() {
        if values[i] < cutoff {
            let (r0, r1, v0, v1) = (radii[i - 1], radii[i], values[i - 1], values[i]);
            return r0 + (r1 - r0) * (v0 - cutoff) / (v0 - v1);
        }
    }
    radii.last().copied().unwrap_or(0.0)
}

/// Fourier shell correlation on integer-radius shells up to Nyquist.
pub fn fsc(a: &Volume, b: &Volume, cutoff: f64) -> Result<FscCurve> {
    let shells = shell_correlation(a, b, |_| true)?;
    Ok(curve_from_shells(&shells, a.dims().nx, cutoff))
}

/// FSC restricted to the double cone of half-angle `half_angle` (radians)
/// around `direction`. `None` when fewer than half of the shells up to
/// Nyquist contain any voxel of the cone.
pub fn directional_fsc(
    a: &Volume,
    b: &Volume,
    direction: &Vector3<f64>,
    half_angle: f64,
    cutoff: f64,
) -> Result<Option<FscCurve>> {
    if !(half_angle > 0.0 && half_angle <= PI / 2.0) {
        return Err(argument(format!("cone half-angle must lie in (0, pi/2], got {half_angle}")));
    }
    let dir = direction.normalize();
    let cos_a = half_angle.cos();
    let shells = shell_correlation(a, b, |k| {
        let norm = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
        norm == 0.0 || (k[0] * dir.x + k[1] * dir.y + k[2] * dir.z).abs() >= norm * cos_a
    })?;
    let n = a.dims().nx;
    // Shell 0 is always present; count the others.
    let populated = shells.iter().filter(|&&(r, _)| r > 0).count();
    if 2 * populated < n / 2 {
        return Ok(None);
    }
    Ok(Some(curve_from_shells(&shells, n, cutoff)))
}

/// Per-direction cutoff resolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct CfscMap {
    /// `(phi1, phi2)` of each direction.
    pub directions: Vec<(f64, f64)>,
    /// `None` marks a direction whose cone is too narrow for the grid.
    pub resolutions: Vec<Option<f64>>,
    pub half_angle: f64,
    pub cutoff: f64,
}

impl CfscMap {
    /// Mean over the defined directions.
    pub fn mean_resolution(&self) -> Option<f64> {
        let v: Vec<f64> = self.resolutions.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Conical FSC over `n_directions` Fibonacci directions on the sphere.
pub fn conical_fsc(a: &Volume, b: &Volume, n_directions: usize, half_angle: f64, cutoff: f64) -> Result<CfscMap> {
    let axes = fibonacci_axes(n_directions)?;
    let resolutions = axes
        .par_iter()
        .map(|d| Ok(directional_fsc(a, b, d, half_angle, cutoff)?.map(|c| c.cutoff_resolution)))
        .collect::<Result<Vec<_>>>()?;
    let directions = axes.iter().map(|d| (d.y.atan2(d.x).rem_euclid(2.0 * PI), d.z.clamp(-1.0, 1.0).acos())).collect();
    Ok(CfscMap { directions, resolutions, half_angle, cutoff })
}

/// Writes `radius,value` rows.
pub fn write_fsc_csv(curve: &FscCurve, mut out: impl Write) -> Result<()> {
    writeln!(out, "radius,value")?;
    for (r, v) in curve.radii.iter().zip(&curve.values) {
        writeln!(out, "{r},{v}")?;
    }
    Ok(())
}

/// Writes `phi1,phi2,resolution` rows; undefined directions get `nan`.
pub fn write_cfsc_csv(map: &CfscMap, mut out: impl Write) -> Result<()> {
    writeln!(out, "phi1,phi2,resolution")?;
    for ((p1, p2), r) in map.directions.iter().zip(&map.resolutions) {
        match r {
            Some(r) => writeln!(out, "{p1},{p2},{r}")?,
            None => writeln!(out, "{p1},{p2},nan")?,
        }
    }
    Ok(())
}

const SSIM_SIGMA: f64 = 1.5;
const SSIM_RADIUS: usize = 5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn rescaled(v: &Volume) -> Vec<f64> {
    let (lo, hi) = v.min_max();
    let span = hi - lo;
    v.data().iter().map(|x| if span > 0.0 { (x - lo) / span } else { 0.0 }).collect()
}

/// Gaussian filter keeping only fully supported outputs: each axis
/// shrinks by `2 * SSIM_RADIUS`.
fn filter_valid(data: &[f64], dims: [usize; 3], kernel: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let w = kernel.len();
    let mut cur = data.to_vec();
    let mut d = dims;
    for axis in 0..3 {
        let mut nd = d;
        nd[axis] = d[axis] + 1 - w;
        let stride = [1, d[0], d[0] * d[1]][axis];
        let mut out = vec![0.0; nd[0] * nd[1] * nd[2]];
        let mut o = 0;
        for z in 0..nd[2] {
            for y in 0..nd[1] {
                for x in 0..nd[0] {
                    let base = x + d[0] * (y + d[1] * z);
                    out[o] = kernel.iter().enumerate().map(|(k, g)| g * cur[base + k * stride]).sum();
                    o += 1;
                }
            }
        }
        cur = out;
        d = nd;
    }
    (cur, d)
}

/// Mean structural similarity of two volumes, each min-max rescaled to
/// `[0, 1]` first.
///
/// Local statistics use an 11-voxel Gaussian window of standard deviation
/// 1.5; the mean is taken over voxels where the window fits entirely.
pub fn ssim3d(a: &Volume, b: &Volume) -> Result<f64> {
    let d = a.dims();
    d.require_same(&b.dims())?;
    let w = 2 * SSIM_RADIUS + 1;
    if d.nx < w || d.ny < w || d.nz < w {
        return Err(argument(format!("SSIM needs at least {w} voxels per axis, got {:?}", d.as_array())));
    }
    let (x, y) = (rescaled(a), rescaled(b));
    if x.iter().all(|&v| v == 0.0) && y.iter().all(|&v| v == 0.0) {
        return Ok(1.0);
    }
    let mut kernel: Vec<f64> =
        (0..w).map(|k| (-((k as f64 - SSIM_RADIUS as f64).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|g| *g /= s);
    let dims = d.as_array();
    let product = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { x.iter().zip(&y).map(|(&p, &q)| f(p, q)).collect() };
    let (ux, _) = filter_valid(&x, dims, &kernel);
    let (uy, _) = filter_valid(&y, dims, &kernel);
    let (uxx, _) = filter_valid(&product(&|p, _| p * p), dims, &kernel);
    let (uyy, _) = filter_valid(&product(&|_, q| q * q), dims, &kernel);
    let (uxy, _) = filter_valid(&product(&|p, q| p * q), dims, &kernel);
    let total: f64 = (0..ux.len())
        .map(|i| {
            let (mx, my) = (ux[i], uy[i]);
            let (vx, vy, vxy) = (uxx[i] - mx * mx, uyy[i] - my * my, uxy[i] - mx * my);
            ((2.0 * mx * my + SSIM_C1) * (2.0 * vxy + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / ux.len() as f64)
}

/// Settings of the mutual-information registration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationParams {
    /// Rotation axes of the exhaustive search (Fibonacci sphere).
    pub axis_count: usize,
    /// Spacing of the rotation angles in `(0, pi]`, radians.
    pub angle_step: f64,
    pub bins: usize,
    pub refine: bool,
    /// Stop refining once a sweep gains less than this, in bits.
    pub refine_tol: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self { axis_count: 412, angle_step: 10f64.to_radians(), bins: 64, refine: true, refine_tol: 1e-4 }
    }
}

impl RegistrationParams {
    /// Candidate rotations: identity, then every axis with every angle
    /// step up to `pi`. Angles stop at `pi` because `(d, psi)` and
    /// `(-d, 2 pi - psi)` are the same rotation.
    pub fn candidates(&self) -> Result<Vec<Orientation>> {
        if !(self.angle_step > 0.0 && self.angle_step <= PI) {
            return Err(argument(format!("angle step must lie in (0, pi], got {}", self.angle_step)));
        }
        let axes = fibonacci_axes(self.axis_count)?;
        let steps = (PI / self.angle_step + 1e-9).floor() as usize;
        let mut out = vec![Orientation::identity()];
        for a in &axes {
            for k in 1..=steps {
                out.push(Orientation::from_axis_angle(a, k as f64 * self.angle_step));
            }
        }
        Ok(out)
    }
}

/// Histogram bin of every voxel by rank: bin `b` holds the voxels whose
/// rank lies in `[b N / bins, (b + 1) N / bins)`. Equal values share the
/// bin of their lowest rank.
pub fn rank_bins(v: &[f64], bins: usize) -> Vec<usize> {
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0; n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end < n && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let bin = start * bins / n;
        for &i in &order[start..end] {
            out[i] = bin;
        }
        start = end;
    }
    out
}

/// Mutual information in bits of two equal-length binnings.
pub fn mutual_information(a: &[usize], b: &[usize], bins: usize) -> f64 {
    let mut joint = vec![0.0; bins * bins];
    let mut pa = vec![0.0; bins];
    let mut pb = vec![0.0; bins];
    for (&i, &j) in a.iter().zip(b) {
        joint[i * bins + j] += 1.0;
        pa[i] += 1.0;
        pb[j] += 1.0;
    }
    let n = a.len() as f64;
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let p = joint[i * bins + j];
            if p > 0.0 {
                mi += p / n * (p * n / (pa[i] * pb[j])).log2();
            }
        }
    }
    mi
}

fn is_constant(v: &Volume) -> bool {
    let (lo, hi) = v.min_max();
    lo == hi
}

/// Rotates `v` about the grid center, then shifts it by `t`.
pub fn transform(v: &Volume, pose: &Pose) -> Result<Volume> {
    let rotated = v.rotated(&pose.orientation.matrix(), Interpolation::Trilinear)?;
    if pose.translation.0 == [0.0; 3] {
        return Ok(rotated);
    }
    ifft(&apply_phase_shift(&fft(&rotated), &pose.translation))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    /// Pose taking the reconstruction onto the ground truth.
    pub pose: Pose,
    /// The reconstruction transformed by `pose`.
    pub aligned: Volume,
    pub mutual_information: f64,
}

/// Rigidly aligns `recon` to `gt` by maximizing mutual information.
///
/// Exhaustive search over [`RegistrationParams::candidates`] with the
/// translation of each candidate from phase correlation, then coordinate
/// descent on a rotation-vector perturbation and a continuous translation.
pub fn register_to_ground_truth(recon: &Volume, gt: &Volume, params: &RegistrationParams) -> Result<Registration> {
    recon.dims().require_same(&gt.dims())?;
    recon.dims().require_cubic()?;
    if is_constant(recon) || is_constant(gt) {
        return Err(Error::Degenerate("cannot register a constant volume".into()));
    }
    if params.bins < 2 {
        return Err(argument("need at least two histogram bins"));
    }
    let bins = params.bins;
    let gt_bins = rank_bins(gt.data(), bins);
    let gt_hat = fft(gt);
    let score = |v: &Volume| mutual_information(&rank_bins(v.data(), bins), &gt_bins, bins);

    let candidates = params.candidates()?;
    let scored = candidates
        .par_iter()
        .enumerate()
        .map(|(k, o)| {
            let rotated = recon.rotated(&o.matrix(), Interpolation::Trilinear)?;
            let shift = match phase_correlate(&gt_hat, &fft(&rotated)) {
                Ok(p) => p.shift,
                Err(Error::Degenerate(_)) => [0; 3],
                Err(e) => return Err(e),
            };
            Ok((k, shift, score(&rotated.circular_shift(shift))))
        })
        .collect::<Result<Vec<_>>>()?;
    let &(best_k, best_shift, best_mi) = scored
        .iter()
        .max_by(|a, b| a.2.total_cmp(&b.2).then(b.0.cmp(&a.0)))
        .expect("candidate list is never empty");
    let mut rot = candidates[best_k].matrix();
    let mut t = Translation::from_integer(best_shift);
    let mut mi = best_mi;

    if params.refine {
        let eval = |r: &Matrix3<f64>, t: &Translation| -> Result<f64> {
            let o = Orientation::from_matrix(r);
            Ok(score(&transform(recon, &Pose::new(o, *t))?))
        };
        let mut rot_step = 5f64.to_radians();
        let mut t_step = 1.0;
        let min_rot_step = 0.05f64.to_radians();
        loop {
            let before = mi;
            for coord in 0..6 {
                for sign in [1.0, -1.0] {
                    let (r2, t2) = if coord < 3 {
                        let mut w = Vector3::zeros();
                        w[coord] = sign * rot_step;
                        (exp_map(&w) * rot, t)
                    } else {
                        let mut t2 = t;
                        t2.0[coord - 3] += sign * t_step;
                        (rot, t2)
                    };
                    let m = eval(&r2, &t2)?;
                    if m > mi {
                        (rot, t, mi) = (r2, t2, m);
                        break;
                    }
                }
            }
            let gain = mi - before;
            if gain == 0.0 {
                rot_step /= 2.0;
                t_step /= 2.0;
                if rot_step < min_rot_step {
                    break;
                }
            } else if gain < params.refine_tol {
                break;
            }
        }
    }
    let pose = Pose::new(Orientation::from_matrix(&rot), t);
    let aligned = transform(recon, &pose)?;
    Ok(Registration { pose, aligned, mutual_information: mi })
}
