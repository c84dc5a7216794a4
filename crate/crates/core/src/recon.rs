//! Joint reconstruction of the particle and the view poses.
//!
//! The particle spectrum is refined by stochastic gradient descent, one
//! view per step. Before each step the view's orientation is searched on
//! an importance-sampled subset of the SO(3) grid ([`crate::pose`]) and its
//! translation is found by phase correlation ([`crate::shift`]).
//!
//! Internally all volumes live in a working frame where the grid point
//! `n / 2` sits at the array origin, so that spectral rotation (about the
//! zero frequency) matches spatial rotation about the particle center.
//! Poses in and out of this module use the simulator's convention:
//! rotation about `(n - 1) / 2`, then translation.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{argument, Error, Result};
use crate::forward::ViewSet;
use crate::grid::{
    self, apply_phase_shift, fft, ifft, Dims, Interpolation, SpectralVolume, Translation, Volume,
};
use crate::pose::{self, OrientationSearchResult, SamplerParams, SamplerState};
use crate::shift::{TranslationMethod, TranslationSolver};
use crate::so3::{Pose, So3Grid};

/// Added to `max |h_hat|^2` in the default step size.
pub const STEP_EPS: f64 = 1e-6;
/// Relative change of the mean epoch energy below which early stopping triggers.
pub const EARLY_STOP_TOL: f64 = 1e-4;

/// Starting point of the particle estimate.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Init {
    /// Spectrum coefficients real, i.i.d. uniform on `[0, 1]`, mirrored so
    /// that the volume is real.
    #[default]
    RandomUniform,
    /// Voxels i.i.d. uniform on `[0, 1]`.
    RandomUniformSpatial,
    Provided(Volume),
}

impl std::str::FromStr for Init {
    type Err = Error;

    /// Parses the random variants; a provided volume has no textual form.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "random-uniform" => Ok(Init::RandomUniform),
            "spatial" | "random-uniform-spatial" => Ok(Init::RandomUniformSpatial),
            other => Err(argument(format!("unknown initialization `{other}`"))),
        }
    }
}

impl Init {
    /// Initial spectrum in the working frame.
    fn spectrum<R: Rng + ?Sized>(&self, dims: Dims, rng: &mut R) -> Result<SpectralVolume> {
        match self {
            Init::RandomUniform => {
                let mut s = SpectralVolume::zeros(dims);
                for i in 0..dims.len() {
                    let m = s.mirror_index(i);
                    let v = if m < i { s.data()[m] } else { Complex64::new(rng.random::<f64>(), 0.0) };
                    s.data_mut()[i] = v;
                }
                Ok(s)
            }
            Init::RandomUniformSpatial => {
                Ok(fft(&Volume::from_fn(dims, |_, _, _| rng.random::<f64>()).center_to_origin()))
            }
            Init::Provided(v) => {
                v.dims().require_same(&dims)?;
                Ok(fft(&v.center_to_origin()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    /// SGD step size; `None` picks [`default_step`].
    pub mu: Option<f64>,
    pub epochs: usize,
    pub m_d: usize,
    pub m_psi: usize,
    pub sampler: SamplerParams,
    pub seed: u64,
    pub init: Init,
    pub interpolation: Interpolation,
    pub translation: TranslationMethod,
    pub early_stop: bool,
    /// Skip the pose search and use these poses for every view.
    pub known_poses: Option<Vec<Pose>>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            mu: None,
            epochs: 20,
            m_d: 2048,
            m_psi: 256,
            sampler: SamplerParams::default(),
            seed: 0,
            init: Init::RandomUniform,
            interpolation: Interpolation::Trilinear,
            translation: TranslationMethod::CrossCorrelation,
            early_stop: false,
            known_poses: None,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(mu) = self.mu {
            if !(mu.is_finite() && mu >= 0.0) {
                return Err(argument(format!("mu must be finite and non-negative, got {mu}")));
            }
        }
        // Checks the sample counts against the grid sizes.
        SamplerState::new(0, self.m_d, self.m_psi, self.sampler)?;
        Ok(())
    }
}

/// Offset between the simulator's rotation center and the working-frame origin.
fn frame_offset(n: usize) -> Vector3<f64> {
    Vector3::repeat((n / 2) as f64 - (n as f64 - 1.0) / 2.0)
}

/// Translation in the working frame of a pose given in the centered convention.
pub fn to_working_translation(pose: &Pose, n: usize) -> Translation {
    let r = pose.orientation.matrix();
    shift_translation(&pose.translation, &r, n, 1.0)
}

/// Inverse of [`to_working_translation`].
pub fn from_working_translation(pose: &Pose, n: usize) -> Translation {
    let r = pose.orientation.matrix();
    shift_translation(&pose.translation, &r, n, -1.0)
}

fn shift_translation(t: &Translation, r: &Matrix3<f64>, n: usize, sign: f64) -> Translation {
    let d = (r - Matrix3::identity()) * frame_offset(n) * sign;
    Translation([t.0[0] + d.x, t.0[1] + d.y, t.0[2] + d.z])
}

/// Gradient of `|y_hat - h_hat rho_t R(f_hat)|^2` with respect to `f_hat`,
/// real and imaginary parts taken as independent coordinates and packed
/// as `dE/dRe + i dE/dIm`.
///
/// The energy here is not divided by the voxel count, so at the identity
/// pose with `h_hat = 1` the gradient is `2 (f_hat - y_hat)`.
pub fn gradient_term(
    f_hat: &SpectralVolume,
    psf_hat: &SpectralVolume,
    y_hat: &SpectralVolume,
    pose: &Pose,
    interp: Interpolation,
) -> Result<SpectralVolume> {
    f_hat.dims().require_same(&y_hat.dims())?;
    let model = grid::forward_spectrum(psf_hat, f_hat, pose, interp)?;
    // conj(h_hat rho_t) (model - y), pulled back through the rotation.
    let ramp = apply_phase_shift(psf_hat, &pose.translation);
    let back: Vec<Complex64> = model
        .data()
        .iter()
        .zip(y_hat.data())
        .zip(ramp.data())
        .map(|((m, y), h)| 2.0 * h.conj() * (m - y))
        .collect();
    let back = SpectralVolume::from_vec(f_hat.dims(), back)?;
    grid::rotate_spectrum_adjoint(&back, &pose.orientation.matrix(), interp)
}

/// In-place `f_hat -= mu * gradient`.
fn descend(f_hat: &mut SpectralVolume, gradient: &SpectralVolume, mu: f64) {
    for (f, g) in f_hat.data_mut().iter_mut().zip(gradient.data()) {
        *f -= mu * g;
    }
}

/// Default step size: `0.5 / (n_views max |h_hat|^2 + STEP_EPS)`.
///
/// A single view's energy has curvature `2 |h_hat|^2`, so one view alone
/// would be solved in one step at the PSF peak. Dividing by the number of
/// views makes the iterate average the views instead of tracking the most
/// recent one.
pub fn default_step(psf_hat: &SpectralVolume, n_views: usize) -> f64 {
    let peak = psf_hat.data().iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
    0.5 / (n_views.max(1) as f64 * peak + STEP_EPS)
}

/// Mutable state of a reconstruction run. Everything is in the working frame.
#[derive(Debug, Clone)]
pub struct ReconState {
    pub f_hat: SpectralVolume,
    pub sampler: SamplerState,
    pub epoch: usize,
    /// Mean winning-pose energy of each completed epoch.
    pub energy_trace: Vec<f64>,
    /// Latest pose of every view (working-frame translation).
    pub poses: Vec<Pose>,
    pub mu: f64,
}

/// What one SGD step did.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub pose: Pose,
    pub energy: f64,
    /// `None` when the pose was injected rather than searched.
    pub search: Option<OrientationSearchResult>,
}

/// Views and PSF moved to the working frame and transformed once.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dims: Dims,
    pub views_hat: Vec<SpectralVolume>,
    pub psf_hat: SpectralVolume,
}

impl Prepared {
    pub fn new(views: &ViewSet) -> Result<Self> {
        if views.views.is_empty() {
            return Err(argument("no views to reconstruct from"));
        }
        views.validate()?;
        let dims = views.dims();
        dims.require_cubic()?;
        Ok(Self {
            dims,
            views_hat: views.views.iter().map(|v| fft(&v.center_to_origin())).collect(),
            psf_hat: fft(&views.psf.center_to_origin()),
        })
    }
}

/// One SGD iteration on view `l`: pose search (unless `known` is given),
/// sampler update, then a gradient step at the winning pose.
pub fn sgd_step<R: Rng + ?Sized>(
    state: &mut ReconState,
    l: usize,
    y_hat: &SpectralVolume,
    psf_hat: &SpectralVolume,
    grid: &So3Grid,
    interp: Interpolation,
    solver: &dyn TranslationSolver,
    known: Option<&Pose>,
    rng: &mut R,
) -> Result<StepOutcome> {
    let (pose, energy, search) = match known {
        Some(p) => {
            let e = grid::energy_term(y_hat, psf_hat, &state.f_hat, p, interp)?;
            (*p, e, None)
        }
        None => {
            let (i_psi, i_d) = pose::draw_candidate_sets(&state.sampler, l, rng)?;
            let result =
                pose::search_orientation(&state.f_hat, psf_hat, y_hat, grid, &i_psi, &i_d, solver, interp)?;
            pose::update_distributions(&mut state.sampler, l, &result, &i_psi, &i_d, grid)?;
            (result.best_pose, result.best_energy(), Some(result))
        }
    };
    if state.mu != 0.0 {
        let g = gradient_term(&state.f_hat, psf_hat, y_hat, &pose, interp)?;
        descend(&mut state.f_hat, &g, state.mu);
    }
    state.poses[l] = pose;
    Ok(StepOutcome { pose, energy, search })
}

/// Summary handed to the observer after each epoch.
pub struct EpochReport<'a> {
    /// 1-based index of the epoch just completed.
    pub epoch: usize,
    pub mean_energy: f64,
    /// Mixing weight used during this epoch, before annealing.
    pub alpha: f64,
    pub state: &'a ReconState,
    pub dims: Dims,
}

impl EpochReport<'_> {
    /// Current particle estimate in the centered frame.
    pub fn volume(&self) -> Result<Volume> {
        to_volume(&self.state.f_hat)
    }

    /// Current poses in the centered convention.
    pub fn poses(&self) -> Vec<Pose> {
        centered_poses(&self.state.poses, self.dims.nx)
    }
}

fn to_volume(f_hat: &SpectralVolume) -> Result<Volume> {
    let mut s = f_hat.clone();
    s.symmetrize();
    Ok(ifft(&s)?.origin_to_center())
}

fn centered_poses(poses: &[Pose], n: usize) -> Vec<Pose> {
    poses.iter().map(|p| Pose::new(p.orientation, from_working_translation(p, n))).collect()
}

/// Result of [`reconstruct`].
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub volume: Volume,
    /// Final pose of every view, centered convention.
    pub poses: Vec<Pose>,
    /// Mean winning-pose energy per epoch.
    pub energy_trace: Vec<f64>,
    pub sampler: SamplerState,
    /// Number of epochs actually run.
    pub epochs: usize,
    pub mu: f64,
}

/// Runs the full reconstruction.
pub fn reconstruct(views: &ViewSet, cfg: &ReconConfig) -> Result<Reconstruction> {
    reconstruct_with(views, cfg, |_| Ok(()))
}

/// [`reconstruct`] with a callback after every epoch; an error from the
/// callback aborts the run.
pub fn reconstruct_with(
    views: &ViewSet,
    cfg: &ReconConfig,
    mut observer: impl FnMut(&EpochReport) -> Result<()>,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let prep = Prepared::new(views)?;
    let n_views = prep.views_hat.len();
    let n = prep.dims.nx;
    let known: Option<Vec<Pose>> = match &cfg.known_poses {
        Some(p) if p.len() != n_views => {
            return Err(argument(format!("{} known poses for {n_views} views", p.len())));
        }
        Some(p) => Some(p.iter().map(|q| Pose::new(q.orientation, to_working_translation(q, n))).collect()),
        None => None,
    };
    let grid = So3Grid::new(cfg.m_d, cfg.m_psi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let f_hat = cfg.init.spectrum(prep.dims, &mut rng)?;
    let mu = cfg.mu.unwrap_or_else(|| default_step(&prep.psf_hat, n_views));
    let solver = cfg.translation.solver();
    let mut state = ReconState {
        f_hat,
        sampler: SamplerState::new(n_views, cfg.m_d, cfg.m_psi, cfg.sampler)?,
        epoch: 0,
        energy_trace: Vec::with_capacity(cfg.epochs),
        poses: vec![Pose::identity(); n_views],
        mu,
    };
    let mut order: Vec<usize> = (0..n_views).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let alpha = state.sampler.alpha();
        let mut total = 0.0;
        for &l in &order {
            let out = sgd_step(
                &mut state,
                l,
                &prep.views_hat[l],
                &prep.psf_hat,
                &grid,
                cfg.interpolation,
                solver,
                known.as_ref().map(|k| &k[l]),
                &mut rng,
            )?;
            total += out.energy;
        }
        state.f_hat.symmetrize();
        pose::anneal(&mut state.sampler);
        state.epoch += 1;
        let mean = total / n_views as f64;
        if !mean.is_finite() {
            return Err(Error::Degenerate(format!("epoch {} energy is not finite", state.epoch)));
        }
        state.energy_trace.push(mean);
        observer(&EpochReport { epoch: state.epoch, mean_energy: mean, alpha, state: &state, dims: prep.dims })?;
        if cfg.early_stop && state.energy_trace.len() >= 2 {
            let prev = state.energy_trace[state.energy_trace.len() - 2];
            let change = if prev == 0.0 { (prev - mean).abs() } else { ((prev - mean) / prev).abs() };
            if change < EARLY_STOP_TOL {
                break;
            }
        }
    }
    Ok(Reconstruction {
        volume: to_volume(&state.f_hat)?,
        poses: centered_poses(&state.poses, n),
        energy_trace: state.energy_trace,
        sampler: state.sampler,
        epochs: state.epoch,
        mu,
    })
}
