//! Orientation search on importance-sampled subsets of the SO(3) grid.
//!
//! Each view keeps two sampling distributions, one over grid axes and one
//! over in-axis angles. At every visit a handful of indices is drawn from
//! each, the energy is evaluated on their product set, and the resulting
//! likelihoods are pushed back into the distributions:
//!
//! 1. likelihoods `p_ij = exp(-(E_ij - min E))`;
//! 2. importance-sampled marginals, `pi_psi[i] = sum_j p_ij / Q_d[j]` and
//!    `pi_d[j] = sum_i p_ij / Q_psi[i]`;
//! 3. kernel smoothing of the marginals onto the full grids;
//! 4. mixing with the uniform distribution, `Q = alpha U + (1 - alpha) smoothed`.
//!
//! `alpha` starts at 1 and is divided by `alpha_r` between epochs.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{argument, Result};
use crate::grid::{Interpolation, Rotate, SpectralVolume, Translation};
use crate::shift::TranslationSolver;
use crate::so3::{log_kernel_d, log_kernel_psi, Pose, So3Grid};

/// Hyperparameters of the orientation sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerParams {
    pub n_d: usize,
    pub n_psi: usize,
    pub alpha_r: f64,
    pub beta_d: f64,
    pub beta_psi: f64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self { n_d: 64, n_psi: 8, alpha_r: 1.2, beta_d: 50.0, beta_psi: 50.0 }
    }
}

/// Per-view sampling distributions plus the shared mixing weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerState {
    q_d: Vec<Vec<f64>>,
    q_psi: Vec<Vec<f64>>,
    alpha: f64,
    params: SamplerParams,
    /// Updates whose smoothed likelihood underflowed and fell back to uniform.
    pub degenerate_updates: u64,
}

impl SamplerState {
    /// Uniform distributions for `n_views` views, `alpha = 1`.
    pub fn new(n_views: usize, m_d: usize, m_psi: usize, params: SamplerParams) -> Result<Self> {
        if params.n_d == 0 || params.n_d > m_d {
            return Err(argument(format!("N_d = {} must lie in 1..={m_d}", params.n_d)));
        }
        if params.n_psi == 0 || params.n_psi > m_psi {
            return Err(argument(format!("N_psi = {} must lie in 1..={m_psi}", params.n_psi)));
        }
        if !(params.alpha_r > 1.0 && params.alpha_r.is_finite()) {
            return Err(argument(format!("alpha_r must be greater than 1, got {}", params.alpha_r)));
        }
        for b in [params.beta_d, params.beta_psi] {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(argument(format!("kernel concentrations must be non-negative, got {b}")));
            }
        }
        Ok(Self {
            q_d: vec![vec![1.0 / m_d as f64; m_d]; n_views],
            q_psi: vec![vec![1.0 / m_psi as f64; m_psi]; n_views],
            alpha: 1.0,
            params,
            degenerate_updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(argument(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        self.alpha = alpha;
        Ok(())
    }

    pub fn params(&self) -> &SamplerParams {
        &self.params
    }

    pub fn n_views(&self) -> usize {
        self.q_d.len()
    }

    pub fn q_d(&self, view: usize) -> &[f64] {
        &self.q_d[view]
    }

    pub fn q_psi(&self, view: usize) -> &[f64] {
        &self.q_psi[view]
    }

    /// Overrides one view's distributions; both must be probability vectors
    /// of the grid's sizes.
    pub fn set_distributions(&mut self, view: usize, q_psi: Vec<f64>, q_d: Vec<f64>) -> Result<()> {
        for (q, m) in [(&q_psi, self.q_psi[view].len()), (&q_d, self.q_d[view].len())] {
            if q.len() != m || q.iter().any(|p| p.is_nan() || *p < 0.0) {
                return Err(argument("distribution has the wrong length or negative mass"));
            }
            let s: f64 = q.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(argument(format!("distribution sums to {s}")));
            }
        }
        self.q_psi[view] = q_psi;
        self.q_d[view] = q_d;
        Ok(())
    }

    /// Index of the most probable axis of a view.
    pub fn mode_d(&self, view: usize) -> usize {
        argmax(&self.q_d[view])
    }

    pub fn mode_psi(&self, view: usize) -> usize {
        argmax(&self.q_psi[view])
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Draws `count` distinct indices from `q`, redrawing collisions. Stops
/// early once every index with positive mass has been drawn.
fn draw_distinct<R: Rng + ?Sized>(q: &[f64], count: usize, rng: &mut R) -> Result<Vec<usize>> {
    if count > q.len() {
        return Err(argument(format!("cannot draw {count} distinct indices from {}", q.len())));
    }
    let support = q.iter().filter(|&&p| p > 0.0).count();
    let target = count.min(support);
    let dist = WeightedIndex::new(q).map_err(|e| argument(format!("invalid sampling distribution: {e}")))?;
    let mut picked = BTreeSet::new();
    // A strongly peaked distribution makes the last few draws slow; after
    // this many attempts the remaining slots go to the most probable
    // indices not yet drawn.
    let max_draws = 1000 * target.max(1);
    let mut draws = 0;
    while picked.len() < target && draws < max_draws {
        picked.insert(dist.sample(rng));
        draws += 1;
    }
    if picked.len() < target {
        let mut order: Vec<usize> = (0..q.len()).filter(|i| !picked.contains(i) && q[*i] > 0.0).collect();
        order.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
        picked.extend(order.into_iter().take(target - picked.len()));
    }
    Ok(picked.into_iter().collect())
}

/// Candidate index sets `(I_psi, I_d)` for one view, sorted ascending.
pub fn draw_candidate_sets<R: Rng + ?Sized>(
    state: &SamplerState,
    view: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let i_psi = draw_distinct(&state.q_psi[view], state.params.n_psi, rng)?;
    let i_d = draw_distinct(&state.q_d[view], state.params.n_d, rng)?;
    Ok((i_psi, i_d))
}

/// One evaluated grid orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub i: usize,
    pub j: usize,
    pub energy: f64,
    pub translation: Translation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationSearchResult {
    /// Winning `(i, j)`: in-axis angle index and axis index.
    pub best: (usize, usize),
    pub best_pose: Pose,
    /// Every evaluated candidate, in `I_psi`-major order.
    pub candidates: Vec<Candidate>,
    /// `exp(-(E - min E))` for each entry of `candidates`.
    pub likelihoods: Vec<f64>,
}

impl OrientationSearchResult {
    pub fn best_energy(&self) -> f64 {
        self.candidates.iter().find(|c| (c.i, c.j) == self.best).map(|c| c.energy).unwrap_or(f64::INFINITY)
    }

    pub fn energy(&self, i: usize, j: usize) -> Option<f64> {
        self.candidates.iter().find(|c| c.i == i && c.j == j).map(|c| c.energy)
    }
}

/// Energy of one candidate orientation: the model is `psf_hat R(f_hat)`,
/// shifted by whatever translation `solver` picks against `y_hat`.
pub fn evaluate_candidate(
    f_hat: &SpectralVolume,
    psf_hat: &SpectralVolume,
    y_hat: &SpectralVolume,
    pose_orientation: &crate::so3::Orientation,
    solver: &dyn TranslationSolver,
    interp: Interpolation,
) -> Result<(f64, Translation)> {
    let rotated = f_hat.rotated(&pose_orientation.matrix(), interp)?;
    let model = psf_hat.hadamard(&rotated);
    let (t, residual) = solver.solve_with_residual(y_hat, &model)?;
    Ok((residual / y_hat.dims().len() as f64, t))
}

/// Exhaustive search over `I_psi x I_d`.
///
/// Ties in energy go to the lexicographically smallest `(j, i)`.
pub fn search_orientation(
    f_hat: &SpectralVolume,
    psf_hat: &SpectralVolume,
    y_hat: &SpectralVolume,
    grid: &So3Grid,
    i_psi: &[usize],
    i_d: &[usize],
    solver: &dyn TranslationSolver,
    interp: Interpolation,
) -> Result<OrientationSearchResult> {
    if i_psi.is_empty() || i_d.is_empty() {
        return Err(argument("candidate sets must be non-empty"));
    }
    f_hat.dims().require_same(&psf_hat.dims())?;
    f_hat.dims().require_same(&y_hat.dims())?;
    f_hat.dims().require_cubic()?;
    let pairs: Vec<(usize, usize)> = i_psi.iter().flat_map(|&i| i_d.iter().map(move |&j| (i, j))).collect();
    let candidates = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (energy, translation) = evaluate_candidate(f_hat, psf_hat, y_hat, &grid.orientation(i, j), solver, interp)?;
            Ok(Candidate { i, j, energy, translation })
        })
        .collect::<Result<Vec<_>>>()?;
    let winner = candidates
        .iter()
        .min_by(|a, b| a.energy.total_cmp(&b.energy).then((a.j, a.i).cmp(&(b.j, b.i))))
        .copied()
        .expect("non-empty candidate list");
    let likelihoods = candidates.iter().map(|c| (-(c.energy - winner.energy)).exp()).collect();
    Ok(OrientationSearchResult {
        best: (winner.i, winner.j),
        best_pose: Pose::new(grid.orientation(winner.i, winner.j), winner.translation),
        candidates,
        likelihoods,
    })
}

/// Importance-sampling estimates of the two marginal likelihoods over the
/// candidate indices: `(pi_psi, pi_d)`, aligned with `i_psi` and `i_d`.
pub fn marginal_estimates(
    result: &OrientationSearchResult,
    i_psi: &[usize],
    i_d: &[usize],
    q_psi: &[f64],
    q_d: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if result.candidates.len() != i_psi.len() * i_d.len() {
        return Err(argument("search result does not cover I_psi x I_d"));
    }
    let mut pi_psi = vec![0.0; i_psi.len()];
    let mut pi_d = vec![0.0; i_d.len()];
    for (c, p) in result.candidates.iter().zip(&result.likelihoods) {
        let a = i_psi.iter().position(|&i| i == c.i).ok_or_else(|| argument("candidate outside I_psi"))?;
        let b = i_d.iter().position(|&j| j == c.j).ok_or_else(|| argument("candidate outside I_d"))?;
        pi_psi[a] += p / q_d[c.j];
        pi_d[b] += p / q_psi[c.i];
    }
    Ok((pi_psi, pi_d))
}

/// Normalized kernel density `Z^{-1} sum_k K(., k) pi_k` over `m` grid
/// points, from log-kernel values. `None` when all mass underflows.
fn smooth(m: usize, support: &[usize], weights: &[f64], log_kernel: impl Fn(usize, usize) -> f64) -> Option<Vec<f64>> {
    let terms: Vec<(usize, f64)> =
        support.iter().zip(weights).filter(|(_, &w)| w > 0.0 && w.is_finite()).map(|(&k, &w)| (k, w.ln())).collect();
    if terms.is_empty() {
        return None;
    }
    let logs: Vec<Vec<f64>> = (0..m).map(|i| terms.iter().map(|&(k, lw)| log_kernel(i, k) + lw).collect()).collect();
    let shift = logs.iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out: Vec<f64> = logs.iter().map(|row| row.iter().map(|l| (l - shift).exp()).sum()).collect();
    let z: f64 = out.iter().sum();
    if !(z > 0.0 && z.is_finite()) {
        return None;
    }
    for v in &mut out {
        *v /= z;
    }
    Some(out)
}

/// Folds one search result into the view's sampling distributions.
pub fn update_distributions(
    state: &mut SamplerState,
    view: usize,
    result: &OrientationSearchResult,
    i_psi: &[usize],
    i_d: &[usize],
    grid: &So3Grid,
) -> Result<()> {
    let (pi_psi, pi_d) = marginal_estimates(result, i_psi, i_d, &state.q_psi[view], &state.q_d[view])?;
    let params = state.params;
    let (m_psi, m_d) = (grid.m_psi(), grid.m_d());
    let axes = grid.axes();
    let smoothed_psi = smooth(m_psi, i_psi, &pi_psi, |i, k| {
        log_kernel_psi(i, k, m_psi, params.beta_psi).expect("validated beta")
    });
    let smoothed_d = smooth(m_d, i_d, &pi_d, |j, k| log_kernel_d(&axes[j], &axes[k], params.beta_d).expect("validated beta"));
    let alpha = state.alpha;
    let mut degenerate = false;
    let mix = |smoothed: Option<Vec<f64>>, m: usize, degenerate: &mut bool| -> Vec<f64> {
        let u = 1.0 / m as f64;
        match smoothed {
            Some(s) => s.into_iter().map(|p| alpha * u + (1.0 - alpha) * p).collect(),
            None => {
                *degenerate = true;
                vec![u; m]
            }
        }
    };
    let mut new_psi = mix(smoothed_psi, m_psi, &mut degenerate);
    let mut new_d = mix(smoothed_d, m_d, &mut degenerate);
    for q in [&mut new_psi, &mut new_d] {
        let s: f64 = q.iter().sum();
        q.iter_mut().for_each(|p| *p /= s);
    }
    if degenerate {
        state.degenerate_updates += 1;
    }
    state.q_psi[view] = new_psi;
    state.q_d[view] = new_d;
    Ok(())
}

/// Divides `alpha` by `alpha_r`.
pub fn anneal(state: &mut SamplerState) {
    state.alpha /= state.params.alpha_r;
}

pub const SAMPLER_CSV_HEADER: &str = "epoch,alpha,view,kind,index,q";

/// Appends every view's `Q_psi` and `Q_d` as long-format rows
/// `epoch,alpha,view,kind,index,q` with `kind` in `{psi, d}`.
pub fn write_sampler_csv<W: std::io::Write>(w: &mut W, epoch: usize, state: &SamplerState) -> std::io::Result<()> {
    let alpha = state.alpha();
    for view in 0..state.n_views() {
        for (kind, q) in [("psi", state.q_psi(view)), ("d", state.q_d(view))] {
            for (k, v) in q.iter().enumerate() {
                writeln!(w, "{epoch},{alpha:e},{view},{kind},{k},{v:e}")?;
            }
        }
    }
    Ok(())
}
