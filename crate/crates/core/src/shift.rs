//! Translation estimation by normalized phase correlation.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{fft3_in_place, phase_tables, Dims, SpectralVolume, Translation};

/// Integer translation at the peak of the normalized cross-power spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationPeak {
    /// Signed shift, each component in `(-n/2, n/2]`.
    pub shift: [i64; 3],
    pub score: f64,
}

impl CorrelationPeak {
    pub fn translation(&self) -> Translation {
        Translation::from_integer(self.shift)
    }
}

/// Relative floor of the cross-power normalization.
pub const NORMALIZATION_EPS: f64 = 1e-12;

fn wrap_peak(k: usize, n: usize) -> i64 {
    if k > n / 2 {
        k as i64 - n as i64
    } else {
        k as i64
    }
}

/// Finds `t` such that `y ~ b(x - t)`.
///
/// The cross-power spectrum `y conj(b)` is normalized to unit magnitude
/// (floored at [`NORMALIZATION_EPS`] times its largest magnitude) and the
/// spatial argmax of its inverse transform is returned. Ties go to the
/// lowest array index.
pub fn phase_correlate(y_hat: &SpectralVolume, b_hat: &SpectralVolume) -> Result<CorrelationPeak> {
    y_hat.dims().require_same(&b_hat.dims())?;
    if b_hat.data().iter().all(|c| *c == Complex64::new(0.0, 0.0)) {
        return Err(Error::Degenerate("reference spectrum is identically zero".into()));
    }
    let dims = y_hat.dims();
    let mut cross: Vec<Complex64> = y_hat.data().iter().zip(b_hat.data()).map(|(y, b)| y * b.conj()).collect();
    let max_mag = cross.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if max_mag == 0.0 {
        return Ok(CorrelationPeak { shift: [0; 3], score: 0.0 });
    }
    let eps = NORMALIZATION_EPS * max_mag;
    for c in &mut cross {
        *c /= c.norm().max(eps);
    }
    let corr = SpectralVolume::from_vec(dims, cross)?.inverse_complex();
    let (best, score) = corr
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, c)| if c.re > bv { (i, c.re) } else { (bi, bv) });
    Ok(CorrelationPeak { shift: peak_shift(dims, best), score })
}

/// Finds the integer `t` minimizing `|y - b(x - t)|^2`: the spatial argmax
/// of the plain cross-correlation `ifft(y conj(b))`. Ties go to the lowest
/// array index.
///
/// Unlike [`phase_correlate`] the spectrum is not whitened, so frequencies
/// where `b` carries no energy add no noise to the peak.
pub fn cross_correlate(y_hat: &SpectralVolume, b_hat: &SpectralVolume) -> Result<CorrelationPeak> {
    y_hat.dims().require_same(&b_hat.dims())?;
    if b_hat.data().iter().all(|c| *c == Complex64::new(0.0, 0.0)) {
        return Err(Error::Degenerate("reference spectrum is identically zero".into()));
    }
    let dims = y_hat.dims();
    let cross: Vec<Complex64> = y_hat.data().iter().zip(b_hat.data()).map(|(y, b)| y * b.conj()).collect();
    let corr = SpectralVolume::from_vec(dims, cross)?.inverse_complex();
    let (best, score) = corr
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, c)| if c.re > bv { (i, c.re) } else { (bi, bv) });
    Ok(CorrelationPeak { shift: peak_shift(dims, best), score })
}

fn peak_shift(dims: Dims, idx: usize) -> [i64; 3] {
    let [x, y, z] = dims.coords(idx);
    [wrap_peak(x, dims.nx), wrap_peak(y, dims.ny), wrap_peak(z, dims.nz)]
}

/// Strategy for the innermost level: the translation of a candidate model.
pub trait TranslationSolver: Sync {
    fn solve(&self, y_hat: &SpectralVolume, model_hat: &SpectralVolume) -> Result<Translation>;

    /// The translation together with `|y_hat - rho_t model_hat|^2`.
    fn solve_with_residual(&self, y_hat: &SpectralVolume, model_hat: &SpectralVolume) -> Result<(Translation, f64)> {
        let t = self.solve(y_hat, model_hat)?;
        Ok((t, shifted_residual(y_hat, model_hat, &t)))
    }
}

/// `|y_hat - rho_t model|^2` without materializing the shifted model.
pub fn shifted_residual(y_hat: &SpectralVolume, model: &SpectralVolume, t: &Translation) -> f64 {
    let d = y_hat.dims();
    let [px, py, pz] = phase_tables(d, t);
    let (y, m) = (y_hat.data(), model.data());
    let mut sum = 0.0;
    let mut i = 0;
    for z in 0..d.nz {
        for yy in 0..d.ny {
            let pyz = py[yy] * pz[z];
            for x in 0..d.nx {
                sum += (y[i] - m[i] * (px[x] * pyz)).norm_sqr();
                i += 1;
            }
        }
    }
    sum
}

/// Normalized phase correlation.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseCorrelation;

impl TranslationSolver for PhaseCorrelation {
    fn solve(&self, y_hat: &SpectralVolume, model_hat: &SpectralVolume) -> Result<Translation> {
        Ok(phase_correlate(y_hat, model_hat)?.translation())
    }
}

/// Least-squares integer translation by plain cross-correlation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CrossCorrelation;

impl TranslationSolver for CrossCorrelation {
    fn solve(&self, y_hat: &SpectralVolume, model_hat: &SpectralVolume) -> Result<Translation> {
        Ok(cross_correlate(y_hat, model_hat)?.translation())
    }

    /// Reads the residual off the correlation peak:
    /// `|y - rho_t b|^2 = |y|^2 + |b|^2 - 2 N c(t)`.
    fn solve_with_residual(&self, y_hat: &SpectralVolume, model_hat: &SpectralVolume) -> Result<(Translation, f64)> {
        y_hat.dims().require_same(&model_hat.dims())?;
        let dims = y_hat.dims();
        let (mut yy, mut bb) = (0.0, 0.0);
        let mut cross: Vec<Complex64> = y_hat
            .data()
            .iter()
            .zip(model_hat.data())
            .map(|(y, b)| {
                yy += y.norm_sqr();
                bb += b.norm_sqr();
                y * b.conj()
            })
            .collect();
        if bb == 0.0 {
            return Err(Error::Degenerate("reference spectrum is identically zero".into()));
        }
        fft3_in_place(&mut cross, dims, true);
        let (best, peak) = cross
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, c)| if c.re > bv { (i, c.re) } else { (bi, bv) });
        let t = Translation::from_integer(peak_shift(dims, best));
        Ok((t, (yy + bb - 2.0 * peak).max(0.0)))
    }
}

/// Translation estimators selectable at run time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TranslationMethod {
    PhaseCorrelation,
    #[default]
    CrossCorrelation,
}

impl TranslationMethod {
    pub fn solver(self) -> &'static dyn TranslationSolver {
        match self {
            TranslationMethod::PhaseCorrelation => &PhaseCorrelation,
            TranslationMethod::CrossCorrelation => &CrossCorrelation,
        }
    }
}

impl std::str::FromStr for TranslationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phase" | "phase-correlation" => Ok(TranslationMethod::PhaseCorrelation),
            "cross" | "cross-correlation" => Ok(TranslationMethod::CrossCorrelation),
            other => Err(Error::Argument(format!("unknown translation method {other:?}"))),
        }
    }
}

impl std::fmt::Display for TranslationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TranslationMethod::PhaseCorrelation => "phase-correlation",
            TranslationMethod::CrossCorrelation => "cross-correlation",
        })
    }
}

/// Always returns the same translation; used when shifts are known.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedTranslation(pub Translation);

impl TranslationSolver for FixedTranslation {
    fn solve(&self, _: &SpectralVolume, _: &SpectralVolume) -> Result<Translation> {
        Ok(self.0)
    }
}
