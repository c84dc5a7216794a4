//! Dense 3D grids and the linear operators the imaging model is built from.
//!
//! Volumes are stored in C order with `z` slowest and `x` fastest, so the
//! voxel `(x, y, z)` lives at `x + nx * (y + ny * z)`.
//!
//! Frequencies follow the usual `fftfreq` layout: array index `k` along an
//! axis of length `n` stands for the signed index `k` when `k <= (n - 1) / 2`
//! and `k - n` otherwise, with angular frequency `omega = 2 pi k / n`.
//!
//! Spatial volumes rotate about their geometric center `(n - 1) / 2`;
//! spectra rotate about the zero frequency.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul};

use nalgebra::Matrix3;
use num_complex::Complex64;
use num_traits::Zero;
use rustfft::FftPlanner;

use crate::error::{shape, Error, Result};
use crate::so3::{Orientation, Pose};

/// Relative tolerance on the imaginary residual accepted by [`ifft`].
pub const HERMITIAN_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(shape(format!("dimensions must be positive, got {nx}x{ny}x{nz}")));
        }
        nx.checked_mul(ny)
            .and_then(|p| p.checked_mul(nz))
            .and_then(|p| p.checked_mul(std::mem::size_of::<Complex64>()))
            .ok_or(Error::Size([nx, ny, nz]))?;
        Ok(Self { nx, ny, nz })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_cubic(&self) -> bool {
        self.nx == self.ny && self.ny == self.nz
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.nx;
        let y = (idx / self.nx) % self.ny;
        let z = idx / (self.nx * self.ny);
        [x, y, z]
    }

    pub(crate) fn require_cubic(&self) -> Result<usize> {
        if self.is_cubic() {
            Ok(self.nx)
        } else {
            Err(shape(format!(
                "operation requires a cubic grid, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )))
        }
    }

    pub(crate) fn require_same(&self, other: &Dims) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(shape(format!("dimension mismatch: {self:?} vs {other:?}")))
        }
    }
}

/// Signed frequency index of array position `k` on an axis of length `n`.
#[inline]
pub fn signed_index(k: usize, n: usize) -> i64 {
    if k <= (n - 1) / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Angular frequency of array position `k` on an axis of length `n`.
#[inline]
pub fn angular_frequency(k: usize, n: usize) -> f64 {
    2.0 * PI * signed_index(k, n) as f64 / n as f64
}

/// Real scalar field on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    data: Vec<f64>,
}

impl Volume {
    pub fn zeros(dims: Dims) -> Self {
        Self { dims, data: vec![0.0; dims.len()] }
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(shape(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                dims.nx,
                dims.ny,
                dims.nz
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(bad));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) {
        let i = self.dims.index(x, y, z);
        self.data[i] = value;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Circular shift by an integer number of voxels: `out[x] = in[x - shift]`.
    pub fn circular_shift(&self, shift: [i64; 3]) -> Volume {
        let d = self.dims;
        let n = d.as_array();
        let s: Vec<usize> =
            (0..3).map(|a| shift[a].rem_euclid(n[a] as i64) as usize).collect();
        let mut out = vec![0.0; d.len()];
        for z in 0..d.nz {
            let tz = (z + s[2]) % d.nz;
            for y in 0..d.ny {
                let ty = (y + s[1]) % d.ny;
                for x in 0..d.nx {
                    let tx = (x + s[0]) % d.nx;
                    out[d.index(tx, ty, tz)] = self.data[d.index(x, y, z)];
                }
            }
        }
        Volume { dims: d, data: out }
    }

    /// Moves voxel `n / 2` to the origin (the `ifftshift` convention).
    pub fn center_to_origin(&self) -> Volume {
        let [nx, ny, nz] = self.dims.as_array();
        self.circular_shift([-((nx / 2) as i64), -((ny / 2) as i64), -((nz / 2) as i64)])
    }

    /// Inverse of [`Volume::center_to_origin`].
    pub fn origin_to_center(&self) -> Volume {
        let [nx, ny, nz] = self.dims.as_array();
        self.circular_shift([(nx / 2) as i64, (ny / 2) as i64, (nz / 2) as i64])
    }

    pub(crate) fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }
}

/// Complex spectrum of a [`Volume`], in `fftfreq` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralVolume {
    dims: Dims,
    data: Vec<Complex64>,
}

impl SpectralVolume {
    pub fn zeros(dims: Dims) -> Self {
        Self { dims, data: vec![Complex64::zero(); dims.len()] }
    }

    pub fn from_vec(dims: Dims, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(shape(format!("data length {} does not match {:?}", data.len(), dims)));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> Complex64 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Array index of the frequency `-omega` for the frequency at `idx`.
    #[inline]
    pub fn mirror_index(&self, idx: usize) -> usize {
        let d = self.dims;
        let [x, y, z] = d.coords(idx);
        d.index((d.nx - x) % d.nx, (d.ny - y) % d.ny, (d.nz - z) % d.nz)
    }

    /// Largest violation of `F(-w) = conj(F(w))`, relative to the largest magnitude.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self.data.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        let worst = (0..self.data.len())
            .map(|i| (self.data[i] - self.data[self.mirror_index(i)].conj()).norm())
            .fold(0.0, f64::max);
        worst / scale
    }

    /// Projects onto the spectra of real volumes: `F(w) <- (F(w) + conj(F(-w))) / 2`.
    pub fn symmetrize(&mut self) {
        let original = self.data.clone();
        for (i, out) in self.data.iter_mut().enumerate() {
            let m = {
                let d = self.dims;
                let [x, y, z] = d.coords(i);
                d.index((d.nx - x) % d.nx, (d.ny - y) % d.ny, (d.nz - z) % d.nz)
            };
            *out = (original[i] + original[m].conj()) * 0.5;
        }
    }

    /// Unnormalized-forward / normalized-inverse DFT without a symmetry check.
    pub fn inverse_complex(&self) -> Vec<Complex64> {
        let mut data = self.data.clone();
        fft3_in_place(&mut data, self.dims, true);
        let scale = 1.0 / self.dims.len() as f64;
        for c in &mut data {
            *c *= scale;
        }
        data
    }

    pub(crate) fn hadamard(&self, other: &SpectralVolume) -> SpectralVolume {
        debug_assert_eq!(self.dims, other.dims);
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        SpectralVolume { dims: self.dims, data }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// 3D DFT in place along all three axes. The inverse is unnormalized here.
pub(crate) fn fft3_in_place(data: &mut [Complex64], dims: Dims, inverse: bool) {
    let Dims { nx, ny, nz } = dims;
    let (fx, fy, fz) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let mut plan = |n| {
            if inverse {
                p.plan_fft_inverse(n)
            } else {
                p.plan_fft_forward(n)
            }
        };
        (plan(nx), plan(ny), plan(nz))
    });
    let scratch_len = fx
        .get_inplace_scratch_len()
        .max(fy.get_inplace_scratch_len())
        .max(fz.get_inplace_scratch_len());
    let mut scratch = vec![Complex64::zero(); scratch_len];

    if nx > 1 {
        fx.process_with_scratch(data, &mut scratch);
    }

    if ny > 1 {
        // Gather each xy-plane as nx contiguous lines of length ny.
        let mut plane = vec![Complex64::zero(); nx * ny];
        for z in 0..nz {
            let base = z * nx * ny;
            for y in 0..ny {
                for x in 0..nx {
                    plane[x * ny + y] = data[base + y * nx + x];
                }
            }
            fy.process_with_scratch(&mut plane, &mut scratch);
            for y in 0..ny {
                for x in 0..nx {
                    data[base + y * nx + x] = plane[x * ny + y];
                }
            }
        }
    }

    if nz > 1 {
        let mut lines = vec![Complex64::zero(); nx * nz];
        for y in 0..ny {
            for z in 0..nz {
                let row = (z * ny + y) * nx;
                for x in 0..nx {
                    lines[x * nz + z] = data[row + x];
                }
            }
            fz.process_with_scratch(&mut lines, &mut scratch);
            for z in 0..nz {
                let row = (z * ny + y) * nx;
                for x in 0..nx {
                    data[row + x] = lines[x * nz + z];
                }
            }
        }
    }
}

/// Unnormalized forward DFT.
pub fn fft(v: &Volume) -> SpectralVolume {
    let mut data: Vec<Complex64> = v.data.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    fft3_in_place(&mut data, v.dims, false);
    SpectralVolume { dims: v.dims, data }
}

/// Normalized inverse DFT of a spectrum that must come from a real volume.
///
/// The imaginary residual is discarded once it is confirmed to be below
/// [`HERMITIAN_TOLERANCE`] relative to the real part.
pub fn ifft(s: &SpectralVolume) -> Result<Volume> {
    let complex = s.inverse_complex();
    let max_real = complex.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
    let max_imag = complex.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    if max_imag > HERMITIAN_TOLERANCE * max_real || (max_real == 0.0 && max_imag > 0.0) {
        return Err(Error::Symmetry { max_imag, max_real });
    }
    Ok(Volume { dims: s.dims, data: complex.into_iter().map(|c| c.re).collect() })
}

/// Translation vector in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Translation(pub [f64; 3]);

impl Translation {
    pub const ZERO: Translation = Translation([0.0; 3]);

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Translation([x, y, z])
    }

    pub fn from_integer(t: [i64; 3]) -> Self {
        Translation([t[0] as f64, t[1] as f64, t[2] as f64])
    }

    pub fn neg(&self) -> Self {
        Translation([-self.0[0], -self.0[1], -self.0[2]])
    }
}

/// Per-axis phase factors `exp(-i t omega_k)`; their product over the
/// three axes shifts a volume by `+t`.
///
/// On even axes the Nyquist bin is its own mirror, so it gets the real
/// factor `cos(pi t)` to keep real volumes real. For integer `t` this is
/// exactly the phase factor.
pub(crate) fn phase_tables(dims: Dims, t: &Translation) -> [Vec<Complex64>; 3] {
    let n = dims.as_array();
    std::array::from_fn(|a| {
        (0..n[a])
            .map(|k| {
                if n[a].is_multiple_of(2) && k == n[a] / 2 {
                    Complex64::new((PI * t.0[a]).cos(), 0.0)
                } else {
                    Complex64::from_polar(1.0, -t.0[a] * angular_frequency(k, n[a]))
                }
            })
            .collect()
    })
}

/// Multiplies a spectrum by the phase ramp that realizes the spatial
/// translation `f(x) -> f(x - t)`.
pub fn apply_phase_shift(s: &SpectralVolume, t: &Translation) -> SpectralVolume {
    if t.0 == [0.0; 3] {
        return s.clone();
    }
    let d = s.dims;
    let [px, py, pz] = phase_tables(d, t);
    let mut out = s.clone();
    let mut i = 0;
    for z in 0..d.nz {
        for y in 0..d.ny {
            let pyz = py[y] * pz[z];
            for x in 0..d.nx {
                out.data[i] *= px[x] * pyz;
                i += 1;
            }
        }
    }
    out
}

/// Interpolation kernel used by rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Trilinear,
    /// Keys cubic convolution (a = -1/2), 4 taps per axis.
    Tricubic,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trilinear" | "linear" => Ok(Interpolation::Trilinear),
            "tricubic" | "cubic" => Ok(Interpolation::Tricubic),
            other => Err(Error::Argument(format!("unknown interpolation `{other}`"))),
        }
    }
}

impl std::fmt::Display for Interpolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Interpolation::Trilinear => "trilinear",
            Interpolation::Tricubic => "tricubic",
        })
    }
}

fn keys_weights(frac: f64) -> [f64; 4] {
    const A: f64 = -0.5;
    let k = |x: f64| {
        let x = x.abs();
        if x <= 1.0 {
            (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
        } else if x < 2.0 {
            A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
        } else {
            0.0
        }
    };
    [k(1.0 + frac), k(frac), k(1.0 - frac), k(2.0 - frac)]
}

/// How integer sample positions map onto array indices.
#[derive(Debug, Clone, Copy)]
enum Frame {
    /// Positions are array indices; `center` is the rotation center.
    Spatial { center: f64 },
    /// Positions are signed frequency indices, rotation about zero.
    Frequency,
}

struct AxisMap {
    n: usize,
    frame: Frame,
    /// Array index for integer sample `s - offset`; `usize::MAX` outside the grid.
    lut: Vec<usize>,
    offset: i64,
}

impl AxisMap {
    fn new(n: usize, frame: Frame) -> Self {
        // Taps reach at most two samples beyond the position range.
        let offset = n as i64 + 3;
        let ni = n as i64;
        let lut = (-offset..=offset + ni)
            .map(|s| match frame {
                Frame::Spatial { .. } => if (0..ni).contains(&s) { s as usize } else { usize::MAX },
                Frame::Frequency => {
                    if (-(ni / 2)..=ni - 1 - ni / 2).contains(&s) { s.rem_euclid(ni) as usize } else { usize::MAX }
                }
            })
            .collect();
        Self { n, frame, lut, offset }
    }

    #[inline]
    fn position(&self, k: usize) -> f64 {
        match self.frame {
            Frame::Spatial { center } => k as f64 - center,
            Frame::Frequency => signed_index(k, self.n) as f64,
        }
    }

    #[inline]
    fn source(&self, p: f64) -> f64 {
        match self.frame {
            Frame::Spatial { center } => p + center,
            Frame::Frequency => p,
        }
    }

    /// Array index of integer sample `s` and a 0/1 mask; samples outside
    /// the grid map to index 0 with mask 0.
    #[inline]
    fn tap(&self, s: i64) -> (usize, f64) {
        match self.lut.get((s + self.offset) as usize) {
            Some(&i) if i != usize::MAX => (i, 1.0),
            _ => (0, 0.0),
        }
    }
}

/// Interpolation taps (flat array index, weight) for one output voxel.
///
/// Taps that fall outside the grid are emitted with weight zero.
#[inline]
fn taps(map: &AxisMap, u: [f64; 3], interp: Interpolation, mut emit: impl FnMut(usize, f64)) {
    let n = map.n;
    // Truncation plus correction avoids a libm floor call on baseline x86-64.
    let b = u.map(|v| {
        let t = v as i64;
        t - ((t as f64) > v) as i64
    });
    let frac = [u[0] - b[0] as f64, u[1] - b[1] as f64, u[2] - b[2] as f64];
    match interp {
        Interpolation::Trilinear => {
            let axis = |a: usize, stride: usize| {
                let (i0, m0) = map.tap(b[a]);
                let (i1, m1) = map.tap(b[a] + 1);
                [(i0 * stride, (1.0 - frac[a]) * m0), (i1 * stride, frac[a] * m1)]
            };
            let (tx, ty, tz) = (axis(0, 1), axis(1, n), axis(2, n * n));
            for &(iz, cz) in &tz {
                for &(iy, cy) in &ty {
                    let (o, c) = (iz + iy, cz * cy);
                    emit(o + tx[0].0, c * tx[0].1);
                    emit(o + tx[1].0, c * tx[1].1);
                }
            }
        }
        Interpolation::Tricubic => {
            let axis = |a: usize, stride: usize| {
                let w = keys_weights(frac[a]);
                std::array::from_fn::<_, 4, _>(|k| {
                    let (i, m) = map.tap(b[a] + k as i64 - 1);
                    (i * stride, w[k] * m)
                })
            };
            let (tx, ty, tz) = (axis(0, 1), axis(1, n), axis(2, n * n));
            for &(iz, cz) in &tz {
                for &(iy, cy) in &ty {
                    let (o, c) = (iz + iy, cz * cy);
                    for &(ix, cx) in &tx {
                        emit(o + ix, c * cx);
                    }
                }
            }
        }
    }
}

/// Visits every output voxel with the source coordinate `R^T p`.
fn for_each_source(dims: Dims, frame: Frame, rot: &Matrix3<f64>, mut f: impl FnMut(usize, [f64; 3])) {
    let n = dims.nx;
    let map = AxisMap::new(n, frame);
    let rt = rot.transpose();
    let pos: Vec<f64> = (0..n).map(|k| map.position(k)).collect();
    let mut idx = 0;
    for z in 0..n {
        let pz = pos[z];
        for y in 0..n {
            let py = pos[y];
            let row = [
                rt[(0, 1)] * py + rt[(0, 2)] * pz,
                rt[(1, 1)] * py + rt[(1, 2)] * pz,
                rt[(2, 1)] * py + rt[(2, 2)] * pz,
            ];
            for &px in pos.iter().take(n) {
                let u = [
                    map.source(rt[(0, 0)] * px + row[0]),
                    map.source(rt[(1, 0)] * px + row[1]),
                    map.source(rt[(2, 0)] * px + row[2]),
                ];
                f(idx, u);
                idx += 1;
            }
        }
    }
}

/// Field values the resampler can interpolate.
pub(crate) trait Sample: Copy + Zero + Add<Output = Self> + AddAssign + Mul<f64, Output = Self> + Send + Sync {}
impl Sample for f64 {}
impl Sample for Complex64 {}

fn resample<T: Sample>(src: &[T], dims: Dims, frame: Frame, rot: &Matrix3<f64>, interp: Interpolation) -> Vec<T> {
    let map = AxisMap::new(dims.nx, frame);
    let mut out = vec![T::zero(); src.len()];
    for_each_source(dims, frame, rot, |i, u| {
        let mut acc = T::zero();
        taps(&map, u, interp, |k, w| acc += src[k] * w);
        out[i] = acc;
    });
    out
}

/// Transpose of [`resample`]: scatters each output value back onto its taps.
fn splat<T: Sample>(values: &[T], dims: Dims, frame: Frame, rot: &Matrix3<f64>, interp: Interpolation) -> Vec<T> {
    let map = AxisMap::new(dims.nx, frame);
    let mut out = vec![T::zero(); values.len()];
    for_each_source(dims, frame, rot, |i, u| {
        let v = values[i];
        taps(&map, u, interp, |k, w| out[k] += v * w);
    });
    out
}

fn is_identity(rot: &Matrix3<f64>) -> bool {
    *rot == Matrix3::identity()
}

/// Fields that can be rotated on their grid.
pub trait Rotate: Sized {
    /// Returns the field `x -> self(R^T x)`, sampled with `interp`.
    fn rotated(&self, rot: &Matrix3<f64>, interp: Interpolation) -> Result<Self>;
}

impl Rotate for Volume {
    fn rotated(&self, rot: &Matrix3<f64>, interp: Interpolation) -> Result<Self> {
        let n = self.dims.require_cubic()?;
        if is_identity(rot) {
            return Ok(self.clone());
        }
        let frame = Frame::Spatial { center: (n as f64 - 1.0) / 2.0 };
        Ok(Volume { dims: self.dims, data: resample(&self.data, self.dims, frame, rot, interp) })
    }
}

impl Rotate for SpectralVolume {
    fn rotated(&self, rot: &Matrix3<f64>, interp: Interpolation) -> Result<Self> {
        self.dims.require_cubic()?;
        if is_identity(rot) {
            return Ok(self.clone());
        }
        Ok(SpectralVolume {
            dims: self.dims,
            data: resample(&self.data, self.dims, Frame::Frequency, rot, interp),
        })
    }
}

/// Rotates a volume or spectrum by an axis-angle orientation.
pub fn rotate<T: Rotate>(field: &T, orientation: &Orientation, interp: Interpolation) -> Result<T> {
    field.rotated(&orientation.matrix(), interp)
}

/// Adjoint of the spectral rotation `R`: `<R a, b> = <a, R* b>` for the
/// real inner product on complex grids.
pub fn rotate_spectrum_adjoint(
    s: &SpectralVolume,
    rot: &Matrix3<f64>,
    interp: Interpolation,
) -> Result<SpectralVolume> {
    s.dims.require_cubic()?;
    if is_identity(rot) {
        return Ok(s.clone());
    }
    Ok(SpectralVolume { dims: s.dims, data: splat(&s.data, s.dims, Frame::Frequency, rot, interp) })
}

/// Adjoint of the spatial rotation of a [`Volume`].
pub fn rotate_volume_adjoint(v: &Volume, rot: &Matrix3<f64>, interp: Interpolation) -> Result<Volume> {
    let n = v.dims.require_cubic()?;
    if is_identity(rot) {
        return Ok(v.clone());
    }
    let frame = Frame::Spatial { center: (n as f64 - 1.0) / 2.0 };
    Ok(Volume { dims: v.dims, data: splat(&v.data, v.dims, frame, rot, interp) })
}

/// Forward spectral model `psf_hat * rho_t * R(f_hat)` for one view.
pub fn forward_spectrum(
    psf_hat: &SpectralVolume,
    f_hat: &SpectralVolume,
    pose: &Pose,
    interp: Interpolation,
) -> Result<SpectralVolume> {
    psf_hat.dims.require_same(&f_hat.dims)?;
    psf_hat.dims.require_cubic()?;
    let rotated = f_hat.rotated(&pose.orientation.matrix(), interp)?;
    Ok(apply_phase_shift(&psf_hat.hadamard(&rotated), &pose.translation))
}

/// Data term of one view, `|y_hat - psf_hat rho_t R(f_hat)|^2 / n_voxels`.
///
/// Dividing by the voxel count makes the value equal the spatial-domain
/// squared residual.
pub fn energy_term(
    s_view: &SpectralVolume,
    psf_hat: &SpectralVolume,
    f_hat: &SpectralVolume,
    pose: &Pose,
    interp: Interpolation,
) -> Result<f64> {
    s_view.dims.require_same(&psf_hat.dims)?;
    let model = forward_spectrum(psf_hat, f_hat, pose, interp)?;
    let sum: f64 = s_view.data.iter().zip(&model.data).map(|(y, m)| (y - m).norm_sqr()).sum();
    Ok(sum / s_view.dims.len() as f64)
}
