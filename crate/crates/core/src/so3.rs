//! Axis-angle rotations and their discretization.
//!
//! An orientation is a rotation by `psi` about the unit axis
//! `d = (cos phi1 sin phi2, sin phi1 sin phi2, cos phi2)`. The search grid
//! pairs a Fibonacci lattice of axes with a uniform set of in-axis angles.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{argument, Result};
use crate::grid::Translation;

/// Golden ratio.
pub const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    pub phi1: f64,
    pub phi2: f64,
    pub psi: f64,
}

fn wrap_tau(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl Orientation {
    /// Builds an orientation, folding the angles into their canonical ranges.
    ///
    /// An axis pointing straight down (`phi2 = pi`) is stored as the upward
    /// axis with the opposite angle, which is the same rotation.
    pub fn new(phi1: f64, phi2: f64, psi: f64) -> Self {
        let mut phi1 = phi1;
        let mut psi = psi;
        let mut phi2 = phi2.rem_euclid(TAU);
        if phi2 > PI {
            phi2 = TAU - phi2;
            phi1 += PI;
        }
        if phi2 >= PI {
            phi2 = 0.0;
            psi = -psi;
        }
        Self { phi1: wrap_tau(phi1), phi2, psi: wrap_tau(psi) }
    }

    pub fn identity() -> Self {
        Self { phi1: 0.0, phi2: 0.0, psi: 0.0 }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, psi: f64) -> Self {
        let a = axis.normalize();
        let phi2 = a.z.clamp(-1.0, 1.0).acos();
        let phi1 = a.y.atan2(a.x);
        Self::new(phi1, phi2, psi)
    }

    /// Recovers an axis-angle orientation from a rotation matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let rot = Rotation3::from_matrix(m);
        match rot.axis_angle() {
            Some((axis, angle)) => Self::from_axis_angle(&axis, angle),
            None => Self::identity(),
        }
    }

    pub fn axis(&self) -> Vector3<f64> {
        axis_from_angles(self.phi1, self.phi2)
    }

    /// Rodrigues rotation by `psi` about the axis.
    pub fn matrix(&self) -> Matrix3<f64> {
        rodrigues(&self.axis(), self.psi)
    }
}

pub fn axis_from_angles(phi1: f64, phi2: f64) -> Vector3<f64> {
    Vector3::new(phi1.cos() * phi2.sin(), phi1.sin() * phi2.sin(), phi2.cos())
}

/// `R = I + sin(psi) K + (1 - cos(psi)) K^2` with `K` the cross-product matrix of `axis`.
pub fn rodrigues(axis: &Vector3<f64>, psi: f64) -> Matrix3<f64> {
    let k = axis.cross_matrix();
    Matrix3::identity() + k * psi.sin() + k * k * (1.0 - psi.cos())
}

/// Geodesic distance between two rotations, in radians.
pub fn angular_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let r = a.transpose() * b;
    let c = (r.trace() - 1.0) / 2.0;
    let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    s.atan2(c)
}

/// Angle between two unit axes, in radians.
pub fn axis_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

/// Rotation matrix of a rotation vector (unit axis scaled by the angle).
pub fn exp_map(v: &Vector3<f64>) -> Matrix3<f64> {
    let angle = v.norm();
    if angle == 0.0 {
        return Matrix3::identity();
    }
    Rotation3::from_axis_angle(&Unit::new_normalize(*v), angle).into_inner()
}

/// Orientation plus translation of one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub orientation: Orientation,
    pub translation: Translation,
}

impl Pose {
    pub fn new(orientation: Orientation, translation: Translation) -> Self {
        Self { orientation, translation }
    }

    pub fn identity() -> Self {
        Self { orientation: Orientation::identity(), translation: Translation::ZERO }
    }
}

/// Azimuth and inclination of the `j`-th of `count` Fibonacci points.
fn fibonacci_angles(j: usize, count: usize) -> (f64, f64) {
    let phi1 = (TAU * j as f64 / GOLDEN_RATIO).rem_euclid(TAU);
    let phi2 = (1.0 - (2 * j + 1) as f64 / count as f64).acos();
    (phi1, phi2)
}

/// Near-uniform Fibonacci lattice of `count` unit axes.
pub fn fibonacci_axes(count: usize) -> Result<Vec<Vector3<f64>>> {
    if count == 0 {
        return Err(argument("the number of axes must be at least 1"));
    }
    Ok((0..count)
        .map(|j| {
            let (phi1, phi2) = fibonacci_angles(j, count);
            axis_from_angles(phi1, phi2)
        })
        .collect())
}

/// Discretization of SO(3): `M_d` Fibonacci axes times `M_psi` uniform angles.
#[derive(Debug, Clone)]
pub struct So3Grid {
    axes: Vec<Vector3<f64>>,
    axis_angles: Vec<(f64, f64)>,
    psis: Vec<f64>,
}

impl So3Grid {
    pub fn new(m_d: usize, m_psi: usize) -> Result<Self> {
        if m_psi == 0 {
            return Err(argument("the number of in-axis angles must be at least 1"));
        }
        let axes = fibonacci_axes(m_d)?;
        let axis_angles = (0..m_d).map(|j| fibonacci_angles(j, m_d)).collect();
        let psis = (0..m_psi).map(|i| TAU * i as f64 / m_psi as f64).collect();
        Ok(Self { axes, axis_angles, psis })
    }

    pub fn m_d(&self) -> usize {
        self.axes.len()
    }

    pub fn m_psi(&self) -> usize {
        self.psis.len()
    }

    pub fn axes(&self) -> &[Vector3<f64>] {
        &self.axes
    }

    pub fn psis(&self) -> &[f64] {
        &self.psis
    }

    /// Orientation `theta_{i,j}`: in-axis angle `i`, axis `j`.
    pub fn orientation(&self, i: usize, j: usize) -> Orientation {
        let (phi1, phi2) = self.axis_angles[j];
        Orientation::new(phi1, phi2, self.psis[i])
    }

    /// Index of the grid axis closest to `axis`.
    pub fn nearest_axis(&self, axis: &Vector3<f64>) -> usize {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (j, a) in self.axes.iter().enumerate() {
            let d = a.dot(axis);
            if d > best_dot {
                best_dot = d;
                best = j;
            }
        }
        best
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta >= 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(argument(format!("kernel concentration must be finite and non-negative, got {beta}")))
    }
}

/// `log K^psi_{i,k} = beta cos(psi_i - psi_k)`.
pub fn log_kernel_psi(i: usize, k: usize, m_psi: usize, beta_psi: f64) -> Result<f64> {
    check_beta(beta_psi)?;
    let delta = TAU * (i as f64 - k as f64) / m_psi as f64;
    Ok(beta_psi * delta.cos())
}

/// Circular von Mises-like kernel on the in-axis angles.
pub fn kernel_psi(i: usize, k: usize, m_psi: usize, beta_psi: f64) -> Result<f64> {
    Ok(log_kernel_psi(i, k, m_psi, beta_psi)?.exp())
}

/// `log K^d_{j,k} = beta d_j . d_k`.
pub fn log_kernel_d(a: &Vector3<f64>, b: &Vector3<f64>, beta_d: f64) -> Result<f64> {
    check_beta(beta_d)?;
    Ok(beta_d * a.dot(b))
}

/// Fisher-like kernel on the sphere of axes.
pub fn kernel_d(a: &Vector3<f64>, b: &Vector3<f64>, beta_d: f64) -> Result<f64> {
    Ok(log_kernel_d(a, b, beta_d)?.exp())
}
