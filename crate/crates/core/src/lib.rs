//! Single-particle-style 3D reconstruction from fluorescence microscopy views.
//!
//! The pipeline takes a set of 3D views of identical particles, each seen
//! at an unknown orientation and position and blurred by an anisotropic
//! PSF, and jointly estimates the particle and every view's pose:
//!
//! * [`forward`] simulates views from a known volume;
//! * [`recon`] runs stochastic gradient descent on the particle spectrum,
//!   searching each view's orientation ([`pose`]) and translation
//!   ([`shift`]) on the fly;
//! * [`eval`] scores a reconstruction against ground truth.
//!
//! ```
//! use spr3d::grid::{fft, ifft, Dims, Volume};
//!
//! let v = Volume::from_fn(Dims::cube(8).unwrap(), |x, y, z| (x + 2 * y + 3 * z) as f64);
//! let back = ifft(&fft(&v)).unwrap();
//! assert!(v.data().iter().zip(back.data()).all(|(a, b)| (a - b).abs() < 1e-10));
//! ```

pub mod error;
pub mod eval;
pub mod forward;
pub mod grid;
pub mod io;
pub mod pose;
pub mod recon;
pub mod shift;
pub mod so3;

pub use error::{Error, Result};

// The guide's code blocks run as doctests so that the book and the crate
// cannot drift apart.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/volumes.md")]
    mod volumes {}
    #[doc = include_str!("../../../book/src/rotations.md")]
    mod rotations {}
    #[doc = include_str!("../../../book/src/forward-model.md")]
    mod forward_model {}
    #[doc = include_str!("../../../book/src/translations.md")]
    mod translations {}
    #[doc = include_str!("../../../book/src/pose-search.md")]
    mod pose_search {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/files-and-cli.md")]
    mod files_and_cli {}
}
