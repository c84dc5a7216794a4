//! Volume files and dataset manifests.
//!
//! A volume file is the 6-byte magic `SPFV1\0`, the dimensions as three
//! little-endian `u32`, then the samples as little-endian `f32` in C order
//! (x fastest). Volumes are held as `f64` in memory, so writing rounds to
//! `f32`; reading back a written file is bit-exact.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{SimConfig, ViewSet};
use crate::grid::{Dims, Translation, Volume};
use crate::so3::{Orientation, Pose};

pub const MAGIC: &[u8; 6] = b"SPFV1\0";
pub const HEADER_LEN: usize = 18;

/// Default manifest file name inside a dataset directory.
pub const MANIFEST_NAME: &str = "manifest.toml";

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let d = v.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * d.len());
    out.extend_from_slice(MAGIC);
    for n in [d.nx, d.ny, d.nz] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for &x in v.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("file of {} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..6] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[6 + 4 * k..10 + 4 * k].try_into().unwrap()) as usize;
    let dims = Dims::new(dim(0), dim(1), dim(2))?;
    let expected = HEADER_LEN as u64 + 4 * dims.len() as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Length { expected, found: bytes.len() as u64 });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .enumerate()
        .map(|(i, c)| {
            let x = f32::from_le_bytes(c.try_into().unwrap());
            if x.is_nan() {
                Err(Error::Data(i))
            } else {
                Ok(x as f64)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Volume::from_vec(dims, data)
}

pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode_volume(v))?;
    w.flush()?;
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_volume(&fs::read(path)?)
}

/// Pose as written to manifests: axis angles and rotation in radians,
/// translation in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub phi1: f64,
    pub phi2: f64,
    pub psi: f64,
    pub t: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let o = p.orientation;
        PoseRecord { phi1: o.phi1, phi2: o.phi2, psi: o.psi, t: p.translation.0 }
    }
}

impl From<PoseRecord> for Pose {
    fn from(r: PoseRecord) -> Self {
        // Fields are copied, not re-normalized, so round trips are exact.
        Pose::new(Orientation { phi1: r.phi1, phi2: r.phi2, psi: r.psi }, Translation(r.t))
    }
}

/// Contents of a dataset manifest. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub psf: PathBuf,
    pub views: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses: Option<Vec<PoseRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
}

impl DatasetManifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Manifest(e.to_string()))
    }
}

/// A loaded dataset with the metadata its manifest carried.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub set: ViewSet,
    pub seed: Option<u64>,
    pub sim: Option<SimConfig>,
    /// Indices of views that were zero-padded to the common cube.
    pub padded_views: Vec<usize>,
    pub psf_padded: bool,
}

/// Writes the views, the PSF and a manifest into `dir`; returns the manifest path.
pub fn save_dataset(set: &ViewSet, dir: impl AsRef<Path>) -> Result<PathBuf> {
    save_dataset_with(set, dir, None)
}

/// Like [`save_dataset`], also echoing the generator configuration.
pub fn save_dataset_with(set: &ViewSet, dir: impl AsRef<Path>, sim: Option<&SimConfig>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    if let Some(p) = &set.true_poses {
        if p.len() != set.views.len() {
            return Err(Error::Manifest(format!("{} poses for {} views", p.len(), set.views.len())));
        }
    }
    fs::create_dir_all(dir)?;
    let psf = PathBuf::from("psf.spfv");
    write_volume(&set.psf, dir.join(&psf))?;
    let mut views = Vec::with_capacity(set.views.len());
    for (l, v) in set.views.iter().enumerate() {
        let name = PathBuf::from(format!("view_{l:03}.spfv"));
        write_volume(v, dir.join(&name))?;
        views.push(name);
    }
    let manifest = DatasetManifest {
        psf,
        views,
        seed: sim.map(|s| s.seed),
        poses: set.true_poses.as_ref().map(|p| p.iter().map(PoseRecord::from).collect()),
        sim: sim.cloned(),
    };
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest.to_toml()?)?;
    Ok(path)
}

/// Reads a manifest and every file it references.
///
/// Volumes whose dimensions differ are zero-padded to the smallest cube
/// holding all of them, keeping index `d/2` at `m/2`.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    if !manifest_path.exists() {
        return Err(Error::MissingFile(manifest_path.to_path_buf()));
    }
    let manifest = DatasetManifest::from_toml(&fs::read_to_string(manifest_path)?)?;
    if manifest.views.is_empty() {
        return Err(Error::Manifest("no views listed".into()));
    }
    if let Some(p) = &manifest.poses {
        if p.len() != manifest.views.len() {
            return Err(Error::Manifest(format!("{} poses for {} views", p.len(), manifest.views.len())));
        }
    }
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &Path| {
        let full = base.join(p);
        if full.exists() {
            Ok(full)
        } else {
            Err(Error::MissingFile(full))
        }
    };
    let psf_path = resolve(&manifest.psf)?;
    let view_paths = manifest.views.iter().map(|p| resolve(p)).collect::<Result<Vec<_>>>()?;
    let psf = read_volume(psf_path)?;
    let views = view_paths.iter().map(read_volume).collect::<Result<Vec<_>>>()?;

    let m = views.iter().chain([&psf]).map(|v| v.dims()).map(|d| d.nx.max(d.ny).max(d.nz)).max().unwrap();
    let cube = Dims::cube(m)?;
    let mut padded_views = Vec::new();
    let views = views
        .into_iter()
        .enumerate()
        .map(|(l, v)| {
            if v.dims() == cube {
                v
            } else {
                padded_views.push(l);
                pad_to(&v, cube)
            }
        })
        .collect();
    let psf_padded = psf.dims() != cube;
    let psf = if psf_padded { pad_to(&psf, cube) } else { psf };
    Ok(Dataset {
        set: ViewSet { views, psf, true_poses: manifest.poses.map(|p| p.into_iter().map(Pose::from).collect()) },
        seed: manifest.seed,
        sim: manifest.sim,
        padded_views,
        psf_padded,
    })
}

/// Zero-pads `v` into `target`, mapping index `d/2` to `m/2` on every axis.
pub fn pad_to(v: &Volume, target: Dims) -> Volume {
    let d = v.dims();
    let off = [target.nx / 2 - d.nx / 2, target.ny / 2 - d.ny / 2, target.nz / 2 - d.nz / 2];
    let mut out = Volume::zeros(target);
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                out.set(x + off[0], y + off[1], z + off[2], v.get(x, y, z));
            }
        }
    }
    out
}
