//! Run configuration: a TOML file, overridden by command-line flags, echoed
//! into every output directory.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use spr3d::eval::{RegistrationParams, DEFAULT_CONE_HALF_ANGLE_DEG, DEFAULT_CUTOFF};
use spr3d::forward::SimConfig;
use spr3d::grid::Interpolation;
use spr3d::pose::SamplerParams;
use spr3d::recon::{Init, ReconConfig};
use spr3d::shift::TranslationMethod;

/// File name of the resolved configuration inside an output directory.
pub const ECHO_NAME: &str = "config.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses all available cores.
    pub threads: usize,
    pub verbosity: u8,
    pub sim: SimConfig,
    pub recon: ReconSettings,
    pub eval: EvalSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconSettings {
    pub epochs: usize,
    pub m_d: usize,
    pub m_psi: usize,
    pub n_d: usize,
    pub n_psi: usize,
    pub alpha_r: f64,
    pub beta_d: f64,
    pub beta_psi: f64,
    /// Step size; absent means the PSF-derived default.
    pub mu: Option<f64>,
    pub seed: u64,
    /// `random-uniform` or `random-uniform-spatial`.
    pub init: String,
    /// Starting volume file; overrides `init`.
    pub init_volume: Option<PathBuf>,
    pub interpolation: String,
    pub translation: String,
    pub early_stop: bool,
    /// Use the manifest poses instead of searching.
    pub known_poses: bool,
    /// Write a checkpoint every k epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for ReconSettings {
    fn default() -> Self {
        let c = ReconConfig::default();
        Self {
            epochs: c.epochs,
            m_d: c.m_d,
            m_psi: c.m_psi,
            n_d: c.sampler.n_d,
            n_psi: c.sampler.n_psi,
            alpha_r: c.sampler.alpha_r,
            beta_d: c.sampler.beta_d,
            beta_psi: c.sampler.beta_psi,
            mu: c.mu,
            seed: c.seed,
            init: "random-uniform".into(),
            init_volume: None,
            interpolation: c.interpolation.to_string(),
            translation: c.translation.to_string(),
            early_stop: c.early_stop,
            known_poses: false,
            checkpoint_every: 0,
        }
    }
}

impl ReconSettings {
    /// Library configuration, without the provided volume or known poses,
    /// which the caller loads from disk.
    pub fn to_config(&self) -> Result<ReconConfig> {
        Ok(ReconConfig {
            mu: self.mu,
            epochs: self.epochs,
            m_d: self.m_d,
            m_psi: self.m_psi,
            sampler: SamplerParams {
                n_d: self.n_d,
                n_psi: self.n_psi,
                alpha_r: self.alpha_r,
                beta_d: self.beta_d,
                beta_psi: self.beta_psi,
            },
            seed: self.seed,
            init: self.init.parse::<Init>()?,
            interpolation: self.interpolation.parse::<Interpolation>()?,
            translation: self.translation.parse::<TranslationMethod>()?,
            early_stop: self.early_stop,
            known_poses: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub cutoff: f64,
    pub register: bool,
    pub cfsc: bool,
    pub cfsc_directions: usize,
    pub cone_half_angle_deg: f64,
    pub axis_count: usize,
    pub angle_step_deg: f64,
    pub bins: usize,
    pub refine: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let r = RegistrationParams::default();
        Self {
            cutoff: DEFAULT_CUTOFF,
            register: true,
            cfsc: false,
            cfsc_directions: 200,
            cone_half_angle_deg: DEFAULT_CONE_HALF_ANGLE_DEG,
            axis_count: r.axis_count,
            angle_step_deg: r.angle_step.to_degrees(),
            bins: r.bins,
            refine: r.refine,
        }
    }
}

impl EvalSettings {
    pub fn registration(&self) -> RegistrationParams {
        RegistrationParams {
            axis_count: self.axis_count,
            angle_step: self.angle_step_deg.to_radians(),
            bins: self.bins,
            refine: self.refine,
            ..RegistrationParams::default()
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Writes the resolved configuration into `dir`. The output directory
    /// itself is left out so that identical runs give identical files.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let cfg = RunConfig { out: None, ..self.clone() };
        std::fs::write(dir.join(ECHO_NAME), cfg.to_toml()?).with_context(|| format!("writing {ECHO_NAME}"))
    }
}
