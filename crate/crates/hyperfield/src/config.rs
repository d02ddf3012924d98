//! On-disk configuration: JSON-serializable mirrors of the field
//! architecture and training hyperparameters, with defaults matching the
//! engine's. Effective configs are echoed into output directories.

use std::path::Path;
use std::str::FromStr;

use hyperfield_core::encoding::GridConfig;
use hyperfield_core::field::{
    DensityVariant, FieldConfig, ProposalVariant, RadianceVariant, DEFAULT_DECODER_HIDDEN,
    DEFAULT_DECODER_LAYERS, DEFAULT_LAMBDA_TERMS, DEFAULT_LATENT_DIM,
};
use hyperfield_core::render::RenderConfig;
use hyperfield_core::sampling::SceneBox;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

/// Serializable grid shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub levels: usize,
    pub base_resolution: usize,
    pub growth_factor: f64,
    pub features_per_level: usize,
}

impl GridSpec {
    pub fn to_core(self) -> GridConfig {
        GridConfig {
            levels: self.levels,
            base_resolution: self.base_resolution,
            growth_factor: self.growth_factor,
            features_per_level: self.features_per_level,
        }
    }

    pub fn from_core(g: &GridConfig) -> Self {
        GridSpec {
            levels: g.levels,
            base_resolution: g.base_resolution,
            growth_factor: g.growth_factor,
            features_per_level: g.features_per_level,
        }
    }
}

/// Field architecture as written in config files and checkpoints. Variant
/// names use the engine's spelling: radiance `C`/`C1`/`C2`, density
/// `sigma`/`sigma0`/`sigma1`/`sigma2`, proposal `P0`/`Plambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldSpec {
    pub radiance: String,
    pub density: String,
    pub proposal: String,
    pub latent_dim: usize,
    pub lambda_terms: usize,
    pub decoder_hidden: usize,
    pub decoder_layers: usize,
    pub shared_latent: bool,
    pub geo_grid: Option<GridSpec>,
    pub geo4_grid: Option<GridSpec>,
    pub prop_grid: Option<GridSpec>,
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec {
            radiance: "C".into(),
            density: "sigma0".into(),
            proposal: "P0".into(),
            latent_dim: DEFAULT_LATENT_DIM,
            lambda_terms: DEFAULT_LAMBDA_TERMS,
            decoder_hidden: DEFAULT_DECODER_HIDDEN,
            decoder_layers: DEFAULT_DECODER_LAYERS,
            shared_latent: false,
            geo_grid: None,
            geo4_grid: None,
            prop_grid: None,
        }
    }
}

impl FieldSpec {
    pub fn variants(radiance: &str, density: &str, proposal: &str) -> Self {
        FieldSpec {
            radiance: radiance.into(),
            density: density.into(),
            proposal: proposal.into(),
            ..FieldSpec::default()
        }
    }

    /// Resolve against a dataset's wavelength axis and scene bounds.
    pub fn to_core(&self, wavelengths: Vec<f64>, scene: SceneBox) -> Result<FieldConfig> {
        let radiance = RadianceVariant::from_str(&self.radiance)
            .map_err(|e| AppError::config(e.to_string()))?;
        let density = DensityVariant::from_str(&self.density)
            .map_err(|e| AppError::config(e.to_string()))?;
        let proposal = ProposalVariant::from_str(&self.proposal)
            .map_err(|e| AppError::config(e.to_string()))?;
        let mut cfg = FieldConfig::new(radiance, density, proposal, wavelengths, scene);
        cfg.latent_dim = self.latent_dim;
        cfg.lambda_terms = self.lambda_terms;
        cfg.decoder_hidden = self.decoder_hidden;
        cfg.decoder_layers = self.decoder_layers;
        cfg.shared_latent = self.shared_latent;
        if let Some(g) = self.geo_grid {
            cfg.geo_grid = g.to_core();
        }
        if let Some(g) = self.geo4_grid {
            cfg.geo4_grid = g.to_core();
        }
        if let Some(g) = self.prop_grid {
            cfg.prop_grid = g.to_core();
        }
        cfg.validate().map_err(AppError::from)?;
        Ok(cfg)
    }
}

/// Training hyperparameters. `wavelengths_per_step` and `cache_images`
/// default to "all" when omitted; `keep_wavelengths` selects the evenly
/// spaced spectral training subset when set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub rays_per_step: usize,
    pub wavelengths_per_step: Option<usize>,
    pub cache_images: Option<usize>,
    pub cache_refresh_steps: u64,
    pub base_lr: f64,
    pub final_lr: f64,
    pub decay_steps: u64,
    pub seed: u64,
    pub recon_weight: f64,
    pub interlevel_weight: f64,
    pub train_fraction: f64,
    pub keep_wavelengths: Option<usize>,
    pub samples_stage0: usize,
    pub samples_stage1: usize,
    pub samples_fine: usize,
    pub background: f64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let render = RenderConfig::default();
        TrainConfig {
            total_steps: 25000,
            rays_per_step: 4096,
            wavelengths_per_step: None,
            cache_images: None,
            cache_refresh_steps: 50,
            base_lr: 1e-2,
            final_lr: 1e-4,
            decay_steps: 20000,
            seed: 0,
            recon_weight: 1.0,
            interlevel_weight: 1.0,
            train_fraction: 0.9,
            keep_wavelengths: None,
            samples_stage0: render.samples_stage0,
            samples_stage1: render.samples_stage1,
            samples_fine: render.samples_fine,
            background: render.background,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0
            || self.rays_per_step == 0
            || self.cache_refresh_steps == 0
            || self.decay_steps == 0
            || self.samples_stage0 == 0
            || self.samples_stage1 == 0
            || self.samples_fine == 0
            || self.checkpoint_every == 0
        {
            return Err(AppError::config("train config counts must be positive"));
        }
        if self.wavelengths_per_step == Some(0) || self.cache_images == Some(0) {
            return Err(AppError::config(
                "wavelengths_per_step and cache_images must be positive when set",
            ));
        }
        if !(self.base_lr > 0.0 && self.final_lr > 0.0) {
            return Err(AppError::config("learning rates must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(AppError::config("train_fraction must lie in (0, 1)"));
        }
        if !(self.recon_weight >= 0.0 && self.interlevel_weight >= 0.0) {
            return Err(AppError::config("loss weights must be ≥ 0"));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(AppError::config("background must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            samples_stage0: self.samples_stage0,
            samples_stage1: self.samples_stage1,
            samples_fine: self.samples_fine,
            background: self.background,
            ..RenderConfig::default()
        }
    }
}

/// Read a JSON config file, tolerating a missing path by returning defaults.
pub fn read_json_config<T: for<'de> Deserialize<'de> + Default>(
    path: Option<&Path>,
) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| AppError::config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| AppError::config(format!("{}: {e}", p.display())))
        }
    }
}

/// Echo an effective config into an output directory for provenance.
pub fn echo_config<T: Serialize>(value: &T, dir: &Path, name: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join(name),
        serde_json::to_string_pretty(value).unwrap(),
    )?;
    Ok(())
}
