//! Experiment configuration: a single JSON document drives every command.
//! Unknown keys are rejected; the schema is published at
//! `docs/config.schema.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pulsefield_core::error::DataError;
use pulsefield_core::model::{Activation, EncodingKind};
use pulsefield_core::synthdata::{
    default_params, preset_params, GridSpec, OcclusionBand, WomersleyParams,
};
use pulsefield_core::training::{LossWeights, TrainConfig};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Named dataset preset (exp10..exp22); fills the dataset section.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<LossWeights>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub io: Option<IoConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstruct: Option<ReconstructConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablate: Option<AblateConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub womersley: Option<WomersleyConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub periods: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occlusion: Option<OcclusionConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub particle_images: Option<ParticleImageConfig>,
}

/// Analytic flow parameters. Pressure modes default to the standard pair
/// scaled so the peak centerline velocity is about 0.3 m/s.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WomersleyConfig {
    pub radius: f64,
    pub rho: f64,
    pub mu: f64,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pressure_modes: Option<Vec<[f64; 2]>>,
    pub reynolds: f64,
}

impl Default for WomersleyConfig {
    fn default() -> Self {
        WomersleyConfig {
            radius: 2.5e-3,
            rho: 1060.0,
            mu: 3.0e-3,
            alpha: 2.77,
            pressure_modes: None,
            reynolds: 500.0,
        }
    }
}

impl WomersleyConfig {
    pub fn build(&self) -> Result<WomersleyParams, DataError> {
        match &self.pressure_modes {
            Some(modes) => WomersleyParams::from_alpha(
                self.radius,
                self.rho,
                self.mu,
                self.alpha,
                modes.clone(),
                self.reynolds,
            ),
            None => {
                let mut p = default_params(self.alpha)?;
                p.radius = self.radius;
                p.rho = self.rho;
                p.mu = self.mu;
                p.reynolds = self.reynolds;
                // rebuild so alpha and frequency stay consistent
                WomersleyParams::from_alpha(
                    self.radius,
                    self.rho,
                    self.mu,
                    self.alpha,
                    p.pressure_modes,
                    self.reynolds,
                )
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionConfig {
    pub bands: Vec<BandConfig>,
    pub attenuation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub t_range: [f64; 2],
    pub x_range: [f64; 2],
}

impl BandConfig {
    pub fn to_band(&self) -> OcclusionBand {
        OcclusionBand {
            t_range: (self.t_range[0], self.t_range[1]),
            x_range: (self.x_range[0], self.x_range[1]),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleImageConfig {
    /// Particles per square pixel.
    pub density: f64,
    pub blob_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    /// Inter-frame time (s).
    pub dt: f64,
    /// Number of image pairs spread over the first period.
    pub pairs: usize,
}

impl Default for ParticleImageConfig {
    fn default() -> Self {
        ParticleImageConfig {
            density: 0.02,
            blob_std: 1.2,
            scale: None,
            dt: 1e-3,
            pairs: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoding: EncodingKind,
    pub activation: Activation,
    pub hidden: usize,
    pub depth: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
    pub branched: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoding: EncodingKind::Rff,
            activation: Activation::LeakyRelu,
            hidden: 256,
            depth: 3,
            dims: None,
            sigmas: None,
            branched: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clean: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noisy: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noisy_baseline: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured_flowrate: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nt: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub lambdas: Vec<f64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            lambdas: vec![1e-10, 1e-8, 1e-6, 1e-5, 1e-4, 1e-2, 1.0],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error(de)
    }

    /// Applies CLI overrides and expands the preset into the dataset section.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, String> {
        if let Some(s) = seed {
            self.seed = Some(s);
        }
        if let Some(o) = out {
            self.out_dir = Some(o);
        }
        if let Some(name) = &self.preset {
            let (params, noise) =
                preset_params(name).map_err(|e| e.to_string())?;
            let mut ds = self.dataset.take().unwrap_or_default();
            if ds.womersley.is_none() {
                ds.womersley = Some(WomersleyConfig {
                    radius: params.radius,
                    rho: params.rho,
                    mu: params.mu,
                    alpha: params.alpha,
                    pressure_modes: Some(params.pressure_modes.clone()),
                    reynolds: params.reynolds,
                });
            }
            if ds.noise.is_none() {
                ds.noise = Some(noise);
            }
            self.dataset = Some(ds);
        }
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Canonical serialization of the resolved config, hashed into manifests.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serialize")
    }
}

fn serde_path_to_error(
    de: &mut serde_json::Deserializer<serde_json::de::StrRead<'_>>,
) -> Result<ExperimentConfig, String> {
    ExperimentConfig::deserialize(de).map_err(|e| format!("config: {e}"))
}
