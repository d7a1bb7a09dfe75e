//! Experiment configuration, schema version 1.

use std::path::{Path, PathBuf};

use dem_core::assembly::{GradientMode, LossConfig, NodalScheme, TractionSpec, VolumeRule};
use dem_core::graph::{EdgeWeighting, Radius};
use dem_core::materials::MaterialModel;
use dem_core::models::{DirichletSpec, NetworkSpec};
use dem_core::reference::OracleSettings;
use dem_core::training::{TrainConfig, LOCALIZATION_THRESHOLD};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub lengths: [f64; 3],
    pub dims: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    #[serde(default = "auto_radius")]
    pub radius: Radius,
    #[serde(default)]
    pub weighting: EdgeWeighting,
}

fn auto_radius() -> Radius {
    Radius::Auto
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { radius: Radius::Auto, weighting: EdgeWeighting::Binary }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub volume: VolumeRule,
    pub nodal: NodalScheme,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub enabled: bool,
    pub settings: OracleSettings,
}

fn default_threshold() -> f64 {
    LOCALIZATION_THRESHOLD
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// One experiment. `seeds` lists the network seeds used by `sweep` and
/// `refine`; `run` uses `network.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub geometry: Geometry,
    pub material: MaterialModel,
    pub network: NetworkSpec,
    #[serde(default)]
    pub graph: GraphConfig,
    pub gradient_mode: GradientMode,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    pub tractions: Vec<TractionSpec>,
    #[serde(default)]
    pub dirichlet: DirichletSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_threshold")]
    pub localization_threshold: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version must be {SCHEMA_VERSION}, got {}", self.schema_version));
        }
        if self.geometry.dims.iter().any(|&d| d < 2) {
            return bad(format!("geometry.dims needs at least 2 nodes per axis, got {:?}", self.geometry.dims));
        }
        if self.geometry.lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad(format!("geometry.lengths must be positive, got {:?}", self.geometry.lengths));
        }
        if self.tractions.is_empty() {
            return bad("tractions must not be empty".into());
        }
        if !(self.localization_threshold > 0.0) {
            return bad(format!("localization_threshold must be positive, got {}", self.localization_threshold));
        }
        self.material.validate().map_err(|e| CliError::Config(format!("material: {e}")))?;
        self.network.validate().map_err(|e| CliError::Config(format!("network: {e}")))?;
        self.train.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            mode: self.gradient_mode,
            material: self.material,
            volume_rule: self.quadrature.volume,
            nodal_scheme: self.quadrature.nodal,
            tractions: self.tractions.clone(),
            dirichlet: self.dirichlet,
        }
    }

    /// Sets the y component of every traction to `load`.
    pub fn with_load(mut self, load: f64) -> Self {
        for t in &mut self.tractions {
            t.traction[1] = load;
        }
        self
    }

    /// Seeds for multi-run commands, falling back to `network.seed`.
    pub fn run_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.network.seed]
        } else {
            self.seeds.clone()
        }
    }
}
