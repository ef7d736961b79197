use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cdm_model::CdmGeometrySpec;
use crate::error::{ForgeError, Result};
use crate::geometry::RigidParams;
use crate::sampler::{FemurSide, SamplingRanges};

use super::phantom::PhantomSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub cols: usize,
    pub rows: usize,
    pub pixel_size_mm: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            cols: 512,
            rows: 512,
            pixel_size_mm: 0.62,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoxelizationConfig {
    /// Spacing of the manipulator-local grid.
    pub cdm_spacing_mm: f64,
    pub padding_mm: f64,
    /// Per-axis supersampling when carving into the CT grid.
    pub supersampling: usize,
}

impl Default for VoxelizationConfig {
    fn default() -> Self {
        Self {
            cdm_spacing_mm: 0.1,
            padding_mm: 0.5,
            supersampling: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Ray-marching step; `None` uses half of each volume's smallest spacing.
    pub step_mm: Option<f64>,
    pub belief_sigma_px: f64,
    /// Incident photon count for quantum noise; `None` renders noise-free.
    pub noise_photons: Option<f64>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            step_mm: None,
            belief_sigma_px: 5.0,
            noise_photons: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialConfig {
    pub mu_water_per_mm: f64,
    pub mu_nitinol_per_mm: f64,
    pub mu_tool_per_mm: f64,
    /// HU written into CT voxels occupied by the manipulator.
    pub drilled_hu: f32,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self {
            mu_water_per_mm: 0.02,
            mu_nitinol_per_mm: 2.2,
            mu_tool_per_mm: 2.8,
            drilled_hu: -1000.0,
        }
    }
}

/// Rigid transforms from manipulator-local to CT-local coordinates, one per femur.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FemurAlignment {
    pub left: RigidParams,
    pub right: RigidParams,
}

impl FemurAlignment {
    pub fn for_side(&self, side: FemurSide) -> &RigidParams {
        match side {
            FemurSide::Left => &self.left,
            FemurSide::Right => &self.right,
        }
    }
}

/// Single JSON document driving the whole pipeline. Units are mm and degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub cdm: CdmGeometrySpec,
    pub detector: DetectorConfig,
    pub ranges: SamplingRanges,
    pub voxelization: VoxelizationConfig,
    pub render: RenderConfig,
    pub materials: MaterialConfig,
    pub samples_per_femur: u32,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    /// Fraction of failed samples above which generation reports failure.
    pub max_failure_rate: f64,
    pub write_previews: bool,
    /// Per-CT alignment overrides, keyed by CT id. CTs without an entry fall back to
    /// the alignment stored in their header.
    pub alignments: BTreeMap<String, FemurAlignment>,
    pub phantom: PhantomSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cdm: CdmGeometrySpec::default(),
            detector: DetectorConfig::default(),
            ranges: SamplingRanges::default(),
            voxelization: VoxelizationConfig::default(),
            render: RenderConfig::default(),
            materials: MaterialConfig::default(),
            samples_per_femur: 1000,
            workers: 0,
            max_failure_rate: 0.01,
            write_previews: false,
            alignments: BTreeMap::new(),
            phantom: PhantomSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ForgeError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ForgeError::io(format!("reading config {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(ForgeError::Config(m));
        self.cdm
            .validate()
            .map_err(|e| ForgeError::Config(format!("cdm: {e}")))?;
        self.ranges.validate()?;
        self.phantom.validate()?;
        let d = &self.detector;
        if d.cols == 0 || d.rows == 0 || !(d.pixel_size_mm > 0.0 && d.pixel_size_mm.is_finite()) {
            return cfg_err("detector needs positive cols, rows and pixel_size_mm".into());
        }
        let v = &self.voxelization;
        if !(v.cdm_spacing_mm > 0.0 && v.cdm_spacing_mm.is_finite()) || !(v.padding_mm >= 0.0) {
            return cfg_err("voxelization spacing must be > 0 and padding >= 0".into());
        }
        if v.supersampling == 0 || v.supersampling > 8 {
            return cfg_err("voxelization.supersampling must be in 1..=8".into());
        }
        let r = &self.render;
        if let Some(s) = r.step_mm {
            if !(s > 0.0 && s.is_finite()) {
                return cfg_err(format!("render.step_mm must be > 0, got {s}"));
            }
        }
        if !(r.belief_sigma_px > 0.0 && r.belief_sigma_px.is_finite()) {
            return cfg_err("render.belief_sigma_px must be > 0".into());
        }
        if let Some(n) = r.noise_photons {
            if !(n > 0.0 && n.is_finite()) {
                return cfg_err("render.noise_photons must be > 0".into());
            }
        }
        let m = &self.materials;
        for (name, mu) in [
            ("mu_water_per_mm", m.mu_water_per_mm),
            ("mu_nitinol_per_mm", m.mu_nitinol_per_mm),
            ("mu_tool_per_mm", m.mu_tool_per_mm),
        ] {
            if !(mu >= 0.0 && mu.is_finite()) {
                return cfg_err(format!("materials.{name} must be >= 0"));
            }
        }
        if self.samples_per_femur == 0 {
            return cfg_err("samples_per_femur must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return cfg_err("max_failure_rate must lie in [0, 1]".into());
        }
        for (id, a) in &self.alignments {
            for p in [&a.left, &a.right] {
                p.to_transform()
                    .map_err(|e| ForgeError::Config(format!("alignment for {id}: {e}")))?;
            }
        }
        Ok(())
    }

    /// The config with settings that cannot change the output (thread count) reset.
    pub fn normalized(&self) -> Self {
        Self {
            workers: 0,
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical JSON of [`normalized`](Self::normalized), hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.normalized()).expect("config serializes");
        hex_digest(&bytes)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
