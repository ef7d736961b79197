//! Synthetic lower-limb CT used when patient data is not available.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::geometry::{RigidParams, Vec3};
use crate::sampler::FemurSide;
use crate::volume::{GridSpec, VolumeKind, VoxelVolume};

use super::config::FemurAlignment;

/// Soft-tissue ellipsoid with two vertical bone tubes, centered on the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: f64,
    pub air_hu: f32,
    pub soft_tissue_hu: f32,
    pub cortical_hu: f32,
    pub trabecular_hu: f32,
    pub soft_tissue_semi_axes_mm: [f64; 3],
    /// Distance of each bone axis from the midline along x.
    pub bone_offset_x_mm: f64,
    pub bone_outer_diameter_mm: f64,
    pub bone_wall_mm: f64,
    pub bone_half_length_mm: f64,
    /// Height above the grid center of the manipulator's proximal landmark in the
    /// default alignment. The manipulator points down the bone axis (-z).
    pub insertion_height_mm: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [200, 140, 250],
            spacing_mm: 1.0,
            air_hu: -1000.0,
            soft_tissue_hu: 40.0,
            cortical_hu: 1200.0,
            trabecular_hu: 200.0,
            soft_tissue_semi_axes_mm: [95.0, 65.0, 120.0],
            bone_offset_x_mm: 25.0,
            bone_outer_diameter_mm: 30.0,
            bone_wall_mm: 5.0,
            bone_half_length_mm: 60.0,
            insertion_height_mm: 13.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ForgeError::Config(format!("phantom: {m}")));
        if self.dims.contains(&0) || !(self.spacing_mm > 0.0 && self.spacing_mm.is_finite()) {
            return bad("dims and spacing must be positive");
        }
        if self.soft_tissue_semi_axes_mm.iter().any(|&a| !(a > 0.0)) {
            return bad("soft tissue semi-axes must be positive");
        }
        let r = self.bone_outer_diameter_mm / 2.0;
        if !(r > 0.0 && self.bone_wall_mm > 0.0 && self.bone_wall_mm < r && self.bone_half_length_mm > 0.0) {
            return bad("bone tube needs 0 < wall < radius and a positive length");
        }
        if self.bone_offset_x_mm < r {
            return bad("bone tubes overlap at the midline");
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let s = self.spacing_mm;
        let origin = Vec3::from_fn(|a, _| -((self.dims[a] - 1) as f64) * s / 2.0);
        GridSpec::new(self.dims, Vec3::repeat(s), origin)
    }

    /// Bone axis x position for each femur (left femur on +x).
    pub fn bone_center_x(&self, side: FemurSide) -> f64 {
        match side {
            FemurSide::Left => self.bone_offset_x_mm,
            FemurSide::Right => -self.bone_offset_x_mm,
        }
    }

    /// Manipulator placed on each bone axis, proximal landmark at `insertion_height_mm`,
    /// advancing towards -z.
    pub fn default_alignment(&self) -> FemurAlignment {
        let place = |side| RigidParams {
            rx_deg: 180.0,
            ry_deg: 0.0,
            rz_deg: 0.0,
            t_mm: [self.bone_center_x(side), 0.0, self.insertion_height_mm],
        };
        FemurAlignment {
            left: place(FemurSide::Left),
            right: place(FemurSide::Right),
        }
    }

    /// HU at a CT-local point (grid center at the origin).
    pub fn hu_at(&self, p: &Vec3) -> f32 {
        let [ax, ay, az] = self.soft_tissue_semi_axes_mm;
        let r_out = self.bone_outer_diameter_mm / 2.0;
        let r_in = r_out - self.bone_wall_mm;
        if p.z.abs() <= self.bone_half_length_mm {
            for side in FemurSide::BOTH {
                let d = (p.x - self.bone_center_x(side)).hypot(p.y);
                if d <= r_in {
                    return self.trabecular_hu;
                }
                if d <= r_out {
                    return self.cortical_hu;
                }
            }
        }
        if (p.x / ax).powi(2) + (p.y / ay).powi(2) + (p.z / az).powi(2) <= 1.0 {
            self.soft_tissue_hu
        } else {
            self.air_hu
        }
    }
}

/// Renders the phantom by classifying voxel centers.
pub fn make_phantom_ct(spec: &PhantomSpec) -> Result<VoxelVolume> {
    spec.validate()?;
    let grid = spec.grid()?;
    let [nx, ny, _] = grid.dims;
    let mut values = vec![0f32; grid.len()];
    values.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            for i in 0..nx {
                slab[i + nx * j] = spec.hu_at(&grid.voxel_center(i, j, k));
            }
        }
    });
    VoxelVolume::new(grid, VolumeKind::Hu, values)
}
