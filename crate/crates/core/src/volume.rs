//! Axis-aligned scalar voxel grids.

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::geometry::Vec3;

/// What the voxel values mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeKind {
    /// Hounsfield units.
    Hu,
    /// Binary occupancy, values in {0, 1}.
    Occupancy,
    /// Linear attenuation coefficient in 1/mm.
    Attenuation,
}

impl std::fmt::Display for VolumeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VolumeKind::Hu => "hu",
            VolumeKind::Occupancy => "occupancy",
            VolumeKind::Attenuation => "attenuation",
        })
    }
}

/// Grid layout: `origin_mm` is the center of voxel (0, 0, 0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing_mm: Vec3,
    pub origin_mm: Vec3,
}

impl GridSpec {
    pub fn new(dims: [usize; 3], spacing_mm: Vec3, origin_mm: Vec3) -> Result<Self> {
        let g = Self {
            dims,
            spacing_mm,
            origin_mm,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(ForgeError::InvalidArgument(format!("empty grid dims {:?}", self.dims)));
        }
        if !self.spacing_mm.iter().all(|s| s.is_finite() && *s > 0.0) || !self.origin_mm.iter().all(|o| o.is_finite()) {
            return Err(ForgeError::InvalidArgument(format!(
                "grid spacing must be positive and finite, got {:?}",
                self.spacing_mm
            )));
        }
        Ok(())
    }

    /// Smallest grid of the given isotropic spacing covering `[lo - pad, hi + pad]`,
    /// with voxel faces on the padded box's lower corner.
    pub fn bounding(lo: Vec3, hi: Vec3, spacing_mm: f64, padding_mm: f64) -> Result<Self> {
        if !(spacing_mm > 0.0) || !(padding_mm >= 0.0) {
            return Err(ForgeError::InvalidArgument(format!(
                "spacing must be > 0 and padding >= 0, got {spacing_mm} / {padding_mm}"
            )));
        }
        let lo = lo.add_scalar(-padding_mm);
        let extent = hi.add_scalar(padding_mm) - lo;
        let dims = std::array::from_fn(|i| ((extent[i] / spacing_mm - 1e-9).ceil() as usize).max(1));
        Self::new(dims, Vec3::repeat(spacing_mm), lo.add_scalar(spacing_mm / 2.0))
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index, x fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin_mm + Vec3::new(i as f64, j as f64, k as f64).component_mul(&self.spacing_mm)
    }

    /// Continuous voxel-index coordinates of a local point.
    #[inline]
    pub fn to_index_coords(&self, p: &Vec3) -> Vec3 {
        (p - self.origin_mm).component_div(&self.spacing_mm)
    }

    /// Outer faces of the voxel grid.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let half = self.spacing_mm / 2.0;
        let last = Vec3::new(
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        );
        (
            self.origin_mm - half,
            self.origin_mm + last.component_mul(&self.spacing_mm) + half,
        )
    }

    pub fn center(&self) -> Vec3 {
        let (lo, hi) = self.bounds();
        (lo + hi) / 2.0
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing_mm.min()
    }

    pub fn same_as(&self, other: &GridSpec, tol: f64) -> bool {
        self.dims == other.dims
            && (self.spacing_mm - other.spacing_mm).amax() <= tol
            && (self.origin_mm - other.origin_mm).amax() <= tol
    }
}

/// Scalar volume on a [`GridSpec`], values stored x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelVolume {
    pub grid: GridSpec,
    pub kind: VolumeKind,
    pub values: Vec<f32>,
}

impl VoxelVolume {
    pub fn new(grid: GridSpec, kind: VolumeKind, values: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(ForgeError::DimensionMismatch(format!(
                "{} values for dims {:?}",
                values.len(),
                grid.dims
            )));
        }
        if kind == VolumeKind::Occupancy && values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(ForgeError::InvalidArgument(
                "occupancy volume holds values outside {0,1}".into(),
            ));
        }
        Ok(Self { grid, kind, values })
    }

    pub fn filled(grid: GridSpec, kind: VolumeKind, value: f32) -> Self {
        Self {
            values: vec![value; grid.len()],
            grid,
            kind,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.grid.index(i, j, k)]
    }

    pub fn expect_kind(&self, kind: VolumeKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(ForgeError::WrongKind {
                expected: kind.to_string(),
                actual: self.kind.to_string(),
            })
        }
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    /// Trilinear interpolation at continuous index coordinates, clamped to the grid.
    #[inline]
    pub fn sample_trilinear(&self, idx: &Vec3) -> f64 {
        let d = self.grid.dims;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let max = (d[a] - 1) as f64;
            let c = idx[a].clamp(0.0, max);
            let f = c.floor();
            let b = (f as usize).min(d[a].saturating_sub(2));
            base[a] = b;
            frac[a] = if d[a] == 1 { 0.0 } else { c - b as f64 };
        }
        let step = [
            usize::from(d[0] > 1),
            if d[1] > 1 { d[0] } else { 0 },
            if d[2] > 1 { d[0] * d[1] } else { 0 },
        ];
        let i0 = self.grid.index(base[0], base[1], base[2]);
        let v = |o: usize| self.values[i0 + o] as f64;
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        let c00 = v(0) * (1.0 - fx) + v(step[0]) * fx;
        let c10 = v(step[1]) * (1.0 - fx) + v(step[1] + step[0]) * fx;
        let c01 = v(step[2]) * (1.0 - fx) + v(step[2] + step[0]) * fx;
        let c11 = v(step[2] + step[1]) * (1.0 - fx) + v(step[2] + step[1] + step[0]) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }
}
