//! Line-integral DRR rendering and 2D ground truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cdm_model::CdmKinematics;
use crate::error::{ForgeError, Result};
use crate::geometry::{CameraPose, ProjectionGeometry, RigidTransform, Vec3};
use crate::volume::{VolumeKind, VoxelVolume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    LineIntegral,
    Normalized,
    Probability,
    Mask,
}

/// Row-major detector image; `values[row * cols + col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    pub cols: usize,
    pub rows: usize,
    pub pixel_size_mm: f64,
    pub kind: ImageKind,
    pub values: Vec<f64>,
}

impl Image2D {
    pub fn new(cols: usize, rows: usize, pixel_size_mm: f64, kind: ImageKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != cols * rows {
            return Err(ForgeError::DimensionMismatch(format!(
                "{} values for a {cols}x{rows} image",
                values.len()
            )));
        }
        Ok(Self {
            cols,
            rows,
            pixel_size_mm,
            kind,
            values,
        })
    }

    pub fn zeros(cols: usize, rows: usize, pixel_size_mm: f64, kind: ImageKind) -> Self {
        Self {
            cols,
            rows,
            pixel_size_mm,
            kind,
            values: vec![0.0; cols * rows],
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn same_shape(&self, other: &Image2D) -> bool {
        self.cols == other.cols && self.rows == other.rows
    }

    /// Position `(col, row)` of the global maximum; ties go to the lowest row, then column.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| (i % self.cols, i / self.cols))
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Gaussian belief-map parameters; the peak amplitude is fixed at 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeliefMapParams {
    pub sigma_px: f64,
}

impl Default for BeliefMapParams {
    fn default() -> Self {
        Self { sigma_px: 5.0 }
    }
}

/// A volume placed in the world: `pose` maps volume-local mm to world mm.
#[derive(Clone, Copy, Debug)]
pub struct PosedVolume<'a> {
    pub volume: &'a VoxelVolume,
    pub pose: RigidTransform,
}

impl<'a> PosedVolume<'a> {
    pub fn new(volume: &'a VoxelVolume, pose: RigidTransform) -> Self {
        Self { volume, pose }
    }
}

/// Per-volume data for marching in voxel-index space.
struct RayTarget<'a> {
    volume: &'a VoxelVolume,
    inv: RigidTransform,
    lo: Vec3,
    hi: Vec3,
    step: f64,
}

impl<'a> RayTarget<'a> {
    fn new(pv: &PosedVolume<'a>, step_mm: Option<f64>) -> Result<Self> {
        let step = step_mm.unwrap_or(pv.volume.grid.min_spacing() / 2.0);
        if !(step > 0.0 && step.is_finite()) {
            return Err(ForgeError::InvalidArgument(format!("step_mm must be > 0, got {step}")));
        }
        let (lo, hi) = pv.volume.grid.bounds();
        Ok(Self {
            volume: pv.volume,
            inv: pv.pose.inverse(),
            lo,
            hi,
            step,
        })
    }

    /// `∫ value ds` along the world ray `origin + t * dir` (`dir` unit, `t >= 0`).
    fn integrate(&self, origin: &Vec3, dir: &Vec3) -> f64 {
        let o = self.inv.apply_point(origin);
        let d = self.inv.apply_vector(dir);
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.lo[a] || o[a] > self.hi[a] {
                    return 0.0;
                }
            } else {
                let ta = (self.lo[a] - o[a]) / d[a];
                let tb = (self.hi[a] - o[a]) / d[a];
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        let length = t1 - t0;
        if !(length > 0.0) {
            return 0.0;
        }
        let n = (length / self.step).ceil().max(1.0) as usize;
        let dt = length / n as f64;
        let grid = &self.volume.grid;
        let idx_o = grid.to_index_coords(&o);
        let idx_d = d.component_div(&grid.spacing_mm);
        let mut sum = 0.0;
        for k in 0..n {
            let t = t0 + (k as f64 + 0.5) * dt;
            sum += self.volume.sample_trilinear(&(idx_o + idx_d * t));
        }
        sum * dt
    }
}

fn render<F>(cam: &CameraPose, g: &ProjectionGeometry, kind: ImageKind, pixel: F) -> Result<Image2D>
where
    F: Fn(&Vec3, &Vec3) -> f64 + Sync,
{
    g.validate()?;
    let cols = g.detector_cols;
    let mut values = vec![0.0; cols * g.detector_rows];
    values.par_chunks_mut(cols).enumerate().for_each(|(row, out)| {
        for (col, v) in out.iter_mut().enumerate() {
            let target = cam.pixel_position(g, col as f64, row as f64);
            let dir = (target - cam.source_position).normalize();
            *v = pixel(&cam.source_position, &dir);
        }
    });
    Image2D::new(cols, g.detector_rows, g.pixel_size_mm, kind, values)
}

/// Sums `∫ mu ds` over all volumes for every detector pixel.
///
/// Each volume is clipped exactly to its voxel-face box; inside, the ray is cut into
/// equal sub-steps no longer than `step_mm` (default: half the volume's smallest
/// spacing) and the attenuation is sampled trilinearly at sub-step midpoints.
pub fn raycast_line_integrals(
    vols: &[PosedVolume<'_>],
    cam: &CameraPose,
    g: &ProjectionGeometry,
    step_mm: Option<f64>,
) -> Result<Image2D> {
    let targets = vols
        .iter()
        .map(|pv| {
            pv.volume.expect_kind(VolumeKind::Attenuation)?;
            RayTarget::new(pv, step_mm)
        })
        .collect::<Result<Vec<_>>>()?;
    render(cam, g, ImageKind::LineIntegral, |o, d| {
        targets.iter().map(|t| t.integrate(o, d)).sum()
    })
}

/// Binary silhouette: 1 wherever the ray's occupancy path length is positive.
pub fn project_mask(
    occ: &PosedVolume<'_>,
    cam: &CameraPose,
    g: &ProjectionGeometry,
    step_mm: Option<f64>,
) -> Result<Image2D> {
    occ.volume.expect_kind(VolumeKind::Occupancy)?;
    let target = RayTarget::new(occ, step_mm)?;
    render(cam, g, ImageKind::Mask, |o, d| {
        if target.integrate(o, d) > 0.0 {
            1.0
        } else {
            0.0
        }
    })
}

/// Occupancy path length per pixel (mm), for diagnostics and support checks.
pub fn path_lengths(
    occ: &PosedVolume<'_>,
    cam: &CameraPose,
    g: &ProjectionGeometry,
    step_mm: Option<f64>,
) -> Result<Image2D> {
    occ.volume.expect_kind(VolumeKind::Occupancy)?;
    let target = RayTarget::new(occ, step_mm)?;
    render(cam, g, ImageKind::LineIntegral, |o, d| target.integrate(o, d))
}

/// Projects the proximal and distal landmarks (in that order) to pixel coordinates.
pub fn render_landmarks(
    model: &CdmKinematics,
    pose: &RigidTransform,
    cam: &CameraPose,
    g: &ProjectionGeometry,
) -> Result<[[f64; 2]; 2]> {
    Ok([
        cam.project(g, &pose.apply_point(&model.landmark_proximal))?,
        cam.project(g, &pose.apply_point(&model.landmark_distal))?,
    ])
}

/// Unnormalized Gaussian `exp(-r^2 / (2 sigma^2))` around `pt = (u, v)`.
pub fn belief_map(pt: [f64; 2], params: &BeliefMapParams, cols: usize, rows: usize) -> Result<Image2D> {
    if !(params.sigma_px > 0.0 && params.sigma_px.is_finite()) {
        return Err(ForgeError::InvalidArgument(format!(
            "sigma must be > 0, got {}",
            params.sigma_px
        )));
    }
    if !pt.iter().all(|v| v.is_finite()) {
        return Err(ForgeError::InvalidArgument(format!("non-finite landmark {pt:?}")));
    }
    let inv = 1.0 / (2.0 * params.sigma_px * params.sigma_px);
    let gx: Vec<f64> = (0..cols).map(|x| (-(x as f64 - pt[0]).powi(2) * inv).exp()).collect();
    let mut values = Vec::with_capacity(cols * rows);
    for y in 0..rows {
        let gy = (-(y as f64 - pt[1]).powi(2) * inv).exp();
        values.extend(gx.iter().map(|&a| a * gy));
    }
    Image2D::new(cols, rows, 0.0, ImageKind::Probability, values)
}

/// Maps line integrals affinely to `[-1, 1]`; a constant image maps to zeros.
pub fn normalize_line_integrals(img: &Image2D) -> Result<(Image2D, f64, f64)> {
    if img.kind != ImageKind::LineIntegral {
        return Err(ForgeError::InvalidArgument(format!(
            "normalization expects a line-integral image, got {:?}",
            img.kind
        )));
    }
    let (min, max) = img.min_max();
    let values = if max > min {
        let scale = 2.0 / (max - min);
        img.values.iter().map(|&p| (p - min) * scale - 1.0).collect()
    } else {
        vec![0.0; img.values.len()]
    };
    Ok((
        Image2D {
            cols: img.cols,
            rows: img.rows,
            pixel_size_mm: img.pixel_size_mm,
            kind: ImageKind::Normalized,
            values,
        },
        min,
        max,
    ))
}

/// Quantum noise: `p' = -ln(max(Poisson(N0 e^-p), 1) / N0)`, deterministic in `seed`.
pub fn add_poisson_noise(img: &Image2D, photons_n0: f64, seed: u64) -> Result<Image2D> {
    if img.kind != ImageKind::LineIntegral {
        return Err(ForgeError::InvalidArgument(
            "noise expects a line-integral image".into(),
        ));
    }
    if !(photons_n0 > 0.0 && photons_n0.is_finite()) {
        return Err(ForgeError::InvalidArgument(format!(
            "photon count must be > 0, got {photons_n0}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = img
        .values
        .iter()
        .map(|&p| {
            let lambda = photons_n0 * (-p).exp();
            let count = match Poisson::new(lambda) {
                Ok(dist) => dist.sample(&mut rng),
                Err(_) => 0.0,
            };
            -(count.max(1.0) / photons_n0).ln()
        })
        .collect();
    Image2D::new(img.cols, img.rows, img.pixel_size_mm, ImageKind::LineIntegral, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::camera_from_orbit;
    use crate::volume::GridSpec;

    fn small_geom() -> ProjectionGeometry {
        ProjectionGeometry::new(1200.0, 450.0, 0.0, 90.0, 64, 64, 2.0).unwrap()
    }

    fn uniform_cube(mu: f32, side: f64, n: usize) -> VoxelVolume {
        let s = side / n as f64;
        let g = GridSpec::new([n; 3], Vec3::repeat(s), Vec3::repeat(-side / 2.0 + s / 2.0)).unwrap();
        VoxelVolume::filled(g, VolumeKind::Attenuation, mu)
    }

    #[test]
    fn vacuum_renders_zero() {
        let g = small_geom();
        let cam = camera_from_orbit(&g).unwrap();
        let v = uniform_cube(0.0, 10.0, 4);
        let img = raycast_line_integrals(&[PosedVolume::new(&v, RigidTransform::identity())], &cam, &g, None).unwrap();
        assert!(img.values.iter().all(|&p| p == 0.0));
        let img = raycast_line_integrals(&[], &cam, &g, None).unwrap();
        assert!(img.values.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn central_ray_through_cube() {
        let g = ProjectionGeometry::new(1200.0, 450.0, 0.0, 90.0, 65, 65, 1.0).unwrap();
        let cam = camera_from_orbit(&g).unwrap();
        let v = uniform_cube(0.02, 50.0, 50);
        let img = raycast_line_integrals(&[PosedVolume::new(&v, RigidTransform::identity())], &cam, &g, None).unwrap();
        let p = img.get(32, 32);
        assert!((p - 1.0).abs() < 0.01, "{p}");
    }

    #[test]
    fn wrong_kind_rejected() {
        let g = small_geom();
        let cam = camera_from_orbit(&g).unwrap();
        let mut v = uniform_cube(1.0, 10.0, 4);
        v.kind = VolumeKind::Hu;
        assert!(raycast_line_integrals(&[PosedVolume::new(&v, RigidTransform::identity())], &cam, &g, None).is_err());
        assert!(
            raycast_line_integrals(&[PosedVolume::new(&v, RigidTransform::identity())], &cam, &g, Some(0.0)).is_err()
        );
    }

    #[test]
    fn mask_of_empty_occupancy() {
        let g = small_geom();
        let cam = camera_from_orbit(&g).unwrap();
        let grid = GridSpec::new([4, 4, 4], Vec3::repeat(1.0), Vec3::zeros()).unwrap();
        let occ = VoxelVolume::filled(grid, VolumeKind::Occupancy, 0.0);
        let m = project_mask(&PosedVolume::new(&occ, RigidTransform::identity()), &cam, &g, None).unwrap();
        assert_eq!(m.count_nonzero(), 0);
    }

    #[test]
    fn belief_map_values() {
        let b = belief_map([256.0, 256.0], &BeliefMapParams::default(), 512, 512).unwrap();
        assert_eq!(b.get(256, 256), 1.0);
        assert!((b.get(261, 256) - (-0.5f64).exp()).abs() < 1e-12);
        assert_eq!(b.argmax(), Some((256, 256)));
        let far = belief_map([-100.0, 900.0], &BeliefMapParams::default(), 512, 512).unwrap();
        assert!(far.values.iter().all(|&v| v < 1.0));
        assert!(belief_map([0.0, 0.0], &BeliefMapParams { sigma_px: 0.0 }, 4, 4).is_err());
    }

    #[test]
    fn belief_map_integral() {
        let b = belief_map([256.0, 256.0], &BeliefMapParams::default(), 512, 512).unwrap();
        let sum: f64 = b.values.iter().sum();
        let exact = 2.0 * std::f64::consts::PI * 25.0;
        assert!((sum - exact).abs() / exact < 0.01);
    }

    #[test]
    fn normalization_cases() {
        let img = Image2D::new(3, 1, 1.0, ImageKind::LineIntegral, vec![0.0, 1.0, 2.0]).unwrap();
        let (n, lo, hi) = normalize_line_integrals(&img).unwrap();
        assert_eq!(n.values, vec![-1.0, 0.0, 1.0]);
        assert_eq!((lo, hi), (0.0, 2.0));
        assert_eq!(n.kind, ImageKind::Normalized);

        let c = Image2D::new(2, 2, 1.0, ImageKind::LineIntegral, vec![5.0; 4]).unwrap();
        let (n, lo, hi) = normalize_line_integrals(&c).unwrap();
        assert!(n.values.iter().all(|&v| v == 0.0));
        assert_eq!((lo, hi), (5.0, 5.0));
        assert!(normalize_line_integrals(&n).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let img = Image2D::new(8, 8, 1.0, ImageKind::LineIntegral, vec![1.0; 64]).unwrap();
        let a = add_poisson_noise(&img, 1e4, 7).unwrap();
        let b = add_poisson_noise(&img, 1e4, 7).unwrap();
        let c = add_poisson_noise(&img, 1e4, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(add_poisson_noise(&img, 0.0, 1).is_err());
    }

    #[test]
    fn argmax_tie_breaking() {
        let img = Image2D::new(3, 2, 1.0, ImageKind::Probability, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(img.argmax(), Some((1, 0)));
    }
}
