//! Rigid transforms and the C-arm projection model.
//!
//! World frame conventions:
//! * the isocenter sits at the world origin,
//! * the patient longitudinal axis is world `+z`,
//! * Euler angles are extrinsic X, then Y, then Z (`R = Rz * Ry * Rx`), in degrees.
//!
//! Detector pixel coordinates address pixel centers, so the detector center maps
//! to `((cols - 1) / 2, (rows - 1) / 2)`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

pub type Vec3 = Vector3<f64>;

/// Name of the Euler convention, recorded in sample metadata.
pub const EULER_CONVENTION: &str = "extrinsic-xyz-deg";

/// A proper rigid motion `p -> R p + t` (mm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self {
            rotation,
            translation: Vec3::zeros(),
        }
    }

    /// Applies `self` after `other`: `(self * other)(p) = self(other(p))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Checks orthonormality and `det = +1` within `tol`.
    pub fn is_proper(&self, tol: f64) -> bool {
        let e = self.rotation.transpose() * self.rotation - Matrix3::identity();
        e.iter().all(|v| v.abs() <= tol) && (self.rotation.determinant() - 1.0).abs() <= tol
    }
}

fn rot_x(rad: f64) -> Matrix3<f64> {
    let (s, c) = rad.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(rad: f64) -> Matrix3<f64> {
    let (s, c) = rad.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(rad: f64) -> Matrix3<f64> {
    let (s, c) = rad.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation about the x axis by `deg` degrees.
pub fn rotation_x_deg(deg: f64) -> Matrix3<f64> {
    rot_x(deg.to_radians())
}

/// Builds `R = Rz(rz) * Ry(ry) * Rx(rx)` with translation `t`.
pub fn rigid_from_euler(rx_deg: f64, ry_deg: f64, rz_deg: f64, t: Vec3) -> Result<RigidTransform> {
    if ![rx_deg, ry_deg, rz_deg].iter().all(|v| v.is_finite()) || !t.iter().all(|v| v.is_finite()) {
        return Err(ForgeError::InvalidArgument(format!(
            "non-finite rigid parameters: angles ({rx_deg}, {ry_deg}, {rz_deg}), translation {t:?}"
        )));
    }
    let rotation = rot_z(rz_deg.to_radians()) * rot_y(ry_deg.to_radians()) * rot_x(rx_deg.to_radians());
    Ok(RigidTransform {
        rotation,
        translation: t,
    })
}

/// Serializable rigid-transform parameters (degrees / mm).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidParams {
    pub rx_deg: f64,
    pub ry_deg: f64,
    pub rz_deg: f64,
    pub t_mm: [f64; 3],
}

impl RigidParams {
    pub fn to_transform(&self) -> Result<RigidTransform> {
        rigid_from_euler(self.rx_deg, self.ry_deg, self.rz_deg, Vec3::from(self.t_mm))
    }
}

/// C-arm acquisition geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionGeometry {
    pub source_to_detector_mm: f64,
    pub source_to_isocenter_mm: f64,
    pub lao_rao_deg: f64,
    pub cran_caud_deg: f64,
    pub detector_cols: usize,
    pub detector_rows: usize,
    pub pixel_size_mm: f64,
}

impl ProjectionGeometry {
    pub fn new(
        source_to_detector_mm: f64,
        source_to_isocenter_mm: f64,
        lao_rao_deg: f64,
        cran_caud_deg: f64,
        detector_cols: usize,
        detector_rows: usize,
        pixel_size_mm: f64,
    ) -> Result<Self> {
        let g = Self {
            source_to_detector_mm,
            source_to_isocenter_mm,
            lao_rao_deg,
            cran_caud_deg,
            detector_cols,
            detector_rows,
            pixel_size_mm,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.source_to_detector_mm,
            self.source_to_isocenter_mm,
            self.lao_rao_deg,
            self.cran_caud_deg,
            self.pixel_size_mm,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(ForgeError::InvalidArgument("non-finite projection geometry".into()));
        }
        if !(self.source_to_isocenter_mm > 0.0 && self.source_to_detector_mm > self.source_to_isocenter_mm) {
            return Err(ForgeError::InvalidArgument(format!(
                "require SDD > SID > 0, got SDD={} SID={}",
                self.source_to_detector_mm, self.source_to_isocenter_mm
            )));
        }
        if self.detector_cols == 0 || self.detector_rows == 0 || !(self.pixel_size_mm > 0.0) {
            return Err(ForgeError::InvalidArgument(format!(
                "detector must be non-empty with positive pixel size, got {}x{} @ {} mm",
                self.detector_cols, self.detector_rows, self.pixel_size_mm
            )));
        }
        Ok(())
    }

    /// Isocenter magnification `SDD / SID`.
    pub fn magnification(&self) -> f64 {
        self.source_to_detector_mm / self.source_to_isocenter_mm
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (
            (self.detector_cols as f64 - 1.0) / 2.0,
            (self.detector_rows as f64 - 1.0) / 2.0,
        )
    }
}

/// Source and detector placement in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub source_position: Vec3,
    pub detector_center: Vec3,
    pub detector_u_axis: Vec3,
    pub detector_v_axis: Vec3,
}

impl CameraPose {
    /// Unit principal ray direction (source towards detector center).
    pub fn view_direction(&self) -> Vec3 {
        (self.detector_center - self.source_position).normalize()
    }

    /// Moves the whole camera by a rigid world transform.
    pub fn transformed(&self, t: &RigidTransform) -> CameraPose {
        CameraPose {
            source_position: t.apply_point(&self.source_position),
            detector_center: t.apply_point(&self.detector_center),
            detector_u_axis: t.apply_vector(&self.detector_u_axis),
            detector_v_axis: t.apply_vector(&self.detector_v_axis),
        }
    }

    /// World position of the center of pixel `(col, row)` (continuous coordinates allowed).
    pub fn pixel_position(&self, g: &ProjectionGeometry, col: f64, row: f64) -> Vec3 {
        let (cu, cv) = g.principal_point();
        self.detector_center
            + self.detector_u_axis * ((col - cu) * g.pixel_size_mm)
            + self.detector_v_axis * ((row - cv) * g.pixel_size_mm)
    }

    /// Perspective projection of a world point to continuous pixel coordinates `(u, v)`.
    pub fn project(&self, g: &ProjectionGeometry, p_world: &Vec3) -> Result<[f64; 2]> {
        let sdd = (self.detector_center - self.source_position).norm();
        let dir = (self.detector_center - self.source_position) / sdd;
        let rel = p_world - self.source_position;
        let depth = rel.dot(&dir);
        if !(depth > 0.0) {
            return Err(ForgeError::BehindSource { depth_mm: depth });
        }
        let on_detector = self.source_position + rel * (sdd / depth);
        let offset = on_detector - self.detector_center;
        let (cu, cv) = g.principal_point();
        Ok([
            offset.dot(&self.detector_u_axis) / g.pixel_size_mm + cu,
            offset.dot(&self.detector_v_axis) / g.pixel_size_mm + cv,
        ])
    }
}

/// Places source and detector for the orbit angles of `g`.
///
/// The source sits at `Rz(lao_rao) * Rx(cran_caud - 90) * (0, -SID, 0)`, so
/// `cran_caud = 90` is the untilted pose. The detector `v` axis is patient `+z`
/// projected onto the detector plane and `u = v x view_direction`.
pub fn camera_from_orbit(g: &ProjectionGeometry) -> Result<CameraPose> {
    g.validate()?;
    let orbit = rot_z(g.lao_rao_deg.to_radians()) * rot_x((g.cran_caud_deg - 90.0).to_radians());
    let source = orbit * Vec3::new(0.0, -g.source_to_isocenter_mm, 0.0);
    let dir = (-source).normalize();
    let detector_center = source + dir * g.source_to_detector_mm;

    let z = Vec3::z();
    let v_raw = z - dir * z.dot(&dir);
    let v_norm = v_raw.norm();
    if v_norm < 1e-9 {
        return Err(ForgeError::DegenerateOrbit {
            cran_caud_deg: g.cran_caud_deg,
        });
    }
    let v = v_raw / v_norm;
    let u = v.cross(&dir);
    Ok(CameraPose {
        source_position: source,
        detector_center,
        detector_u_axis: u,
        detector_v_axis: v,
    })
}

/// Convenience wrapper over [`CameraPose::project`].
pub fn project_point(cam: &CameraPose, g: &ProjectionGeometry, p_world: &Vec3) -> Result<[f64; 2]> {
    cam.project(g, p_world)
}
