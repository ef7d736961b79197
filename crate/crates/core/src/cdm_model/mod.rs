//! Shape model of the notched continuum manipulator.
//!
//! The bend of each of the 26 notches comes from a natural cubic spline through
//! five control angles spread evenly along the manipulator. Links are rigid and
//! every notch bends about its local x axis, so the manipulator stays in the
//! local y-z plane.
//!
//! Local frame: the base / first-notch interface is the origin, the straight
//! manipulator points along `+z`, the base and shaft extend along `-z`.

pub mod mesh;
pub mod spline;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::geometry::{rotation_x_deg, RigidTransform, Vec3};
use mesh::{sweep, Profile, TriMesh};
use spline::NaturalCubicSpline;

pub const NOTCH_COUNT: usize = 26;
pub const CONTROL_POINTS: usize = 5;

/// Five control angles (degrees) placed at `s = 0, 0.25, 0.5, 0.75, 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdmShape {
    pub control_angles_deg: [f64; CONTROL_POINTS],
}

impl CdmShape {
    pub fn new(control_angles_deg: [f64; CONTROL_POINTS]) -> Result<Self> {
        let s = Self { control_angles_deg };
        s.validate()?;
        Ok(s)
    }

    pub fn straight() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.control_angles_deg.iter().all(|a| a.is_finite()) {
            Ok(())
        } else {
            Err(ForgeError::InvalidArgument(format!(
                "non-finite control angles {:?}",
                self.control_angles_deg
            )))
        }
    }

    pub fn mirrored(&self) -> Self {
        Self {
            control_angles_deg: self.control_angles_deg.map(|a| -a),
        }
    }
}

/// Where along the normalized arc the spline is sampled for notch `j` (1-based).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotchAbscissae {
    /// `s_j = (j - 0.5) / 26`
    #[default]
    Midpoint,
    /// `s_j = (j - 1) / 25`
    Endpoints,
}

impl NotchAbscissae {
    pub fn positions(&self) -> [f64; NOTCH_COUNT] {
        std::array::from_fn(|i| match self {
            NotchAbscissae::Midpoint => (i as f64 + 0.5) / NOTCH_COUNT as f64,
            NotchAbscissae::Endpoints => i as f64 / (NOTCH_COUNT - 1) as f64,
        })
    }
}

/// Physical dimensions of the manipulator and its inserted tool (mm).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdmGeometrySpec {
    pub outer_diameter_mm: f64,
    pub channel_diameter_mm: f64,
    pub notch_count: usize,
    pub notch_pitch_mm: f64,
    pub base_length_mm: f64,
    pub shaft_length_mm: f64,
    pub tool_diameter_mm: f64,
    /// Notch depth measured from the outer surface, as a fraction of the outer diameter.
    pub notch_depth_fraction: f64,
    pub notch_width_mm: f64,
    pub abscissae: NotchAbscissae,
    /// Tessellation of a full circle.
    pub segments_per_turn: usize,
}

impl Default for CdmGeometrySpec {
    fn default() -> Self {
        Self {
            outer_diameter_mm: 6.0,
            channel_diameter_mm: 4.0,
            notch_count: NOTCH_COUNT,
            notch_pitch_mm: 1.0,
            base_length_mm: 4.0,
            shaft_length_mm: 16.0,
            tool_diameter_mm: 3.0,
            notch_depth_fraction: 0.6,
            notch_width_mm: 0.4,
            abscissae: NotchAbscissae::Midpoint,
            segments_per_turn: 48,
        }
    }
}

impl CdmGeometrySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ForgeError::InvalidArgument(m));
        if self.notch_count != NOTCH_COUNT {
            return bad(format!("notch_count must be {NOTCH_COUNT}, got {}", self.notch_count));
        }
        let lengths = [
            ("outer_diameter_mm", self.outer_diameter_mm),
            ("channel_diameter_mm", self.channel_diameter_mm),
            ("notch_pitch_mm", self.notch_pitch_mm),
            ("base_length_mm", self.base_length_mm),
            ("shaft_length_mm", self.shaft_length_mm),
            ("tool_diameter_mm", self.tool_diameter_mm),
            ("notch_width_mm", self.notch_width_mm),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.channel_diameter_mm >= self.outer_diameter_mm {
            return bad("channel diameter must be smaller than the outer diameter".into());
        }
        if self.tool_diameter_mm >= self.channel_diameter_mm {
            return bad("tool diameter must be smaller than the channel diameter".into());
        }
        if self.notch_width_mm >= self.notch_pitch_mm {
            return bad("notch width must be smaller than the notch pitch".into());
        }
        let cut = self.notch_cut_offset_mm();
        let r_in = self.channel_diameter_mm / 2.0;
        if !(cut.abs() < r_in) {
            return bad(format!(
                "notch depth fraction {} puts the cut plane outside the channel (offset {cut} mm)",
                self.notch_depth_fraction
            ));
        }
        if self.segments_per_turn < 8 {
            return bad("segments_per_turn must be at least 8".into());
        }
        Ok(())
    }

    /// Signed offset of the notch floor from the tube axis, towards the notched side.
    pub fn notch_cut_offset_mm(&self) -> f64 {
        self.outer_diameter_mm / 2.0 - self.notch_depth_fraction * self.outer_diameter_mm
    }

    pub fn active_length_mm(&self) -> f64 {
        self.notch_pitch_mm * NOTCH_COUNT as f64
    }
}

/// Evaluates the control-angle spline at the 26 notch positions (degrees).
pub fn spline_joint_angles(shape: &CdmShape, abscissae: NotchAbscissae) -> Result<[f64; NOTCH_COUNT]> {
    shape.validate()?;
    let knots: [f64; CONTROL_POINTS] = std::array::from_fn(|i| i as f64 / (CONTROL_POINTS - 1) as f64);
    let spline = NaturalCubicSpline::new(&knots, &shape.control_angles_deg)?;
    Ok(abscissae.positions().map(|s| spline.eval(s)))
}

/// Notch frames, centerline and landmarks in manipulator-local coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct CdmKinematics {
    pub joint_angles_deg: [f64; NOTCH_COUNT],
    /// Base interface followed by one frame per notch.
    pub notch_frames: Vec<RigidTransform>,
    pub centerline: Vec<Vec3>,
    /// Middle of the base / first-notch interface.
    pub landmark_proximal: Vec3,
    /// Center of the distal plane of the last notch.
    pub landmark_distal: Vec3,
}

/// Chains `F_j = F_{j-1} * Trans(0, 0, pitch) * Rot_x(phi_j)` from `F_0 = I`.
pub fn forward_kinematics(shape: &CdmShape, spec: &CdmGeometrySpec) -> Result<CdmKinematics> {
    spec.validate()?;
    let joint_angles_deg = spline_joint_angles(shape, spec.abscissae)?;
    let step = RigidTransform::from_translation(Vec3::new(0.0, 0.0, spec.notch_pitch_mm));
    let mut frames = Vec::with_capacity(NOTCH_COUNT + 1);
    frames.push(RigidTransform::identity());
    for phi in joint_angles_deg {
        let prev = *frames.last().unwrap();
        let bend = RigidTransform::from_rotation(rotation_x_deg(phi));
        frames.push(prev.compose(&step).compose(&bend));
    }
    let centerline: Vec<Vec3> = frames.iter().map(|f| f.translation).collect();
    Ok(CdmKinematics {
        joint_angles_deg,
        landmark_proximal: centerline[0],
        landmark_distal: centerline[NOTCH_COUNT],
        notch_frames: frames,
        centerline,
    })
}

/// Surface meshes of the posed manipulator (manipulator-local coordinates).
#[derive(Clone, Debug)]
pub struct CdmMeshes {
    /// Shaft, base and the 26 notched links.
    pub body: TriMesh,
    /// The notched links only; this is the segmentation target.
    pub notch_region: TriMesh,
    /// Solid tool inside the channel, tip flush with the distal landmark.
    pub tool: TriMesh,
}

/// Kinematics plus meshes.
#[derive(Clone, Debug)]
pub struct CdmPosedModel {
    pub kinematics: CdmKinematics,
    pub meshes: CdmMeshes,
}

impl CdmPosedModel {
    pub fn new(shape: &CdmShape, spec: &CdmGeometrySpec) -> Result<Self> {
        let kinematics = forward_kinematics(shape, spec)?;
        let meshes = meshes_from_kinematics(&kinematics, spec)?;
        Ok(Self { kinematics, meshes })
    }
}

/// Builds body and tool meshes for `shape`.
pub fn build_cdm_meshes(shape: &CdmShape, spec: &CdmGeometrySpec) -> Result<CdmMeshes> {
    let kin = forward_kinematics(shape, spec)?;
    meshes_from_kinematics(&kin, spec)
}

/// Maps profile point `(x, y)` onto the joint plane at the end of a link whose start
/// frame is `frame`. The joint plane bisects the bend, so neighbouring links share it.
fn joint_point(frame: &RigidTransform, x: f64, y: f64, z_base: f64, half_angle_tan: f64) -> Vec3 {
    frame.apply_point(&Vec3::new(x, y, z_base + y * half_angle_tan))
}

fn ring(profile: &Profile, f: impl Fn(f64, f64) -> Vec3) -> Vec<Vec3> {
    profile.points.iter().map(|&(x, y)| f(x, y)).collect()
}

fn meshes_from_kinematics(kin: &CdmKinematics, spec: &CdmGeometrySpec) -> Result<CdmMeshes> {
    spec.validate()?;
    let r_out = spec.outer_diameter_mm / 2.0;
    let r_in = spec.channel_diameter_mm / 2.0;
    let pitch = spec.notch_pitch_mm;
    let seg = spec.segments_per_turn;
    let proximal_z = -(spec.base_length_mm + spec.shaft_length_mm);

    // tan of the half bend at each joint; the base interface and the distal plane are flat.
    let mut half_tan = [0.0; NOTCH_COUNT + 1];
    for j in 1..NOTCH_COUNT {
        let h = kin.joint_angles_deg[j - 1].to_radians() / 2.0;
        if h.abs() >= PI / 4.0 {
            return Err(ForgeError::MeshDegenerate(format!(
                "joint {j} bend {:.3} deg is too large for a mitred sweep",
                kin.joint_angles_deg[j - 1]
            )));
        }
        half_tan[j] = h.tan();
    }

    let notch_lo = (pitch - spec.notch_width_mm) / 2.0;
    let notch_hi = (pitch + spec.notch_width_mm) / 2.0;
    for j in 1..=NOTCH_COUNT {
        let start_reach = r_out * half_tan[j - 1].abs();
        let end_reach = r_out * half_tan[j].abs();
        if start_reach >= notch_lo || pitch - end_reach <= notch_hi {
            return Err(ForgeError::MeshDegenerate(format!(
                "link {j}: joint bends make the wall self-intersect at pitch {pitch} mm"
            )));
        }
    }

    // Straight base + shaft: two half tubes split by the x = 0 plane.
    let mut body = TriMesh::default();
    for center in [0.0, PI] {
        let prof = Profile::annulus_sector(r_out, r_in, center, PI / 2.0, PI / 2.0, seg);
        let rings = [
            ring(&prof, |x, y| Vec3::new(x, y, proximal_z)),
            ring(&prof, |x, y| Vec3::new(x, y, 0.0)),
        ];
        body.append(&sweep(&prof, &rings));
    }

    // Notched links. Link j lives in frame F_{j-1}; its notch alternates between +y and -y.
    let cut = spec.notch_cut_offset_mm();
    let mut notch_region = TriMesh::default();
    for j in 1..=NOTCH_COUNT {
        let frame = kin.notch_frames[j - 1];
        let side = if j % 2 == 1 { PI / 2.0 } else { -PI / 2.0 };
        let notched = Profile::annulus_sector(r_out, r_in, side, (cut / r_out).acos(), (cut / r_in).acos(), seg);
        let spine = Profile::annulus_sector(
            r_out,
            r_in,
            side + PI,
            PI - (cut / r_out).acos(),
            PI - (cut / r_in).acos(),
            seg,
        );
        let (t0, t1) = (half_tan[j - 1], half_tan[j]);
        let start = |x: f64, y: f64| joint_point(&frame, x, y, 0.0, -t0);
        let end = |x: f64, y: f64| joint_point(&frame, x, y, pitch, t1);
        let flat = |z: f64| move |x: f64, y: f64| frame.apply_point(&Vec3::new(x, y, z));

        notch_region.append(&sweep(&spine, &[ring(&spine, start), ring(&spine, end)]));
        notch_region.append(&sweep(
            &notched,
            &[ring(&notched, start), ring(&notched, flat(notch_lo))],
        ));
        notch_region.append(&sweep(&notched, &[ring(&notched, flat(notch_hi)), ring(&notched, end)]));
    }
    body.append(&notch_region);

    // Tool: one swept cylinder from the proximal shaft end to the distal plane.
    let disk = Profile::disk(spec.tool_diameter_mm / 2.0, seg);
    let mut rings = vec![
        ring(&disk, |x, y| Vec3::new(x, y, proximal_z)),
        ring(&disk, |x, y| Vec3::new(x, y, 0.0)),
    ];
    for j in 1..=NOTCH_COUNT {
        let frame = kin.notch_frames[j - 1];
        rings.push(ring(&disk, |x, y| joint_point(&frame, x, y, pitch, half_tan[j])));
    }
    let tool = sweep(&disk, &rings);

    Ok(CdmMeshes {
        body,
        notch_region,
        tool,
    })
}
