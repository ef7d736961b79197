use proptest::prelude::*;

use forge_core::cdm_model::spline::NaturalCubicSpline;
use forge_core::cdm_model::{build_cdm_meshes, forward_kinematics, spline_joint_angles, CdmGeometrySpec, CdmShape};
use forge_core::geometry::{
    camera_from_orbit, rigid_from_euler, rotation_x_deg, ProjectionGeometry, RigidTransform, Vec3,
};
use forge_core::metrics::{dice, extract_landmark, landmark_error_mm};
use forge_core::projector::{
    add_poisson_noise, belief_map, path_lengths, project_mask, raycast_line_integrals, BeliefMapParams, Image2D,
    ImageKind, PosedVolume,
};
use forge_core::sampler::{sample_configuration, FemurSide, SamplingRanges};
use forge_core::voxelizer::{
    carve_drill, compose_material_attenuation, voxelize_on_grid, GridSpec, VolumeKind, VoxelVolume,
};

fn angle() -> impl Strategy<Value = f64> {
    -180.0..180.0f64
}

fn control() -> impl Strategy<Value = [f64; 5]> {
    prop::array::uniform5(-7.9..=7.9f64)
}

fn small_geometry(alpha: f64, beta: f64) -> ProjectionGeometry {
    ProjectionGeometry::new(1200.0, 450.0, alpha, beta, 96, 80, 1.5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn euler_transforms_are_proper_and_invert(rx in angle(), ry in angle(), rz in angle(),
                                              t in prop::array::uniform3(-50.0..50.0f64),
                                              p in prop::array::uniform3(-100.0..100.0f64)) {
        let tr = rigid_from_euler(rx, ry, rz, Vec3::from(t)).unwrap();
        prop_assert!(tr.is_proper(1e-12));
        let p = Vec3::from(p);
        let back = tr.inverse().apply_point(&tr.apply_point(&p));
        prop_assert!((back - p).norm() < 1e-9);
        let id = tr.compose(&tr.inverse());
        prop_assert!((id.rotation - nalgebra::Matrix3::identity()).norm() < 1e-12);
        prop_assert!(id.translation.norm() < 1e-9);
    }

    #[test]
    fn kinematics_rigid_planar_and_mirror_symmetric(c in control()) {
        let spec = CdmGeometrySpec::default();
        let kin = forward_kinematics(&CdmShape::new(c).unwrap(), &spec).unwrap();
        prop_assert_eq!(kin.centerline.len(), 27);
        for w in kin.centerline.windows(2) {
            prop_assert!(((w[1] - w[0]).norm() - spec.notch_pitch_mm).abs() < 1e-9);
        }
        for (p, f) in kin.centerline.iter().zip(&kin.notch_frames) {
            prop_assert!(p.x.abs() < 1e-9);
            prop_assert!((p - f.translation).norm() == 0.0);
        }
        let mirrored = forward_kinematics(&CdmShape::new(c).unwrap().mirrored(), &spec).unwrap();
        for (a, b) in kin.centerline.iter().zip(&mirrored.centerline) {
            prop_assert!((a - Vec3::new(b.x, -b.y, b.z)).norm() < 1e-9);
        }
    }

    #[test]
    fn spline_interpolates_control_values(c in control()) {
        let knots = [0.0, 0.25, 0.5, 0.75, 1.0];
        let s = NaturalCubicSpline::new(&knots, &c).unwrap();
        for (k, v) in knots.iter().zip(c) {
            prop_assert!((s.eval(*k) - v).abs() < 1e-12);
        }
        let angles = spline_joint_angles(&CdmShape::new(c).unwrap(), Default::default()).unwrap();
        prop_assert!(angles.iter().all(|a| a.is_finite()));
    }

    #[test]
    fn orbit_is_periodic_and_equivariant(alpha in 0.0..360.0f64, beta in 75.0..105.0f64,
                                         delta in -180.0..180.0f64,
                                         p in prop::array::uniform3(-60.0..60.0f64)) {
        let g = small_geometry(alpha, beta);
        let cam = camera_from_orbit(&g).unwrap();
        let wrapped = camera_from_orbit(&small_geometry(alpha + 360.0, beta)).unwrap();
        prop_assert!((cam.source_position - wrapped.source_position).norm() < 1e-9);
        prop_assert!((cam.detector_center - wrapped.detector_center).norm() < 1e-9);
        prop_assert!((cam.detector_u_axis - wrapped.detector_u_axis).norm() < 1e-9);
        prop_assert!((cam.detector_v_axis - wrapped.detector_v_axis).norm() < 1e-9);

        let p = Vec3::from(p);
        let t = rigid_from_euler(12.0, -30.0, delta, Vec3::new(5.0, -7.0, 3.0)).unwrap();
        let a = cam.project(&g, &p).unwrap();
        let b = cam.transformed(&t).project(&g, &t.apply_point(&p)).unwrap();
        prop_assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);

        // Rotating the patient about z by delta matches rotating the orbit by delta.
        let spin = rigid_from_euler(0.0, 0.0, delta, Vec3::zeros()).unwrap();
        let rotated = camera_from_orbit(&small_geometry(alpha + delta, beta)).unwrap();
        let c = rotated.project(&g, &spin.apply_point(&p)).unwrap();
        prop_assert!((a[0] - c[0]).abs() < 1e-6 && (a[1] - c[1]).abs() < 1e-6);
    }

    #[test]
    fn magnification_in_isocenter_plane(alpha in 0.0..360.0f64, beta in 75.0..105.0f64,
                                        du in -30.0..30.0f64, dv in -30.0..30.0f64) {
        let g = small_geometry(alpha, beta);
        let cam = camera_from_orbit(&g).unwrap();
        let p = cam.detector_u_axis * du + cam.detector_v_axis * dv;
        let q = cam.project(&g, &p).unwrap();
        let (cu, cv) = g.principal_point();
        let moved = ((q[0] - cu).hypot(q[1] - cv)) * g.pixel_size_mm;
        let world = du.hypot(dv);
        if world > 1e-3 {
            prop_assert!((moved / world - 1200.0 / 450.0).abs() / (1200.0 / 450.0) < 1e-6);
        }
    }

    #[test]
    fn dice_is_symmetric_bounded_and_reflexive(a in prop::collection::vec(any::<bool>(), 64),
                                               b in prop::collection::vec(any::<bool>(), 64)) {
        let img = |v: &Vec<bool>| Image2D::new(8, 8, 0.62, ImageKind::Mask,
            v.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect()).unwrap();
        let (ia, ib) = (img(&a), img(&b));
        let ab = dice(&ia, &ib, 0.5).unwrap();
        prop_assert_eq!(ab, dice(&ib, &ia, 0.5).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(dice(&ia, &ia, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn landmark_error_is_a_metric(p in prop::array::uniform2(-600.0..600.0f64),
                                  q in prop::array::uniform2(-600.0..600.0f64),
                                  r in prop::array::uniform2(-600.0..600.0f64)) {
        let d = |a, b| landmark_error_mm(a, b, 0.62).unwrap();
        prop_assert!(d(p, q) >= 0.0);
        prop_assert_eq!(d(p, q), d(q, p));
        prop_assert_eq!(d(p, p), 0.0);
        prop_assert!(d(p, r) <= d(p, q) + d(q, r) + 1e-9);
    }

    #[test]
    fn belief_round_trip_and_argmax(u in 0.0..255.0f64, v in 0.0..191.0f64) {
        let b = belief_map([u, v], &BeliefMapParams::default(), 256, 192).unwrap();
        let (c, r) = b.argmax().unwrap();
        prop_assert!((c as f64 - u).abs() <= 0.5 + 1e-9 && (r as f64 - v).abs() <= 0.5 + 1e-9);
        let q = extract_landmark(&b).unwrap();
        prop_assert!((q[0] - u).hypot(q[1] - v) < 0.05);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn raycasting_is_additive(alpha in 0.0..360.0f64, beta in 75.0..105.0f64,
                              shift in prop::array::uniform3(-10.0..10.0f64)) {
        let g1 = GridSpec::new([20, 16, 24], Vec3::new(2.0, 2.5, 1.5), Vec3::new(-19.0, -18.75, -17.25)).unwrap();
        let a = VoxelVolume::new(g1, VolumeKind::Attenuation,
            (0..g1.len()).map(|i| ((i * 7919) % 97) as f32 * 1e-3).collect()).unwrap();
        let g2 = GridSpec::new([10, 10, 30], Vec3::repeat(0.5), Vec3::new(-2.25, -2.25, -7.25)).unwrap();
        let b = VoxelVolume::filled(g2, VolumeKind::Attenuation, 2.2);
        let pose_a = RigidTransform::from_translation(Vec3::from(shift));
        let pose_b = rigid_from_euler(20.0, -10.0, 35.0, Vec3::new(3.0, 1.0, -2.0)).unwrap();
        let g = small_geometry(alpha, beta);
        let cam = camera_from_orbit(&g).unwrap();
        let both = raycast_line_integrals(&[PosedVolume::new(&a, pose_a), PosedVolume::new(&b, pose_b)], &cam, &g, None).unwrap();
        let only_a = raycast_line_integrals(&[PosedVolume::new(&a, pose_a)], &cam, &g, None).unwrap();
        let only_b = raycast_line_integrals(&[PosedVolume::new(&b, pose_b)], &cam, &g, None).unwrap();
        for ((x, y), z) in both.values.iter().zip(&only_a.values).zip(&only_b.values) {
            prop_assert!((x - y - z).abs() < 1e-9);
        }
    }

    #[test]
    fn mask_lies_within_body_support(c in control(), alpha in 0.0..360.0f64, beta in 75.0..105.0f64) {
        let spec = CdmGeometrySpec::default();
        let meshes = build_cdm_meshes(&CdmShape::new(c).unwrap(), &spec).unwrap();
        let (lo, hi) = meshes.body.bounding_box().unwrap();
        let grid = GridSpec::bounding(lo, hi, 0.2, 0.4).unwrap();
        let body = voxelize_on_grid(&meshes.body, &grid).unwrap();
        let notch = voxelize_on_grid(&meshes.notch_region, &grid).unwrap();
        for (n, b) in notch.values.iter().zip(&body.values) {
            prop_assert!(*n <= *b);
        }
        let pose = RigidTransform::from_rotation(rotation_x_deg(40.0));
        let g = ProjectionGeometry::new(1200.0, 450.0, alpha, beta, 128, 128, 0.62).unwrap();
        let cam = camera_from_orbit(&g).unwrap();
        let mask = project_mask(&PosedVolume::new(&notch, pose), &cam, &g, None).unwrap();
        let body_len = path_lengths(&PosedVolume::new(&body, pose), &cam, &g, None).unwrap();
        let notch_len = path_lengths(&PosedVolume::new(&notch, pose), &cam, &g, None).unwrap();
        let diagonal = 0.2 * 3f64.sqrt();
        prop_assert!(mask.count_nonzero() > 0);
        for i in 0..mask.values.len() {
            if mask.values[i] > 0.0 {
                prop_assert!(body_len.values[i] > 0.0);
            }
            if notch_len.values[i] >= diagonal {
                prop_assert_eq!(mask.values[i], 1.0);
            }
        }
    }
}

#[test]
fn step_halving_changes_cube_integral_little() {
    let g = GridSpec::new([50; 3], Vec3::repeat(1.0), Vec3::repeat(-24.5)).unwrap();
    let cube = VoxelVolume::filled(g, VolumeKind::Attenuation, 0.02);
    let geom = ProjectionGeometry::new(1200.0, 450.0, 0.0, 90.0, 33, 33, 0.62).unwrap();
    let cam = camera_from_orbit(&geom).unwrap();
    let center = |s| {
        raycast_line_integrals(
            &[PosedVolume::new(&cube, RigidTransform::identity())],
            &cam,
            &geom,
            Some(s),
        )
        .unwrap()
        .get(16, 16)
    };
    let (a, b) = (center(1.0), center(0.5));
    assert!((a - b).abs() / a < 0.0025);
}

fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = (x - lo) / (hi - lo);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn sampled_fields_are_uniform() {
    let ranges = SamplingRanges::default();
    let draws: Vec<_> = (0..10_000u32)
        .map(|i| {
            let side = if i % 2 == 0 { FemurSide::Left } else { FemurSide::Right };
            sample_configuration(77, "ct", side, i / 2, &ranges).unwrap()
        })
        .collect();
    let field = |f: &dyn Fn(&forge_core::sampler::SampleConfig) -> f64| draws.iter().map(f).collect::<Vec<_>>();
    let checks: Vec<(&str, f64)> = vec![
        (
            "sid",
            ks_uniform(field(&|s| s.geometry.source_to_isocenter_mm), 400.0, 500.0),
        ),
        ("lao_rao", ks_uniform(field(&|s| s.geometry.lao_rao_deg), 0.0, 360.0)),
        (
            "cran_caud",
            ks_uniform(field(&|s| s.geometry.cran_caud_deg), 75.0, 105.0),
        ),
        (
            "translation_x",
            ks_uniform(field(&|s| s.volume_translation_mm[0]), -20.0, 20.0),
        ),
        (
            "translation_z",
            ks_uniform(field(&|s| s.volume_translation_mm[2]), -20.0, 20.0),
        ),
        (
            "control_0",
            ks_uniform(field(&|s| s.shape.control_angles_deg[0]), -7.9, 7.9),
        ),
        (
            "control_4",
            ks_uniform(field(&|s| s.shape.control_angles_deg[4]), -7.9, 7.9),
        ),
        ("cdm_rx", ks_uniform(field(&|s| s.cdm_pose.rx_deg), -5.0, 5.0)),
        ("cdm_tz", ks_uniform(field(&|s| s.cdm_pose.t_mm[2]), -2.0, 2.0)),
    ];
    for (name, d) in checks {
        assert!(d < 0.02, "{name}: KS statistic {d}");
    }
    assert!(draws.iter().all(|s| s.geometry.source_to_detector_mm == 1200.0));
}

#[test]
fn carving_moves_voxels_to_air() {
    let g = GridSpec::new([30, 30, 30], Vec3::repeat(1.0), Vec3::repeat(-14.5)).unwrap();
    let ct = VoxelVolume::new(
        g,
        VolumeKind::Hu,
        (0..g.len())
            .map(|i| [-1000.0, 40.0, 200.0, 1200.0][(i * 31) % 4])
            .collect(),
    )
    .unwrap();
    let tool = forge_core::cdm_model::mesh::icosphere(Vec3::new(1.3, -0.7, 2.1), 8.0, 3);
    let occ = voxelize_on_grid(&tool, &g).unwrap();
    let carved = carve_drill(&ct, &occ, -1000.0).unwrap();
    let hist = |v: &VoxelVolume| {
        let mut h = std::collections::BTreeMap::new();
        for &x in &v.values {
            *h.entry(x as i32).or_insert(0usize) += 1;
        }
        h
    };
    let (before, after) = (hist(&ct), hist(&carved));
    let mut removed = std::collections::BTreeMap::new();
    for (i, &o) in occ.values.iter().enumerate() {
        if o > 0.5 {
            *removed.entry(ct.values[i] as i32).or_insert(0usize) += 1;
        }
    }
    let carved_count: usize = removed.values().sum();
    assert!(carved_count > 1000);
    for (k, n) in &before {
        let expect = n - removed.get(k).copied().unwrap_or(0) + if *k == -1000 { carved_count } else { 0 };
        assert_eq!(after[k], expect, "HU {k}");
    }
}

#[test]
fn material_override_ignores_hu() {
    let spec = CdmGeometrySpec::default();
    let meshes = build_cdm_meshes(&CdmShape::new([3.0, -2.0, 5.0, 0.0, 1.0]).unwrap(), &spec).unwrap();
    let (lo, hi) = meshes.body.bounding_box().unwrap();
    let grid = GridSpec::bounding(lo, hi, 0.2, 0.2).unwrap();
    let body = voxelize_on_grid(&meshes.body, &grid).unwrap();
    let tool = voxelize_on_grid(&meshes.tool, &grid).unwrap();
    let att = compose_material_attenuation(&body, &tool, 2.2, 2.8).unwrap();
    let (mut nb, mut nt) = (0, 0);
    for i in 0..att.values.len() {
        let expect = if tool.values[i] > 0.5 {
            nt += 1;
            2.8f32
        } else if body.values[i] > 0.5 {
            nb += 1;
            2.2
        } else {
            0.0
        };
        assert_eq!(att.values[i], expect);
    }
    assert!(nb > 0 && nt > 0);
}

#[test]
fn poisson_noise_statistics() {
    let p = 1.5;
    let n0 = 1e5;
    let img = Image2D::new(256, 256, 0.62, ImageKind::LineIntegral, vec![p; 256 * 256]).unwrap();
    let noisy = add_poisson_noise(&img, n0, 5).unwrap();
    let n = noisy.values.len() as f64;
    let mean = noisy.values.iter().sum::<f64>() / n;
    let var = noisy.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    // Delta method: var(-ln(N / N0)) ~ 1 / (N0 e^-p).
    let expected_var = 1.0 / (n0 * (-p).exp());
    assert!((mean - p).abs() < 5.0 * (expected_var / n).sqrt() + 1e-4, "mean {mean}");
    assert!((var / expected_var - 1.0).abs() < 0.05, "var {var} vs {expected_var}");
    assert_eq!(noisy, add_poisson_noise(&img, n0, 5).unwrap());
    assert_ne!(noisy, add_poisson_noise(&img, n0, 6).unwrap());
}
