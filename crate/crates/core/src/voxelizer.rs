//! Mesh voxelization, grid resampling and drilling.

use rayon::prelude::*;

use crate::cdm_model::mesh::TriMesh;
use crate::error::{ForgeError, Result};
use crate::geometry::{RigidTransform, Vec3};
pub use crate::volume::{GridSpec, VolumeKind, VoxelVolume};

/// Air in Hounsfield units, used for drilled voxels.
pub const AIR_HU: f32 = -1000.0;

/// Fraction of rows allowed to show odd crossing parity before the mesh is rejected.
pub const MAX_ODD_ROW_FRACTION: f64 = 1e-4;

fn orient(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    let c = |q: (f64, f64)| robust::Coord { x: q.0, y: q.1 };
    robust::orient2d(c(a), c(b), c(p))
}

/// Orientation of `p` relative to the directed edge `a -> b` in the (y, z) plane.
///
/// The predicate is exact. Zero results are resolved by shifting `p` by
/// `(eps, eps^2)`, and the edge is evaluated in a canonical vertex order so a
/// shared edge gets exactly opposite signs from its two triangles.
fn edge_side(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> i8 {
    let (lo, hi, flip) = if a <= b { (a, b, 1) } else { (b, a, -1) };
    let (dy, dz) = (hi.0 - lo.0, hi.1 - lo.1);
    let e = orient(lo, hi, p);
    let s = if e > 0.0 {
        1
    } else if e < 0.0 {
        -1
    } else if hi.1 != lo.1 {
        if -dz > 0.0 {
            1
        } else {
            -1
        }
    } else if dy > 0.0 {
        1
    } else {
        -1
    };
    s * flip
}

struct ProjectedTriangle {
    a: Vec3,
    normal: Vec3,
    x_range: (f64, f64),
    yz: [(f64, f64); 3],
    y_range: (f64, f64),
    z_range: (f64, f64),
}

/// Voxelizes a closed mesh on a grid that tightly bounds it plus `padding_mm`.
pub fn voxelize_mesh(mesh: &TriMesh, spacing_mm: f64, padding_mm: f64) -> Result<VoxelVolume> {
    let (lo, hi) = mesh.bounding_box().unwrap_or((Vec3::zeros(), Vec3::zeros()));
    let grid = GridSpec::bounding(lo, hi, spacing_mm, padding_mm)?;
    voxelize_on_grid(mesh, &grid)
}

/// Marks voxel centers inside the closed surface by crossing parity along `+x`.
pub fn voxelize_on_grid(mesh: &TriMesh, grid: &GridSpec) -> Result<VoxelVolume> {
    grid.validate()?;
    let [nx, ny, nz] = grid.dims;
    let (oy, oz) = (grid.origin_mm.y, grid.origin_mm.z);
    let (sy, sz) = (grid.spacing_mm.y, grid.spacing_mm.z);

    let tris: Vec<ProjectedTriangle> = mesh
        .triangles
        .iter()
        .filter_map(|t| {
            let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
            let yz = [(a.y, a.z), (b.y, b.z), (c.y, c.z)];
            // edge-on triangles cover no point once ties are perturbed
            if orient(yz[0], yz[1], yz[2]) == 0.0 {
                return None;
            }
            let normal = (b - a).cross(&(c - a));
            Some(ProjectedTriangle {
                a,
                normal,
                x_range: (a.x.min(b.x).min(c.x), a.x.max(b.x).max(c.x)),
                yz,
                y_range: (a.y.min(b.y).min(c.y), a.y.max(b.y).max(c.y)),
                z_range: (a.z.min(b.z).min(c.z), a.z.max(b.z).max(c.z)),
            })
        })
        .collect();

    // Widened by one cell: `o + i * s` need not round the same way as `(x - o) / s`,
    // and the exact edge tests reject the extra candidates anyway.
    let index_range = |lo: f64, hi: f64, o: f64, s: f64, n: usize| -> Option<(usize, usize)> {
        let first = (((lo - o) / s).ceil() - 1.0).max(0.0);
        let last = (((hi - o) / s).floor() + 1.0).min(n as f64 - 1.0);
        (first <= last).then_some((first as usize, last as usize))
    };

    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); nz];
    for (ti, t) in tris.iter().enumerate() {
        if let Some((k0, k1)) = index_range(t.z_range.0, t.z_range.1, oz, sz, nz) {
            for bin in &mut bins[k0..=k1] {
                bin.push(ti as u32);
            }
        }
    }

    let slab_len = nx * ny;
    let mut values = vec![0f32; grid.len()];
    let odd_rows: usize = values
        .par_chunks_mut(slab_len)
        .zip(bins.par_iter())
        .enumerate()
        .map(|(k, (slab, bin))| {
            let z = oz + k as f64 * sz;
            let mut hits: Vec<Vec<f64>> = vec![Vec::new(); ny];
            for &ti in bin {
                let t = &tris[ti as usize];
                let Some((j0, j1)) = index_range(t.y_range.0, t.y_range.1, oy, sy, ny) else {
                    continue;
                };
                for (j, row_hits) in hits.iter_mut().enumerate().take(j1 + 1).skip(j0) {
                    let p = (oy + j as f64 * sy, z);
                    let s0 = edge_side(t.yz[0], t.yz[1], p);
                    let s1 = edge_side(t.yz[1], t.yz[2], p);
                    let s2 = edge_side(t.yz[2], t.yz[0], p);
                    if s0 == s1 && s1 == s2 {
                        let n = t.normal;
                        let x = t.a.x - (n.y * (p.0 - t.a.y) + n.z * (p.1 - t.a.z)) / n.x;
                        // nearly edge-on triangles give ill-conditioned depths
                        let x = if x.is_finite() { x } else { t.x_range.0 };
                        row_hits.push(x.clamp(t.x_range.0, t.x_range.1));
                    }
                }
            }
            let mut odd = 0;
            for (j, row_hits) in hits.iter_mut().enumerate() {
                if row_hits.is_empty() {
                    continue;
                }
                if row_hits.len() % 2 == 1 {
                    odd += 1;
                }
                row_hits.sort_by(|a, b| a.total_cmp(b));
                // inside iff an odd number of crossings lie strictly beyond the voxel center
                let m = row_hits.len();
                let row = &mut slab[j * nx..(j + 1) * nx];
                for (i, v) in row.iter_mut().enumerate() {
                    let x = grid.origin_mm.x + i as f64 * grid.spacing_mm.x;
                    let beyond = m - row_hits.partition_point(|&h| h <= x);
                    if beyond % 2 == 1 {
                        *v = 1.0;
                    }
                }
            }
            odd
        })
        .sum();

    let total_rows = ny * nz;
    if odd_rows as f64 > MAX_ODD_ROW_FRACTION * total_rows as f64 {
        return Err(ForgeError::VoxelizationIntegrity { odd_rows, total_rows });
    }
    VoxelVolume::new(*grid, VolumeKind::Occupancy, values)
}

/// Nearest-neighbour resampling of an occupancy grid onto `target`.
///
/// `pose` maps source-local mm to target mm. Each target voxel is split into
/// `supersampling^3` sub-points and is occupied if any of them lands in an
/// occupied source voxel.
pub fn resample_occupancy_to_grid(
    occ: &VoxelVolume,
    target: &GridSpec,
    pose: &RigidTransform,
    supersampling: usize,
) -> Result<VoxelVolume> {
    occ.expect_kind(VolumeKind::Occupancy)?;
    target.validate()?;
    let k = supersampling.max(1);
    let inv = pose.inverse();
    let src = &occ.grid;

    // Restrict the work to the target box covering the transformed source grid.
    let (slo, shi) = src.bounds();
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for c in 0..8 {
        let corner = Vec3::new(
            if c & 1 == 0 { slo.x } else { shi.x },
            if c & 2 == 0 { slo.y } else { shi.y },
            if c & 4 == 0 { slo.z } else { shi.z },
        );
        let w = pose.apply_point(&corner);
        lo = lo.inf(&w);
        hi = hi.sup(&w);
    }
    let range = |a: usize| -> (usize, usize) {
        let s = target.spacing_mm[a];
        let o = target.origin_mm[a];
        let first = (((lo[a] - o) / s).floor() - 1.0).max(0.0) as usize;
        let last = (((hi[a] - o) / s).ceil() + 1.0).min(target.dims[a] as f64 - 1.0);
        if last < 0.0 || first as f64 > last {
            (1, 0)
        } else {
            (first, last as usize)
        }
    };
    let (rx, ry, rz) = (range(0), range(1), range(2));

    let offsets: Vec<Vec3> = (0..k * k * k)
        .map(|n| {
            let f = |q: usize| ((q as f64 + 0.5) / k as f64) - 0.5;
            Vec3::new(f(n % k), f((n / k) % k), f(n / (k * k))).component_mul(&target.spacing_mm)
        })
        .collect();

    let lookup = |p_target: Vec3| -> bool {
        let q = src.to_index_coords(&inv.apply_point(&p_target));
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let r = q[a].round();
            if r < 0.0 || r >= src.dims[a] as f64 {
                return false;
            }
            idx[a] = r as usize;
        }
        occ.get(idx[0], idx[1], idx[2]) > 0.5
    };

    let [nx, ny, _] = target.dims;
    let mut values = vec![0f32; target.len()];
    if rx.0 <= rx.1 && ry.0 <= ry.1 && rz.0 <= rz.1 {
        values
            .par_chunks_mut(nx * ny)
            .enumerate()
            .filter(|(kz, _)| *kz >= rz.0 && *kz <= rz.1)
            .for_each(|(kz, slab)| {
                for j in ry.0..=ry.1 {
                    for i in rx.0..=rx.1 {
                        let c = target.voxel_center(i, j, kz);
                        if offsets.iter().any(|o| lookup(c + o)) {
                            slab[i + nx * j] = 1.0;
                        }
                    }
                }
            });
    }
    VoxelVolume::new(*target, VolumeKind::Occupancy, values)
}

/// Sets every occupied voxel of `ct` to `air_hu`, returning a new volume.
pub fn carve_drill(ct: &VoxelVolume, tool_occ: &VoxelVolume, air_hu: f32) -> Result<VoxelVolume> {
    ct.expect_kind(VolumeKind::Hu)?;
    tool_occ.expect_kind(VolumeKind::Occupancy)?;
    if !ct.grid.same_as(&tool_occ.grid, 1e-9) {
        return Err(ForgeError::IncompatibleGrids(format!(
            "CT grid {:?} vs occupancy grid {:?}",
            ct.grid, tool_occ.grid
        )));
    }
    let values = ct
        .values
        .iter()
        .zip(&tool_occ.values)
        .map(|(&hu, &o)| if o > 0.5 { air_hu } else { hu })
        .collect();
    Ok(VoxelVolume {
        grid: ct.grid,
        kind: VolumeKind::Hu,
        values,
    })
}

/// `mu = mu_water * (1 + HU / 1000)`, clamped at zero.
pub fn hu_to_attenuation(ct: &VoxelVolume, mu_water_per_mm: f64) -> Result<VoxelVolume> {
    ct.expect_kind(VolumeKind::Hu)?;
    let values = ct
        .values
        .iter()
        .map(|&hu| (mu_water_per_mm * (1.0 + hu as f64 / 1000.0)).max(0.0) as f32)
        .collect();
    Ok(VoxelVolume {
        grid: ct.grid,
        kind: VolumeKind::Attenuation,
        values,
    })
}

/// Attenuation of the manipulator: constant `mu_body` on body voxels, `mu_tool` on
/// tool voxels (tool wins where both are set).
pub fn compose_material_attenuation(
    body: &VoxelVolume,
    tool: &VoxelVolume,
    mu_body: f64,
    mu_tool: f64,
) -> Result<VoxelVolume> {
    body.expect_kind(VolumeKind::Occupancy)?;
    tool.expect_kind(VolumeKind::Occupancy)?;
    if !body.grid.same_as(&tool.grid, 1e-9) {
        return Err(ForgeError::IncompatibleGrids(
            "body and tool occupancy grids differ".into(),
        ));
    }
    let values = body
        .values
        .iter()
        .zip(&tool.values)
        .map(|(&b, &t)| {
            if t > 0.5 {
                mu_tool as f32
            } else if b > 0.5 {
                mu_body as f32
            } else {
                0.0
            }
        })
        .collect();
    Ok(VoxelVolume {
        grid: body.grid,
        kind: VolumeKind::Attenuation,
        values,
    })
}

/// Voxel-wise union of two occupancy volumes on the same grid.
pub fn union_occupancy(a: &VoxelVolume, b: &VoxelVolume) -> Result<VoxelVolume> {
    a.expect_kind(VolumeKind::Occupancy)?;
    b.expect_kind(VolumeKind::Occupancy)?;
    if !a.grid.same_as(&b.grid, 1e-9) {
        return Err(ForgeError::IncompatibleGrids("occupancy grids differ".into()));
    }
    let values = a.values.iter().zip(&b.values).map(|(&x, &y)| x.max(y)).collect();
    VoxelVolume::new(a.grid, VolumeKind::Occupancy, values)
}
