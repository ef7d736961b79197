//! Triangle meshes and the sweep primitives used to build the manipulator surfaces.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::geometry::Vec3;

/// Indexed triangle mesh. A mesh may hold several disjoint closed components.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Appends `other` as additional components.
    pub fn append(&mut self, other: &TriMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))),
        )
    }

    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Every undirected edge is used by exactly two triangles, once in each direction.
    pub fn is_watertight(&self) -> bool {
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Connected components as lists of triangle indices.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for t in &self.triangles {
            let a = find(&mut parent, t[0] as usize);
            for &v in &t[1..] {
                let b = find(&mut parent, v as usize);
                if a != b {
                    parent[b] = a;
                }
            }
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut order = Vec::new();
        for (i, t) in self.triangles.iter().enumerate() {
            let root = find(&mut parent, t[0] as usize);
            groups
                .entry(root)
                .or_insert_with(|| {
                    order.push(root);
                    Vec::new()
                })
                .push(i);
        }
        order.into_iter().map(|r| groups.remove(&r).unwrap()).collect()
    }

    /// Euler characteristic `V - E + F` of each connected component.
    pub fn component_euler_characteristics(&self) -> Vec<i64> {
        self.components()
            .iter()
            .map(|tris| {
                let mut verts = std::collections::HashSet::new();
                let mut edges = std::collections::HashSet::new();
                for &ti in tris {
                    let t = self.triangles[ti];
                    for k in 0..3 {
                        verts.insert(t[k]);
                        let (a, b) = (t[k], t[(k + 1) % 3]);
                        edges.insert((a.min(b), a.max(b)));
                    }
                }
                verts.len() as i64 - edges.len() as i64 + tris.len() as i64
            })
            .collect()
    }

    /// Enclosed volume via the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (
                    self.vertices[t[0] as usize],
                    self.vertices[t[1] as usize],
                    self.vertices[t[2] as usize],
                );
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn to_ascii_stl(&self, name: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "solid {name}");
        for t in &self.triangles {
            let (a, b, c) = (
                self.vertices[t[0] as usize],
                self.vertices[t[1] as usize],
                self.vertices[t[2] as usize],
            );
            let n = (b - a).cross(&(c - a));
            let n = if n.norm() > 0.0 { n.normalize() } else { n };
            let _ = writeln!(out, "  facet normal {:e} {:e} {:e}", n.x, n.y, n.z);
            let _ = writeln!(out, "    outer loop");
            for v in [a, b, c] {
                let _ = writeln!(out, "      vertex {:e} {:e} {:e}", v.x, v.y, v.z);
            }
            let _ = writeln!(out, "    endloop");
            let _ = writeln!(out, "  endfacet");
        }
        let _ = writeln!(out, "endsolid {name}");
        out
    }
}

/// A simple planar polygon (counter-clockwise loop) with a triangulation of its interior.
#[derive(Clone, Debug)]
pub struct Profile {
    pub points: Vec<(f64, f64)>,
    pub triangles: Vec<[usize; 3]>,
}

impl Profile {
    pub fn disk(radius: f64, segments: usize) -> Profile {
        let segments = segments.max(3);
        let points = (0..segments)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / segments as f64;
                (radius * a.cos(), radius * a.sin())
            })
            .collect();
        let triangles = (1..segments - 1).map(|k| [0, k, k + 1]).collect();
        Profile { points, triangles }
    }

    /// Part of the annulus `r_in < |p| < r_out` around direction `center_angle`,
    /// spanning `±half_out` on the outer circle and `±half_in` on the inner one.
    pub fn annulus_sector(
        r_out: f64,
        r_in: f64,
        center_angle: f64,
        half_out: f64,
        half_in: f64,
        segments_per_turn: usize,
    ) -> Profile {
        let m = ((2.0 * half_out / std::f64::consts::TAU) * segments_per_turn as f64)
            .ceil()
            .max(2.0) as usize;
        let mut points = Vec::with_capacity(2 * m + 2);
        for k in 0..=m {
            let a = center_angle - half_out + 2.0 * half_out * k as f64 / m as f64;
            points.push((r_out * a.cos(), r_out * a.sin()));
        }
        for k in (0..=m).rev() {
            let a = center_angle - half_in + 2.0 * half_in * k as f64 / m as f64;
            points.push((r_in * a.cos(), r_in * a.sin()));
        }
        let inner = |k: usize| 2 * m + 1 - k;
        let mut triangles = Vec::with_capacity(2 * m);
        for k in 0..m {
            triangles.push([k, k + 1, inner(k + 1)]);
            triangles.push([k, inner(k + 1), inner(k)]);
        }
        Profile { points, triangles }
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (self.points[t[0]], self.points[t[1]], self.points[t[2]]);
                0.5 * ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0))
            })
            .sum()
    }
}

/// Sweeps a profile through a sequence of rings and closes both ends.
///
/// `rings[s][k]` is the 3D position of profile point `k` at station `s`. Stations must
/// advance along the profile normal so the surface winds outward.
pub fn sweep(profile: &Profile, rings: &[Vec<Vec3>]) -> TriMesh {
    let n = profile.points.len();
    assert!(rings.len() >= 2 && rings.iter().all(|r| r.len() == n));
    let mut mesh = TriMesh::default();
    for ring in rings {
        mesh.vertices.extend_from_slice(ring);
    }
    let idx = |s: usize, k: usize| (s * n + k) as u32;
    for s in 0..rings.len() - 1 {
        for k in 0..n {
            let k1 = (k + 1) % n;
            mesh.triangles.push([idx(s, k), idx(s, k1), idx(s + 1, k1)]);
            mesh.triangles.push([idx(s, k), idx(s + 1, k1), idx(s + 1, k)]);
        }
    }
    let last = rings.len() - 1;
    for t in &profile.triangles {
        mesh.triangles.push([idx(0, t[0]), idx(0, t[2]), idx(0, t[1])]);
        mesh.triangles.push([idx(last, t[0]), idx(last, t[1]), idx(last, t[2])]);
    }
    mesh
}

/// Axis-aligned box with outward winding.
pub fn cuboid(min: Vec3, max: Vec3) -> TriMesh {
    let profile = Profile {
        points: vec![(min.x, min.y), (max.x, min.y), (max.x, max.y), (min.x, max.y)],
        triangles: vec![[0, 1, 2], [0, 2, 3]],
    };
    let ring = |z: f64| {
        profile
            .points
            .iter()
            .map(|&(x, y)| Vec3::new(x, y, z))
            .collect::<Vec<_>>()
    };
    sweep(&profile, &[ring(min.z), ring(max.z)])
}

/// Geodesic sphere from a subdivided icosahedron (vertices on the sphere).
pub fn icosphere(center: Vec3, radius: f64, subdivisions: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut verts);
            let bc = midpoint(f[1], f[2], &mut verts);
            let ca = midpoint(f[2], f[0], &mut verts);
            next.extend_from_slice(&[[f[0], ab, ca], [f[1], bc, ab], [f[2], ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh {
        vertices: verts.into_iter().map(|v| center + v * radius).collect(),
        triangles: faces,
    }
}
