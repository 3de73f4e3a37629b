//! Indexed triangle meshes and topology checks.

use alloc::vec::Vec;

use hashbrown::HashMap;

use crate::error::{Error, Result};
use crate::field::uncontract;
use crate::field::ContractedPoint;
use crate::math::Vec3;

/// Triangles smaller than this are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Indexed triangles with counter-clockwise winding seen from outside.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub positions: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(positions: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self {
            positions,
            triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v as usize >= n) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "triangle {i} indexes past {n} vertices"
                )));
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, tri: usize) -> [Vec3; 3] {
        let t = self.triangles[tri];
        [
            self.positions[t[0] as usize],
            self.positions[t[1] as usize],
            self.positions[t[2] as usize],
        ]
    }

    pub fn triangle_area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.corners(tri);
        0.5 * (b - a).cross(c - a).norm()
    }

    /// Positive for a closed mesh with outward-facing triangles.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.corners(i);
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }

    fn edge_counts(&self) -> HashMap<(u32, u32), u32> {
        let mut edges = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// Every edge is shared by at most two triangles.
    pub fn is_edge_manifold(&self) -> bool {
        self.edge_counts().values().all(|&c| c <= 2)
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        self.edge_counts().values().all(|&c| c == 2)
    }

    /// `V - E + F` over vertices referenced by triangles.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = alloc::vec![false; self.positions.len()];
        for t in &self.triangles {
            for &v in t {
                used[v as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    /// Drops triangles with area below [`DEGENERATE_AREA`] or repeated indices.
    pub fn remove_degenerate(&mut self) -> usize {
        let before = self.triangles.len();
        let positions = &self.positions;
        self.triangles.retain(|t| {
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return false;
            }
            let (a, b, c) = (
                positions[t[0] as usize],
                positions[t[1] as usize],
                positions[t[2] as usize],
            );
            0.5 * (b - a).cross(c - a).norm() >= DEGENERATE_AREA
        });
        before - self.triangles.len()
    }

    /// Maps contracted vertices to world space. Positions are rounded to
    /// `f32` precision so the exported asset reproduces them exactly.
    pub fn to_world(&self) -> Result<TriangleMesh> {
        let mut positions = Vec::with_capacity(self.positions.len());
        for (i, &q) in self.positions.iter().enumerate() {
            let p = uncontract(ContractedPoint(q)).map_err(|_| Error::VertexOutOfDomain {
                index: i,
                norm: q.norm(),
            })?;
            positions.push(Vec3::from_f32(p.to_f32()));
        }
        Ok(TriangleMesh {
            positions,
            triangles: self.triangles.clone(),
        })
    }

    /// Vertices inside the unit ball, where the contraction is the identity.
    pub fn is_central(&self, vertex: usize) -> bool {
        self.positions[vertex].norm() <= 1.0
    }

    pub fn is_central_triangle(&self, tri: usize) -> bool {
        self.triangles[tri].iter().all(|&v| self.is_central(v as usize))
    }

    /// Numbers of leading central vertices and leading all-central triangles.
    pub fn central_prefix(&self) -> (usize, usize) {
        let v = (0..self.vertex_count()).take_while(|&v| self.is_central(v)).count();
        let t = (0..self.triangle_count()).take_while(|&t| self.is_central_triangle(t)).count();
        (v, t)
    }

    /// True when central vertices precede the rest and all-central triangles
    /// precede the rest.
    pub fn is_region_ordered(&self) -> bool {
        let (v, t) = self.central_prefix();
        (v..self.vertex_count()).all(|i| !self.is_central(i))
            && (t..self.triangle_count()).all(|i| !self.is_central_triangle(i))
    }

    /// Stable reordering that puts central vertices and all-central triangles
    /// first. Returns the new mesh and the new index of every old vertex.
    pub fn region_ordered(&self) -> (TriangleMesh, Vec<u32>) {
        let n = self.vertex_count();
        let order: Vec<usize> = (0..n)
            .filter(|&v| self.is_central(v))
            .chain((0..n).filter(|&v| !self.is_central(v)))
            .collect();
        let mut remap = alloc::vec![0u32; n];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new as u32;
        }
        let m = self.triangle_count();
        let tris = (0..m)
            .filter(|&t| self.is_central_triangle(t))
            .chain((0..m).filter(|&t| !self.is_central_triangle(t)))
            .map(|t| self.triangles[t].map(|v| remap[v as usize]))
            .collect();
        let mesh = TriangleMesh {
            positions: order.iter().map(|&v| self.positions[v]).collect(),
            triangles: tris,
        };
        (mesh, remap)
    }
}

/// Interleaves the low 21 bits of three coordinates.
pub fn morton3(x: u32, y: u32, z: u32) -> u64 {
    fn spread(v: u32) -> u64 {
        let mut x = (v as u64) & 0x1f_ffff;
        x = (x | (x << 32)) & 0x1f_0000_0000_ffff;
        x = (x | (x << 16)) & 0x1f_0000_ff00_00ff;
        x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
        x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
        x = (x | (x << 2)) & 0x1249_2492_4924_9249;
        x
    }
    spread(x) | (spread(y) << 1) | (spread(z) << 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn region_order_is_stable_and_preserves_geometry() {
        let m = TriangleMesh::new(
            vec![Vec3::new(3.0, 0.0, 0.0), Vec3::ZERO, Vec3::X * 0.5, Vec3::Y * 0.5, Vec3::Z * 1.5],
            vec![[0, 1, 2], [1, 2, 3], [3, 4, 1], [2, 1, 3]],
        )
        .unwrap();
        assert!(!m.is_region_ordered());
        let (r, remap) = m.region_ordered();
        assert!(r.is_region_ordered());
        assert_eq!(r.central_prefix(), (3, 2));
        assert_eq!(remap, vec![3, 0, 1, 2, 4]);
        assert_eq!(r.triangles, vec![[0, 1, 2], [1, 0, 2], [3, 0, 1], [2, 4, 0]]);
        assert_eq!(r.region_ordered().0, r);
    }

    fn tetra() -> TriangleMesh {
        TriangleMesh::new(
            vec![Vec3::ZERO, Vec3::X, Vec3::Y, Vec3::Z],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn tetrahedron_topology() {
        let t = tetra();
        assert_eq!(t.euler_characteristic(), 2);
        assert!(t.is_closed() && t.is_edge_manifold());
        assert!((t.signed_volume() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_index_rejected() {
        assert!(TriangleMesh::new(vec![Vec3::ZERO], vec![[0, 0, 1]]).is_err());
    }

    #[test]
    fn to_world_examples() {
        let m = TriangleMesh::new(
            vec![Vec3::new(0.5, 0.0, 0.0), Vec3::new(1.5, 0.0, 0.0), Vec3::new(0.0, 1.2, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let w = m.to_world().unwrap();
        assert_eq!(w.positions[0], Vec3::new(0.5, 0.0, 0.0));
        assert!((w.positions[1] - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-6);
        assert_eq!(w.triangles, m.triangles);
        let bad = TriangleMesh::new(vec![Vec3::new(2.0, 0.0, 0.0)], vec![]).unwrap();
        assert!(matches!(bad.to_world(), Err(Error::VertexOutOfDomain { index: 0, .. })));
    }

    #[test]
    fn world_area_grows_with_contracted_norm() {
        // equal contracted triangles along the x axis
        let tri = |r: f64| {
            TriangleMesh::new(
                vec![Vec3::new(r, 0.0, 0.0), Vec3::new(r + 0.01, 0.0, 0.0), Vec3::new(r, 0.01, 0.0)],
                vec![[0, 1, 2]],
            )
            .unwrap()
        };
        let areas: Vec<f64> = [0.5, 1.2, 1.6, 1.9]
            .iter()
            .map(|&r| tri(r).to_world().unwrap().triangle_area(0))
            .collect();
        assert!(areas.windows(2).all(|w| w[1] > w[0]));
        assert!(areas[3] / areas[0] > 100.0);
    }

    #[test]
    fn degenerate_triangles_removed() {
        let mut m = TriangleMesh::new(
            vec![Vec3::ZERO, Vec3::X, Vec3::X * 2.0, Vec3::Y],
            vec![[0, 1, 2], [0, 1, 3], [1, 1, 3]],
        )
        .unwrap();
        assert_eq!(m.remove_degenerate(), 2);
        assert_eq!(m.triangles, vec![[0, 1, 3]]);
    }

    #[test]
    fn morton_interleaves() {
        assert_eq!(morton3(1, 0, 0), 1);
        assert_eq!(morton3(0, 1, 0), 2);
        assert_eq!(morton3(0, 0, 1), 4);
        assert_eq!(morton3(3, 0, 0), 9);
    }
}
