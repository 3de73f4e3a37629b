//! Sparse lattice over the contracted cube `[-2, 2]^3`.
//!
//! Cell `(i, j, k)` spans nodes `(i, j, k)` to `(i + 1, j + 1, k + 1)`; node
//! `(i, j, k)` sits at `-2 + 4 (i, j, k) / resolution`. Node values are
//! evaluated lazily and cached; bounding-geometry clamping is applied when a
//! value is read.

use alloc::vec;
use alloc::vec::Vec;

use hashbrown::HashMap;

use super::hull::BoundingHull;
use crate::error::{Error, Result};
use crate::field::{contract, density_from_sdf, ContractedPoint, DensityParams, FieldSampler};
use crate::math::{floor, Vec3};
use crate::par::map_ordered;
use crate::volume::{compositing_weights, interval_edges, sample_distances, Ray};

pub const GRID_EXTENT: f64 = 2.0;

pub const VISIBLE: u8 = 1;
pub const CANDIDATE: u8 = 2;
pub const EXTRACTED: u8 = 4;

pub type Cell = [usize; 3];
pub type Node = [usize; 3];

const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone)]
pub struct BakeGrid {
    resolution: usize,
    flags: HashMap<u64, u8>,
    values: HashMap<u64, f64>,
    clamp: Option<BoundingHull>,
}

impl BakeGrid {
    pub fn new(resolution: usize) -> Result<Self> {
        if !(2..=(1 << 20)).contains(&resolution) {
            return Err(Error::InvalidConfig(alloc::format!(
                "grid resolution {resolution} out of range"
            )));
        }
        Ok(Self {
            resolution,
            flags: HashMap::new(),
            values: HashMap::new(),
            clamp: None,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Cell edge length in contracted units.
    pub fn cell_size(&self) -> f64 {
        2.0 * GRID_EXTENT / self.resolution as f64
    }

    pub fn node_position(&self, n: Node) -> Vec3 {
        let h = self.cell_size();
        Vec3::new(
            -GRID_EXTENT + h * n[0] as f64,
            -GRID_EXTENT + h * n[1] as f64,
            -GRID_EXTENT + h * n[2] as f64,
        )
    }

    pub fn cell_center(&self, c: Cell) -> Vec3 {
        self.node_position(c) + Vec3::splat(0.5 * self.cell_size())
    }

    /// Cell containing a contracted point, clamped to the grid.
    pub fn cell_of(&self, q: Vec3) -> Cell {
        let r = self.resolution;
        let f = |v: f64| {
            let i = floor((v + GRID_EXTENT) / (2.0 * GRID_EXTENT) * r as f64);
            if i < 0.0 {
                0
            } else {
                (i as usize).min(r - 1)
            }
        };
        [f(q.x), f(q.y), f(q.z)]
    }

    pub fn cell_key(&self, c: Cell) -> u64 {
        let r = self.resolution as u64;
        c[0] as u64 + r * (c[1] as u64 + r * c[2] as u64)
    }

    pub fn cell_from_key(&self, key: u64) -> Cell {
        let r = self.resolution as u64;
        [(key % r) as usize, ((key / r) % r) as usize, (key / (r * r)) as usize]
    }

    pub fn node_key(&self, n: Node) -> u64 {
        let r = self.resolution as u64 + 1;
        n[0] as u64 + r * (n[1] as u64 + r * n[2] as u64)
    }

    pub fn node_from_key(&self, key: u64) -> Node {
        let r = self.resolution as u64 + 1;
        [(key % r) as usize, ((key / r) % r) as usize, (key / (r * r)) as usize]
    }

    pub fn flags(&self, c: Cell) -> u8 {
        self.flags.get(&self.cell_key(c)).copied().unwrap_or(0)
    }

    pub fn set_flags(&mut self, c: Cell, bits: u8) {
        let k = self.cell_key(c);
        *self.flags.entry(k).or_insert(0) |= bits;
    }

    pub fn clear_flags(&mut self, c: Cell, bits: u8) {
        let k = self.cell_key(c);
        if let Some(f) = self.flags.get_mut(&k) {
            *f &= !bits;
        }
    }

    /// Cells carrying all of `bits`, in key order.
    pub fn cells_with(&self, bits: u8) -> Vec<Cell> {
        let mut keys: Vec<u64> = self
            .flags
            .iter()
            .filter(|(_, &f)| f & bits == bits)
            .map(|(&k, _)| k)
            .collect();
        keys.sort_unstable();
        keys.into_iter().map(|k| self.cell_from_key(k)).collect()
    }

    pub fn count_with(&self, bits: u8) -> usize {
        self.flags.values().filter(|&&f| f & bits == bits).count()
    }

    /// Marks every cell as a candidate.
    pub fn flag_all(&mut self, bits: u8) {
        let r = self.resolution;
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    self.set_flags([i, j, k], bits);
                }
            }
        }
    }

    pub fn hull(&self) -> Option<&BoundingHull> {
        self.clamp.as_ref()
    }

    /// Applies `min(value, hull, sphere)` to every value read from now on.
    pub fn clamp_with_hull(&mut self, hull: BoundingHull) {
        self.clamp = Some(hull);
    }

    #[inline]
    pub(crate) fn clamp_value(&self, raw: f64, q: Vec3) -> f64 {
        match &self.clamp {
            Some(h) => h.clamp(raw, ContractedPoint(q)),
            None => raw,
        }
    }

    /// Evaluates and caches the field at any of `nodes` not cached yet.
    pub fn ensure_values<S: FieldSampler + Sync + ?Sized>(&mut self, field: &S, nodes: &[Node]) {
        let mut missing: Vec<u64> = nodes
            .iter()
            .map(|&n| self.node_key(n))
            .filter(|k| !self.values.contains_key(k))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        if missing.is_empty() {
            return;
        }
        let chunks: Vec<&[u64]> = missing.chunks(EVAL_CHUNK).collect();
        let results = map_ordered(&chunks, |_, keys| {
            let pts: Vec<Vec3> = keys.iter().map(|&k| self.node_position(self.node_from_key(k))).collect();
            let mut out = vec![0.0; pts.len()];
            field.sample_batch(&pts, &mut out);
            out
        });
        for (keys, vals) in chunks.iter().zip(results) {
            for (&k, v) in keys.iter().zip(vals) {
                self.values.insert(k, v);
            }
        }
    }

    /// Clamped value at a cached node.
    pub fn value(&self, n: Node) -> Option<f64> {
        let raw = *self.values.get(&self.node_key(n))?;
        Some(self.clamp_value(raw, self.node_position(n)))
    }

    pub fn cached_values(&self) -> usize {
        self.values.len()
    }
}

/// Flags the cell containing every sample whose compositing weight exceeds
/// `threshold` as visible and candidate. Samples are interval midpoints, as
/// at render time. Returns the number of flagged samples.
pub fn splat_visibility<S: FieldSampler + Sync + ?Sized>(
    rays: &[Ray],
    field: &S,
    params: DensityParams,
    samples_per_ray: usize,
    grid: &mut BakeGrid,
    threshold: f64,
) -> usize {
    const RAYS_PER_CHUNK: usize = 64;
    let chunks: Vec<&[Ray]> = rays.chunks(RAYS_PER_CHUNK).collect();
    let grid_ref = &*grid;
    let hits = map_ordered(&chunks, |_, rays| {
        let mut pts = Vec::with_capacity(rays.len() * samples_per_ray);
        let mut deltas = Vec::with_capacity(rays.len() * samples_per_ray);
        for r in rays.iter() {
            let edges = interval_edges(r.near, r.far, samples_per_ray);
            let t = sample_distances(&edges, None::<&mut crate::rng::StreamRng>);
            pts.extend(t.iter().map(|&s| contract(r.at(s)).0));
            deltas.extend(edges.windows(2).map(|w| w[1] - w[0]));
        }
        let mut sdf = vec![0.0; pts.len()];
        field.sample_batch(&pts, &mut sdf);
        let mut cells = Vec::new();
        for ((p, s), d) in pts
            .chunks(samples_per_ray)
            .zip(sdf.chunks(samples_per_ray))
            .zip(deltas.chunks(samples_per_ray))
        {
            let dens: Vec<f64> = s.iter().map(|&f| density_from_sdf(f, params)).collect();
            let w = compositing_weights(&dens, d);
            for (q, w) in p.iter().zip(w) {
                if w > threshold {
                    cells.push(grid_ref.cell_of(*q));
                }
            }
        }
        cells
    });
    let mut count = 0;
    for cells in hits {
        count += cells.len();
        for c in cells {
            grid.set_flags(c, VISIBLE | CANDIDATE);
        }
    }
    count
}

/// Centers of all candidate cells.
pub fn candidate_centers(grid: &BakeGrid) -> Vec<Vec3> {
    grid.cells_with(CANDIDATE).into_iter().map(|c| grid.cell_center(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bake::extract::{marching_cubes, DEFAULT_ISO};
    use crate::camera::{Camera, Intrinsics, Pose};
    use crate::field::SdfField;
    use crate::train::clipped_pixel_ray;

    fn sphere_cameras(n: usize, dist: f64, res: usize) -> Vec<Camera> {
        // Fibonacci sphere of viewpoints
        let golden = core::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let a = golden * i as f64;
                let eye = Vec3::new(r * a.cos(), r * a.sin(), z) * dist;
                let up = if z.abs() > 0.9 { Vec3::X } else { Vec3::Z };
                Camera::new(Intrinsics::from_fov(res, res, 30.0), Pose::look_at(eye, Vec3::ZERO, up)).unwrap()
            })
            .collect()
    }

    fn rays(cams: &[Camera]) -> Vec<Ray> {
        let mut out = Vec::new();
        for c in cams {
            for v in 0..c.height() {
                for u in 0..c.width() {
                    if let Some(r) = clipped_pixel_ray(c, u, v, 0.0, 1.0) {
                        out.push(r);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn indexing_round_trips() {
        let g = BakeGrid::new(16).unwrap();
        assert_eq!(g.node_position([0, 0, 0]), Vec3::splat(-2.0));
        assert_eq!(g.node_position([16, 16, 16]), Vec3::splat(2.0));
        assert_eq!(g.cell_of(Vec3::splat(-2.0)), [0, 0, 0]);
        assert_eq!(g.cell_of(Vec3::splat(2.0)), [15, 15, 15]);
        assert_eq!(g.cell_of(Vec3::new(0.1, -0.1, 0.0)), [8, 7, 8]);
        let c = [3, 9, 14];
        assert_eq!(g.cell_from_key(g.cell_key(c)), c);
        assert_eq!(g.node_from_key(g.node_key([16, 0, 5])), [16, 0, 5]);
        assert_eq!(g.cell_of(g.cell_center(c)), c);
    }

    #[test]
    fn empty_scene_has_no_candidates() {
        let mut grid = BakeGrid::new(32).unwrap();
        let nothing = SdfField::plane(Vec3::Z, -100.0);
        let params = DensityParams::new(0.01).unwrap();
        let rs = rays(&sphere_cameras(6, 2.5, 16));
        splat_visibility(&rs, &nothing, params, 64, &mut grid, 0.005);
        assert_eq!(grid.count_with(CANDIDATE), 0);
    }

    #[test]
    fn sphere_candidates_cover_surface_and_skip_occluded_cells() {
        let f = SdfField::sphere(Vec3::ZERO, 0.5);
        let beta = 0.01;
        let params = DensityParams::new(beta).unwrap();
        let mut grid = BakeGrid::new(32).unwrap();
        let rs = rays(&sphere_cameras(26, 2.5, 48));
        splat_visibility(&rs, &f, params, 256, &mut grid, 0.005);
        let cands = grid.cells_with(CANDIDATE);
        assert!(!cands.is_empty());
        let h = grid.cell_size();
        let half_diag = 0.5 * h * 3f64.sqrt();
        for &c in &cands {
            let d = f.eval_at(grid.cell_center(c));
            // a shell: outside samples fade within a few beta, inside ones are occluded
            assert!(d > -(half_diag + 10.0 * beta) && d < half_diag + 10.0 * beta, "cell {c:?} at {d}");
        }
        let mut dense = BakeGrid::new(32).unwrap();
        let ext = marching_cubes(&mut dense, &f, DEFAULT_ISO, false);
        let mesh_cells = ext.triangle_cells(&dense);
        assert!(!mesh_cells.is_empty());
        for c in mesh_cells {
            assert!(grid.flags(c) & CANDIDATE != 0, "surface cell {c:?} not a candidate");
        }
    }
}
