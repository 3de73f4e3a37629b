//! Marching cubes over grid cells with vertices welded by canonical edge key,
//! plus region growing around extracted vertices.

use alloc::vec;
use alloc::vec::Vec;

use hashbrown::{HashMap, HashSet};

use super::grid::{BakeGrid, Cell, Node, CANDIDATE, EXTRACTED};
use super::mesh::{morton3, TriangleMesh};
use super::tables::{CORNERS, EDGES, EDGE_TABLE, TRI_TABLE};
use crate::field::FieldSampler;
use crate::math::Vec3;
use crate::par::map_ordered;

pub const DEFAULT_ISO: f64 = 0.001;
/// Added to node values that equal the iso-value exactly.
pub const ISO_TIE_OFFSET: f64 = 1e-12;

/// Interpolation parameters this close to an edge end snap onto the node.
const NODE_SNAP: f64 = 1e-9;
const NODE_VERTEX: u64 = 1 << 63;

/// Triangles per cell (as vertex keys) and the welded position of every key.
/// A vertex key is `3 * node_key(lower node) + axis` for a vertex inside an
/// edge, or `NODE_VERTEX | node_key` for a vertex snapped onto a node.
#[derive(Debug, Clone, Default)]
pub struct Extraction {
    cells: HashMap<u64, Vec<[u64; 3]>>,
    vertices: HashMap<u64, Vec3>,
}

type CellOutput = (u64, Vec<[u64; 3]>, Vec<(u64, Vec3)>);

impl Extraction {
    pub fn triangle_count(&self) -> usize {
        self.cells.values().map(|t| t.len()).sum()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Edge keys of all vertices, sorted.
    pub fn vertex_keys(&self) -> Vec<u64> {
        let mut k: Vec<u64> = self.vertices.keys().copied().collect();
        k.sort_unstable();
        k
    }

    /// Cells holding at least one triangle, in key order.
    pub fn triangle_cells(&self, grid: &BakeGrid) -> Vec<Cell> {
        let mut keys: Vec<u64> = self.cells.keys().copied().collect();
        keys.sort_unstable();
        keys.into_iter().map(|k| grid.cell_from_key(k)).collect()
    }

    /// Node key of the lower end of a vertex's edge (or of its node).
    pub fn vertex_node(key: u64) -> u64 {
        if key & NODE_VERTEX != 0 {
            key & !NODE_VERTEX
        } else {
            key / 3
        }
    }

    fn absorb(&mut self, out: CellOutput) -> Vec<u64> {
        let (cell, tris, verts) = out;
        let mut new = Vec::new();
        for (k, p) in verts {
            if self.vertices.insert(k, p).is_none() {
                new.push(k);
            }
        }
        if !tris.is_empty() {
            self.cells.insert(cell, tris);
        }
        new
    }

    /// Welded mesh in a canonical order: vertices sorted by the Morton code
    /// of their edge's lower node, triangles by cell and then by lowest
    /// vertex. Degenerate triangles and unreferenced vertices are dropped.
    pub fn to_mesh(&self, grid: &BakeGrid) -> TriangleMesh {
        let mut keys: Vec<(u64, u64)> = self
            .vertices
            .keys()
            .map(|&k| {
                let n = grid.node_from_key(Self::vertex_node(k));
                (morton3(n[0] as u32, n[1] as u32, n[2] as u32), k)
            })
            .collect();
        keys.sort_unstable();
        let index: HashMap<u64, u32> = keys.iter().enumerate().map(|(i, &(_, k))| (k, i as u32)).collect();
        let positions: Vec<Vec3> = keys.iter().map(|(_, k)| self.vertices[k]).collect();
        let mut cell_keys: Vec<u64> = self.cells.keys().copied().collect();
        cell_keys.sort_unstable();
        let mut triangles = Vec::with_capacity(self.triangle_count());
        for c in cell_keys {
            for t in &self.cells[&c] {
                triangles.push([index[&t[0]], index[&t[1]], index[&t[2]]]);
            }
        }
        triangles.sort_by_key(|t| {
            let mut s = *t;
            s.sort_unstable();
            s
        });
        let mut mesh = TriangleMesh {
            positions,
            triangles,
        };
        mesh.remove_degenerate();
        compact(&mut mesh);
        mesh
    }
}

/// Drops unreferenced vertices, keeping the relative order of the rest.
fn compact(mesh: &mut TriangleMesh) {
    let mut used = vec![false; mesh.positions.len()];
    for t in &mesh.triangles {
        for &v in t {
            used[v as usize] = true;
        }
    }
    let mut remap = vec![u32::MAX; used.len()];
    let mut next = 0u32;
    let mut positions = Vec::new();
    for (i, &u) in used.iter().enumerate() {
        if u {
            remap[i] = next;
            next += 1;
            positions.push(mesh.positions[i]);
        }
    }
    for t in mesh.triangles.iter_mut() {
        for v in t.iter_mut() {
            *v = remap[*v as usize];
        }
    }
    mesh.positions = positions;
}

#[inline]
fn tie_break(v: f64, iso: f64) -> f64 {
    if v == iso {
        iso + ISO_TIE_OFFSET
    } else {
        v
    }
}

/// Triangulates one cell given its eight clamped corner values.
fn polygonise(grid: &BakeGrid, cell: Cell, values: [f64; 8], iso: f64) -> CellOutput {
    let v = values.map(|x| tie_break(x, iso));
    let mut case = 0usize;
    for (i, &x) in v.iter().enumerate() {
        if x < iso {
            case |= 1 << i;
        }
    }
    let ckey = grid.cell_key(cell);
    let mask = EDGE_TABLE[case];
    if mask == 0 {
        return (ckey, Vec::new(), Vec::new());
    }
    let mut edge_keys = [0u64; 12];
    let mut verts = Vec::new();
    for (e, &[a, b]) in EDGES.iter().enumerate() {
        if mask & (1 << e) == 0 {
            continue;
        }
        let na: Node = core::array::from_fn(|d| cell[d] + CORNERS[a][d]);
        let nb: Node = core::array::from_fn(|d| cell[d] + CORNERS[b][d]);
        let (lo, hi, vlo, vhi) = if na <= nb { (na, nb, v[a], v[b]) } else { (nb, na, v[b], v[a]) };
        let axis = (0..3).find(|&d| lo[d] != hi[d]).unwrap_or(0);
        let key = grid.node_key(lo) * 3 + axis as u64;
        let t = (iso - vlo) / (vhi - vlo);
        let (key, pos) = if t < NODE_SNAP {
            (NODE_VERTEX | grid.node_key(lo), grid.node_position(lo))
        } else if t > 1.0 - NODE_SNAP {
            (NODE_VERTEX | grid.node_key(hi), grid.node_position(hi))
        } else {
            let plo = grid.node_position(lo);
            let phi = grid.node_position(hi);
            (key, plo + (phi - plo) * t)
        };
        verts.push((key, pos));
        edge_keys[e] = key;
    }
    let row = &TRI_TABLE[case];
    let mut tris = Vec::new();
    let mut i = 0;
    while i < 16 && row[i] >= 0 {
        let (e0, e1, e2) = (row[i] as usize, row[i + 1] as usize, row[i + 2] as usize);
        tris.push([edge_keys[e0], edge_keys[e2], edge_keys[e1]]);
        i += 3;
    }
    (ckey, tris, verts)
}

fn cell_nodes(cell: Cell) -> [Node; 8] {
    core::array::from_fn(|i| core::array::from_fn(|d| cell[d] + CORNERS[i][d]))
}

/// Extracts the given cells (skipping already extracted ones) and returns
/// the edge keys of vertices that did not exist before.
pub fn extract_cells<S: FieldSampler + Sync + ?Sized>(
    grid: &mut BakeGrid,
    field: &S,
    cells: &[Cell],
    iso: f64,
    extraction: &mut Extraction,
) -> Vec<u64> {
    let todo: Vec<Cell> = cells
        .iter()
        .copied()
        .filter(|&c| grid.flags(c) & EXTRACTED == 0)
        .collect();
    let nodes: Vec<Node> = todo.iter().flat_map(|&c| cell_nodes(c)).collect();
    grid.ensure_values(field, &nodes);
    let g = &*grid;
    let chunks: Vec<&[Cell]> = todo.chunks(1024).collect();
    let outputs = map_ordered(&chunks, |_, cells| {
        cells
            .iter()
            .map(|&c| {
                let values = cell_nodes(c).map(|n| g.value(n).expect("node value cached"));
                polygonise(g, c, values, iso)
            })
            .collect::<Vec<_>>()
    });
    let mut new = Vec::new();
    for out in outputs.into_iter().flatten() {
        new.extend(extraction.absorb(out));
    }
    for c in todo {
        grid.set_flags(c, EXTRACTED);
    }
    new.sort_unstable();
    new
}

/// Marching cubes over candidate cells only, or over the whole grid
/// slab by slab (values are then evaluated per slab and not cached).
pub fn marching_cubes<S: FieldSampler + Sync + ?Sized>(
    grid: &mut BakeGrid,
    field: &S,
    iso: f64,
    only_candidates: bool,
) -> Extraction {
    let mut extraction = Extraction::default();
    if only_candidates {
        let cells = grid.cells_with(CANDIDATE);
        extract_cells(grid, field, &cells, iso, &mut extraction);
    } else {
        dense_scan(grid, field, iso, &mut extraction);
    }
    extraction
}

fn dense_scan<S: FieldSampler + Sync + ?Sized>(grid: &BakeGrid, field: &S, iso: f64, extraction: &mut Extraction) {
    let r = grid.resolution();
    let plane = |k: usize| -> Vec<f64> {
        let pts: Vec<Vec3> = (0..(r + 1) * (r + 1))
            .map(|i| grid.node_position([i % (r + 1), i / (r + 1), k]))
            .collect();
        let mut out = vec![0.0; pts.len()];
        field.sample_batch(&pts, &mut out);
        for (v, p) in out.iter_mut().zip(&pts) {
            *v = grid.clamp_value(*v, *p);
        }
        out
    };
    let slabs: Vec<usize> = (0..r).collect();
    let outputs = map_ordered(&slabs, |_, &k| {
        let lower = plane(k);
        let upper = plane(k + 1);
        let mut outs = Vec::new();
        for j in 0..r {
            for i in 0..r {
                let values: [f64; 8] = core::array::from_fn(|c| {
                    let [dx, dy, dz] = CORNERS[c];
                    let idx = (i + dx) + (r + 1) * (j + dy);
                    if dz == 0 {
                        lower[idx]
                    } else {
                        upper[idx]
                    }
                });
                let out = polygonise(grid, [i, j, k], values, iso);
                if !out.1.is_empty() {
                    outs.push(out);
                }
            }
        }
        outs
    });
    for out in outputs.into_iter().flatten() {
        extraction.absorb(out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GrowConfig {
    pub iterations: usize,
    /// Edge length of the cubic cell neighborhood around each vertex.
    pub neighborhood: usize,
}

impl Default for GrowConfig {
    fn default() -> Self {
        Self {
            iterations: 32,
            neighborhood: 8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GrowReport {
    /// Cells newly flagged candidate in each iteration that activated any.
    pub activated: Vec<usize>,
    pub triangles_added: Vec<usize>,
}

impl GrowReport {
    pub fn iterations_run(&self) -> usize {
        self.activated.len()
    }
}

/// Repeatedly flags the neighborhood of the newest vertices as candidates
/// and extracts the newly flagged cells. Stops early once nothing new
/// activates.
pub fn region_grow<S: FieldSampler + Sync + ?Sized>(
    grid: &mut BakeGrid,
    field: &S,
    extraction: &mut Extraction,
    iso: f64,
    config: &GrowConfig,
) -> GrowReport {
    let r = grid.resolution() as i64;
    let n = config.neighborhood.max(1) as i64;
    let (lo, hi) = (-(n - 1) / 2, n / 2);
    let mut report = GrowReport::default();
    let mut frontier = extraction.vertex_keys();
    for _ in 0..config.iterations {
        let mut set: HashSet<u64> = frontier
            .iter()
            .map(|&k| {
                let node = grid.node_from_key(Extraction::vertex_node(k));
                grid.cell_key(core::array::from_fn(|d| node[d].min(grid.resolution() - 1)))
            })
            .collect();
        for axis in 0..3 {
            let mut next = HashSet::with_capacity(set.len() * 2);
            for &key in &set {
                let c = grid.cell_from_key(key);
                for off in lo..=hi {
                    let v = c[axis] as i64 + off;
                    if (0..r).contains(&v) {
                        let mut m = c;
                        m[axis] = v as usize;
                        next.insert(grid.cell_key(m));
                    }
                }
            }
            set = next;
        }
        let mut new_cells: Vec<u64> = set
            .into_iter()
            .filter(|&k| grid.flags(grid.cell_from_key(k)) & CANDIDATE == 0)
            .collect();
        if new_cells.is_empty() {
            break;
        }
        new_cells.sort_unstable();
        let cells: Vec<Cell> = new_cells.iter().map(|&k| grid.cell_from_key(k)).collect();
        for &c in &cells {
            grid.set_flags(c, CANDIDATE);
        }
        let before = extraction.triangle_count();
        frontier = extract_cells(grid, field, &cells, iso, extraction);
        report.activated.push(cells.len());
        report.triangles_added.push(extraction.triangle_count() - before);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::SdfField;

    fn sphere(r: f64) -> SdfField {
        SdfField::sphere(Vec3::ZERO, r)
    }

    fn band_candidates(grid: &mut BakeGrid, f: &SdfField) {
        let r = grid.resolution();
        let h = grid.cell_size();
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    if f.eval_at(grid.cell_center([i, j, k])).abs() < h {
                        grid.set_flags([i, j, k], CANDIDATE);
                    }
                }
            }
        }
    }

    #[test]
    fn sphere_is_closed_outward_and_genus_zero() {
        let mut grid = BakeGrid::new(40).unwrap();
        let f = sphere(1.0);
        let mesh = marching_cubes(&mut grid, &f, 0.0, false).to_mesh(&grid);
        assert!(mesh.is_closed() && mesh.is_edge_manifold());
        assert_eq!(mesh.euler_characteristic(), 2);
        let vol = mesh.signed_volume();
        let exact = 4.0 / 3.0 * core::f64::consts::PI;
        assert!(vol > 0.0 && (vol - exact).abs() / exact < 0.02, "volume {vol}");
    }

    #[test]
    fn constant_positive_grid_is_empty() {
        let mut grid = BakeGrid::new(16).unwrap();
        let f = SdfField::plane(Vec3::Z, -10.0);
        assert!(marching_cubes(&mut grid, &f, DEFAULT_ISO, false).to_mesh(&grid).is_empty());
        grid.flag_all(CANDIDATE);
        assert!(marching_cubes(&mut grid, &f, DEFAULT_ISO, true).to_mesh(&grid).is_empty());
    }

    #[test]
    fn dense_and_sparse_agree_and_order_is_irrelevant() {
        let f = SdfField::Union(vec![sphere(0.6), SdfField::sphere(Vec3::new(0.5, 0.2, 0.0), 0.4)]);
        let mut dense_grid = BakeGrid::new(24).unwrap();
        let dense = marching_cubes(&mut dense_grid, &f, DEFAULT_ISO, false).to_mesh(&dense_grid);
        let mut grid = BakeGrid::new(24).unwrap();
        grid.flag_all(CANDIDATE);
        let sparse = marching_cubes(&mut grid, &f, DEFAULT_ISO, true).to_mesh(&grid);
        assert_eq!(dense, sparse);
        let mut grid2 = BakeGrid::new(24).unwrap();
        let mut cells = Vec::new();
        for k in 0..24 {
            for j in 0..24 {
                for i in 0..24 {
                    cells.push([23 - i, j, 23 - k]);
                }
            }
        }
        let mut ext = Extraction::default();
        for chunk in cells.chunks(997).rev() {
            extract_cells(&mut grid2, &f, chunk, DEFAULT_ISO, &mut ext);
        }
        assert_eq!(ext.to_mesh(&grid2), dense);
    }

    #[test]
    fn iso_offset_dilates() {
        let f = sphere(0.8);
        let mean_radius = |iso: f64| {
            let mut g = BakeGrid::new(32).unwrap();
            let m = marching_cubes(&mut g, &f, iso, false).to_mesh(&g);
            m.positions.iter().map(|p| p.norm()).sum::<f64>() / m.vertex_count() as f64
        };
        let (r0, r1) = (mean_radius(0.0), mean_radius(DEFAULT_ISO));
        assert!(r1 > r0);
        assert!((r1 - r0 - DEFAULT_ISO).abs() < 2e-4);
    }

    #[test]
    fn region_growing_closes_hole() {
        let f = sphere(0.7);
        let mut grid = BakeGrid::new(48).unwrap();
        band_candidates(&mut grid, &f);
        let hole = grid.cell_of(Vec3::new(0.0, 0.0, 0.7));
        for dz in 0..4 {
            for dy in 0..4 {
                for dx in 0..4 {
                    grid.clear_flags([hole[0] + dx - 2, hole[1] + dy - 2, hole[2] + dz - 2], CANDIDATE);
                }
            }
        }
        let mut ext = marching_cubes(&mut grid, &f, DEFAULT_ISO, true);
        let holed = ext.to_mesh(&grid);
        assert!(!holed.is_closed());
        let one = GrowConfig { iterations: 1, ..GrowConfig::default() };
        region_grow(&mut grid, &f, &mut ext, DEFAULT_ISO, &one);
        let mesh = ext.to_mesh(&grid);
        assert!(mesh.is_closed());
        assert_eq!(mesh.euler_characteristic(), 2);
        let report = region_grow(&mut grid, &f, &mut ext, DEFAULT_ISO, &GrowConfig::default());
        assert!(report.triangles_added.iter().all(|&t| t == 0));
        assert_eq!(ext.to_mesh(&grid), mesh);
    }

    #[test]
    fn growth_on_full_grid_adds_nothing() {
        let f = sphere(0.5);
        let mut grid = BakeGrid::new(20).unwrap();
        grid.flag_all(CANDIDATE);
        let mut ext = marching_cubes(&mut grid, &f, DEFAULT_ISO, true);
        let before = ext.to_mesh(&grid);
        let report = region_grow(&mut grid, &f, &mut ext, DEFAULT_ISO, &GrowConfig::default());
        assert_eq!(report.iterations_run(), 0);
        assert_eq!(ext.to_mesh(&grid), before);
    }

    #[test]
    fn growth_stays_in_surface_band() {
        let f = sphere(0.6);
        let mut grid = BakeGrid::new(40).unwrap();
        let seed = grid.cell_of(Vec3::new(0.6, 0.0, 0.0));
        grid.set_flags(seed, CANDIDATE);
        let before: HashSet<Cell> = grid.cells_with(CANDIDATE).into_iter().collect();
        let mut ext = marching_cubes(&mut grid, &f, DEFAULT_ISO, true);
        region_grow(&mut grid, &f, &mut ext, DEFAULT_ISO, &GrowConfig::default());
        let h = grid.cell_size();
        let band = 5.0 * h * 3f64.sqrt();
        for c in grid.cells_with(CANDIDATE) {
            if !before.contains(&c) {
                assert!(f.eval_at(grid.cell_center(c)).abs() <= band);
            }
        }
        let mesh = ext.to_mesh(&grid);
        assert!(mesh.is_closed());
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(24))]
        #[test]
        fn blobs_extract_to_closed_manifolds(
            c1 in proptest::array::uniform3(-0.5f64..0.5),
            c2 in proptest::array::uniform3(-0.5f64..0.5),
            r1 in 0.2f64..0.6,
            r2 in 0.2f64..0.6,
        ) {
            let f = SdfField::Union(vec![
                SdfField::sphere(Vec3::from(c1), r1),
                SdfField::sphere(Vec3::from(c2), r2),
            ]);
            let mut grid = BakeGrid::new(28).unwrap();
            let mesh = marching_cubes(&mut grid, &f, DEFAULT_ISO, false).to_mesh(&grid);
            proptest::prop_assert!(mesh.is_edge_manifold());
            proptest::prop_assert!(mesh.is_closed());
            let h = grid.cell_size();
            for p in &mesh.positions {
                proptest::prop_assert!(f.eval_at(*p).abs() <= 2.0 * h * 3f64.sqrt());
            }
        }
    }
}
