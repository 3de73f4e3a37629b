//! Mesh extraction: grid evaluation in contracted space, visibility culling,
//! bounding geometry, marching cubes and region growing.

pub mod extract;
pub mod grid;
pub mod hull;
pub mod mesh;
pub mod pipeline;
mod tables;

pub use extract::{
    extract_cells, marching_cubes, region_grow, Extraction, GrowConfig, GrowReport, DEFAULT_ISO,
};
pub use grid::{candidate_centers, splat_visibility, BakeGrid, Cell, Node, CANDIDATE, EXTRACTED, VISIBLE};
pub use hull::{BoundingHull, HullConfig, Plane};
pub use mesh::{morton3, TriangleMesh};
pub use pipeline::{bake_mesh, camera_rays, BakeConfig, BakeOutput, BakeReport};
