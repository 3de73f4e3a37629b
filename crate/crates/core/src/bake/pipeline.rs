//! The full bake: visibility splatting from training cameras, bounding
//! geometry, sparse marching cubes, region growing and the world transform.

use alloc::vec::Vec;

use super::extract::{marching_cubes, region_grow, GrowConfig, GrowReport, DEFAULT_ISO};
use super::grid::{candidate_centers, splat_visibility, BakeGrid, CANDIDATE};
use super::hull::{BoundingHull, HullConfig};
use super::mesh::TriangleMesh;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::{DensityParams, FieldSampler};
use crate::train::clipped_pixel_ray;
use crate::volume::Ray;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct BakeConfig {
    pub resolution: usize,
    pub iso: f64,
    pub weight_threshold: f64,
    pub samples_per_ray: usize,
    /// Splat every `pixel_stride`-th pixel along each image axis.
    pub pixel_stride: usize,
    pub near: f64,
    pub bound_radius: f64,
    /// Fit and apply the bounding hull; the bounding sphere always applies.
    pub use_hull: bool,
    pub hull: HullConfig,
    pub grow: GrowConfig,
}

impl Default for BakeConfig {
    fn default() -> Self {
        Self {
            resolution: 256,
            iso: DEFAULT_ISO,
            weight_threshold: 0.005,
            samples_per_ray: 64,
            pixel_stride: 1,
            near: 0.05,
            bound_radius: 1.0,
            use_hull: true,
            hull: HullConfig::default(),
            grow: GrowConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BakeReport {
    pub rays: usize,
    pub visible_samples: usize,
    pub candidate_cells: usize,
    pub hull_coverage: f64,
    pub initial_triangles: usize,
    pub grow_activated: Vec<usize>,
    pub grow_triangles: Vec<usize>,
    pub field_evaluations: usize,
    pub triangles: usize,
    pub vertices: usize,
}

#[derive(Debug, Clone)]
pub struct BakeOutput {
    /// Mesh in contracted coordinates, as extracted.
    pub contracted: TriangleMesh,
    /// Mesh in world coordinates.
    pub mesh: TriangleMesh,
    pub hull: BoundingHull,
    pub report: BakeReport,
}

/// Training rays through the pixel centers of every camera, clipped to the
/// scene bound.
pub fn camera_rays(cameras: &[Camera], stride: usize, near: f64, bound_radius: f64) -> Vec<Ray> {
    let stride = stride.max(1);
    let mut rays = Vec::new();
    for cam in cameras {
        for v in (0..cam.height()).step_by(stride) {
            for u in (0..cam.width()).step_by(stride) {
                rays.extend(clipped_pixel_ray(cam, u, v, near, bound_radius));
            }
        }
    }
    rays
}

/// Bakes `field` seen from `cameras` into a welded triangle mesh.
pub fn bake_mesh<S: FieldSampler + Sync + ?Sized>(
    field: &S,
    cameras: &[Camera],
    params: DensityParams,
    config: &BakeConfig,
) -> Result<BakeOutput> {
    if config.samples_per_ray == 0 || !config.iso.is_finite() {
        return Err(Error::InvalidConfig("samples_per_ray must be positive and iso finite".into()));
    }
    let mut grid = BakeGrid::new(config.resolution)?;
    let rays = camera_rays(cameras, config.pixel_stride, config.near, config.bound_radius);
    let visible_samples = splat_visibility(
        &rays,
        field,
        params,
        config.samples_per_ray,
        &mut grid,
        config.weight_threshold,
    );
    let centers = candidate_centers(&grid);
    let hull = if config.use_hull {
        BoundingHull::fit(&centers, &config.hull)?
    } else {
        BoundingHull::sphere_only(config.hull.sphere_radius)
    };
    let hull_coverage = hull.coverage(&centers);
    grid.clamp_with_hull(hull.clone());
    let mut extraction = marching_cubes(&mut grid, field, config.iso, true);
    let initial_triangles = extraction.triangle_count();
    let GrowReport { activated, triangles_added } =
        region_grow(&mut grid, field, &mut extraction, config.iso, &config.grow);
    let extracted = extraction.to_mesh(&grid);
    let (mesh, remap) = extracted.to_world()?.region_ordered();
    let mut positions = extracted.positions.clone();
    for (old, &new) in remap.iter().enumerate() {
        positions[new as usize] = extracted.positions[old];
    }
    let contracted = TriangleMesh { positions, triangles: mesh.triangles.clone() };
    let report = BakeReport {
        rays: rays.len(),
        visible_samples,
        candidate_cells: grid.count_with(CANDIDATE),
        hull_coverage,
        initial_triangles,
        grow_activated: activated,
        grow_triangles: triangles_added,
        field_evaluations: grid.cached_values(),
        triangles: mesh.triangle_count(),
        vertices: mesh.vertex_count(),
    };
    Ok(BakeOutput { contracted, mesh, hull, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{sphere_cameras, Intrinsics};
    use crate::field::SdfField;
    use crate::math::Vec3;

    #[test]
    fn analytic_sphere_bakes_to_closed_central_mesh() {
        // Growth may reach the hull wall, which closes off space outside the
        // hull with a surface of its own; every vertex lies on the sphere or
        // on that wall.
        let f = SdfField::sphere(Vec3::new(0.05, 0.0, 0.0), 0.5);
        let cams = sphere_cameras(12, 2.5, Vec3::ZERO, Intrinsics::from_fov(24, 24, 40.0), 0.0);
        let config = BakeConfig { resolution: 48, ..BakeConfig::default() };
        let out = bake_mesh(&f, &cams, DensityParams::new(0.01).unwrap(), &config).unwrap();
        let m = &out.mesh;
        assert!(m.is_closed() && m.is_edge_manifold());
        assert!(m.is_region_ordered());
        assert_eq!(m.central_prefix(), (m.vertex_count(), m.triangle_count()));
        assert!(out.report.hull_coverage >= 0.9975);
        let h = 4.0 / 48.0;
        let tol = 2.0 * h * 3f64.sqrt();
        let mut on_sphere = 0;
        for p in &m.positions {
            let r = (*p - Vec3::new(0.05, 0.0, 0.0)).norm();
            if (r - 0.5).abs() < tol {
                on_sphere += 1;
            } else {
                assert!(out.hull.inside_value(*p).abs() < tol, "radius {r}");
            }
        }
        assert!(on_sphere * 10 > m.vertex_count() * 9);
        assert_eq!(out.contracted.triangles, m.triangles);
        assert_eq!(out.contracted.positions[0].to_f32(), m.positions[0].to_f32());
    }
}
