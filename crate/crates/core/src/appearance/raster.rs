//! Software rasterization of a mesh into per-pixel triangle ids and
//! perspective-correct barycentrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::bake::TriangleMesh;
use crate::camera::Camera;
use crate::math::Vec3;
use crate::par::map_ordered;

/// Closest front-facing triangle under a pixel center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit {
    pub triangle: u32,
    pub vertices: [u32; 3],
    pub barycentric: [f64; 3],
    /// Camera-space depth.
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewCache {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Option<PixelHit>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterCache {
    pub views: Vec<ViewCache>,
}

impl ViewCache {
    pub fn hit_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_some()).count()
    }
}

/// Rasterizes one view. A pixel is covered when the ray through its center
/// meets a triangle whose outward side faces the camera; among several, the
/// nearest wins and equal depths go to the lower triangle id.
pub fn rasterize(mesh: &TriangleMesh, camera: &Camera) -> ViewCache {
    let (w, h) = (camera.width(), camera.height());
    let k = camera.intrinsics;
    let cam: Vec<Vec3> = mesh.positions.iter().map(|&p| camera.pose.to_camera(p)).collect();
    let mut depth = vec![f64::INFINITY; w * h];
    let mut pixels: Vec<Option<PixelHit>> = vec![None; w * h];
    for (ti, tri) in mesh.triangles.iter().enumerate() {
        let v = [cam[tri[0] as usize], cam[tri[1] as usize], cam[tri[2] as usize]];
        if v.iter().all(|p| p.z <= 0.0) {
            continue;
        }
        let det = v[0].dot(v[1].cross(v[2]));
        // back-facing or edge-on
        if !(det < 0.0) {
            continue;
        }
        let (mut u0, mut u1, mut v0, mut v1) = (0usize, w, 0usize, h);
        if v.iter().all(|p| p.z > 1e-9) {
            let mut lo = (f64::INFINITY, f64::INFINITY);
            let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for p in &v {
                let x = p.x / p.z * k.focal + k.cx;
                let y = p.y / p.z * k.focal + k.cy;
                lo = (lo.0.min(x), lo.1.min(y));
                hi = (hi.0.max(x), hi.1.max(y));
            }
            let clampi = |x: f64, n: usize| -> usize {
                if x <= 0.0 {
                    0
                } else if x >= n as f64 {
                    n
                } else {
                    x as usize
                }
            };
            // pixel centers at +0.5; widen by one pixel for rounding safety
            u0 = clampi(lo.0 - 1.0, w);
            u1 = clampi(hi.0 + 1.0, w);
            v0 = clampi(lo.1 - 1.0, h);
            v1 = clampi(hi.1 + 1.0, h);
        }
        let e0 = v[1].cross(v[2]);
        let e1 = v[2].cross(v[0]);
        let e2 = v[0].cross(v[1]);
        for py in v0..v1 {
            for px in u0..u1 {
                let r = camera.pixel_direction_camera(px, py);
                let b = [r.dot(e0), r.dot(e1), r.dot(e2)];
                if b.iter().any(|&x| x > 0.0) {
                    continue;
                }
                let sum = b[0] + b[1] + b[2];
                if !(sum < 0.0) {
                    continue;
                }
                let z = det / sum;
                let idx = py * w + px;
                if z > 0.0 && z < depth[idx] {
                    depth[idx] = z;
                    pixels[idx] = Some(PixelHit {
                        triangle: ti as u32,
                        vertices: *tri,
                        barycentric: [b[0] / sum, b[1] / sum, b[2] / sum],
                        depth: z,
                    });
                }
            }
        }
    }
    ViewCache {
        width: w,
        height: h,
        pixels,
    }
}

pub fn rasterize_views(mesh: &TriangleMesh, cameras: &[Camera]) -> RasterCache {
    RasterCache {
        views: map_ordered(cameras, |_, c| rasterize(mesh, c)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bake::{marching_cubes, BakeGrid};
    use crate::camera::{Intrinsics, Pose};
    use crate::field::SdfField;

    fn camera(res: usize) -> Camera {
        Camera::new(
            Intrinsics::from_fov(res, res, 40.0),
            Pose::look_at(Vec3::new(0.0, -3.0, 0.0), Vec3::ZERO, Vec3::Z),
        )
        .unwrap()
    }

    #[test]
    fn screen_filling_triangle_covers_everything() {
        let cam = camera(32);
        // counter-clockwise seen from the camera at -y
        let mesh = TriangleMesh::new(
            vec![Vec3::new(-50.0, 0.0, -50.0), Vec3::new(50.0, 0.0, -50.0), Vec3::new(0.0, 0.0, 100.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let view = rasterize(&mesh, &cam);
        assert_eq!(view.hit_count(), 32 * 32);
        for p in view.pixels.iter().flatten() {
            let s: f64 = p.barycentric.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(p.barycentric.iter().all(|&b| b >= 0.0));
        }
        let flipped = TriangleMesh::new(mesh.positions.clone(), vec![[0, 2, 1]]).unwrap();
        assert_eq!(rasterize(&flipped, &cam).hit_count(), 0);
    }

    #[test]
    fn nearer_triangle_wins() {
        let cam = camera(16);
        let quad = |y: f64| {
            vec![Vec3::new(-50.0, y, -50.0), Vec3::new(50.0, y, -50.0), Vec3::new(0.0, y, 100.0)]
        };
        let mut pos = quad(1.0);
        pos.extend(quad(-0.5));
        let mesh = TriangleMesh::new(pos, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        let view = rasterize(&mesh, &cam);
        assert!(view.pixels.iter().all(|p| p.unwrap().triangle == 1));
        // coincident copies: lower id wins
        let mut pos = quad(0.0);
        pos.extend(quad(0.0));
        let mesh = TriangleMesh::new(pos, vec![[3, 4, 5], [0, 1, 2]]).unwrap();
        assert!(rasterize(&mesh, &cam).pixels.iter().all(|p| p.unwrap().triangle == 0));
    }

    #[test]
    fn sphere_mask_matches_ray_cast() {
        let res = 256;
        let cam = camera(res);
        let mut grid = BakeGrid::new(128).unwrap();
        let f = SdfField::sphere(Vec3::new(0.1, 0.0, -0.05), 0.7);
        let mesh = marching_cubes(&mut grid, &f, 0.0, false).to_mesh(&grid);
        let view = rasterize(&mesh, &cam);
        let mut agree = 0;
        for v in 0..res {
            for u in 0..res {
                let d = cam.pixel_direction(u, v);
                let oc = cam.origin() - Vec3::new(0.1, 0.0, -0.05);
                let b = oc.dot(d);
                let hit = b * b - (oc.norm_squared() - 0.49) > 0.0;
                if hit == view.pixels[v * res + u].is_some() {
                    agree += 1;
                }
            }
        }
        assert!(agree as f64 / (res * res) as f64 > 0.99);
        // interior barycentrics are valid
        for p in view.pixels.iter().flatten() {
            assert!((p.barycentric.iter().sum::<f64>() - 1.0).abs() < 1e-5);
            assert!(p.barycentric.iter().all(|&b| b >= 0.0));
        }
    }
}
