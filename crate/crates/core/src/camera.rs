//! Pinhole cameras, posed images and pixel rays.
//!
//! Camera space is x right, y down, z forward. Pixel `(u, v)` covers
//! `[u, u+1) x [v, v+1)` and its ray passes through the pixel center.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{tan, Mat3, Rgb, Vec3};
use crate::volume::Ray;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Centered principal point with the given vertical field of view in degrees.
    pub fn from_fov(width: usize, height: usize, fov_y_deg: f64) -> Self {
        let focal = 0.5 * height as f64 / tan(0.5 * fov_y_deg.to_radians());
        Self {
            width,
            height,
            focal,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
        }
    }
}

/// Camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    /// Camera at `eye` looking at `target`, with `up` roughly upward in world space.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (target - eye).normalized();
        let right = forward.cross(up).normalized();
        let down = forward.cross(right);
        Self {
            rotation: Mat3::from_cols(right, down, forward),
            translation: eye,
        }
    }

    pub fn to_world(&self, p_cam: Vec3) -> Vec3 {
        self.rotation.mul_vec(p_cam) + self.translation
    }

    pub fn to_camera(&self, p_world: Vec3) -> Vec3 {
        self.rotation.transpose().mul_vec(p_world - self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Result<Self> {
        if intrinsics.width == 0 || intrinsics.height == 0 || !(intrinsics.focal > 0.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "degenerate intrinsics {intrinsics:?}"
            )));
        }
        if pose.rotation.orthonormality_error() > 1e-6 {
            return Err(Error::InvalidConfig("camera rotation is not orthonormal".into()));
        }
        Ok(Self { intrinsics, pose })
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn pixel_count(&self) -> usize {
        self.intrinsics.width * self.intrinsics.height
    }

    pub fn origin(&self) -> Vec3 {
        self.pose.translation
    }

    /// Camera-space direction through the pixel center, with `z == 1`.
    #[inline]
    pub fn pixel_direction_camera(&self, u: usize, v: usize) -> Vec3 {
        let k = &self.intrinsics;
        Vec3::new(
            (u as f64 + 0.5 - k.cx) / k.focal,
            (v as f64 + 0.5 - k.cy) / k.focal,
            1.0,
        )
    }

    /// Unit world-space direction through the pixel center.
    #[inline]
    pub fn pixel_direction(&self, u: usize, v: usize) -> Vec3 {
        self.pose
            .rotation
            .mul_vec(self.pixel_direction_camera(u, v))
            .normalized()
    }

    /// Ray through the pixel center clipped to `[near, far]`.
    pub fn ray(&self, u: usize, v: usize, near: f64, far: f64) -> Result<Ray> {
        Ray::new(self.origin(), self.pixel_direction(u, v), near, far)
    }
}

/// Linear RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, Rgb::ZERO)
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Rgb {
        self.pixels[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, c: Rgb) {
        self.pixels[v * self.width + u] = c;
    }

    pub fn clamped(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| p.clamp(0.0, 1.0)).collect(),
        }
    }
}

/// A training image with its camera.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedImage {
    pub image: Image,
    pub camera: Camera,
}

impl PosedImage {
    pub fn new(image: Image, camera: Camera) -> Result<Self> {
        if image.width != camera.width() || image.height != camera.height() {
            return Err(Error::SizeMismatch(
                image.width,
                image.height,
                camera.width(),
                camera.height(),
            ));
        }
        Ok(Self { image, camera })
    }
}

/// Cameras on a horizontal ring around `target`, all looking at it.
pub fn ring_cameras(
    count: usize,
    radius: f64,
    height: f64,
    target: Vec3,
    intrinsics: Intrinsics,
    phase: f64,
) -> Vec<Camera> {
    (0..count)
        .map(|i| {
            let ang = phase + 2.0 * core::f64::consts::PI * i as f64 / count as f64;
            let eye = target + Vec3::new(radius * crate::math::cos(ang), radius * crate::math::sin(ang), height);
            Camera {
                intrinsics,
                pose: Pose::look_at(eye, target, Vec3::Z),
            }
        })
        .collect()
}

/// Cameras spread over a sphere around `target` on a Fibonacci spiral.
/// `offset` in `[0, 1)` shifts the spiral to produce a disjoint set.
pub fn sphere_cameras(count: usize, radius: f64, target: Vec3, intrinsics: Intrinsics, offset: f64) -> Vec<Camera> {
    let golden = core::f64::consts::PI * (3.0 - crate::math::sqrt(5.0));
    (0..count)
        .map(|i| {
            let k = i as f64 + 0.25 + 0.5 * offset;
            let z = 1.0 - 2.0 * k / count as f64;
            let r = crate::math::sqrt((1.0 - z * z).max(0.0));
            let a = golden * k;
            let eye = target + Vec3::new(r * crate::math::cos(a), r * crate::math::sin(a), z) * radius;
            Camera {
                intrinsics,
                pose: Pose::look_at(eye, target, Vec3::Z),
            }
        })
        .collect()
}
