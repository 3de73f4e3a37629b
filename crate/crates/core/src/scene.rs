//! Analytic scenes: SDF primitives with materials, an exact sphere tracer
//! for ground-truth images, and an adapter that exposes a scene as a
//! radiance field in contracted coordinates.

use alloc::string::String;
use alloc::vec::Vec;

use crate::camera::{Camera, Image};
use crate::field::{ContractedPoint, SdfField};
use crate::math::{exp, Rgb, Vec3};
use crate::volume::{RadianceField, Ray};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Material {
    pub diffuse: Rgb,
    #[cfg_attr(feature = "serde", serde(default))]
    pub specular: Rgb,
    #[cfg_attr(feature = "serde", serde(default))]
    pub shininess: f64,
}

impl Material {
    pub fn diffuse(color: Rgb) -> Self {
        Self {
            diffuse: color,
            specular: Rgb::ZERO,
            shininess: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Light {
    /// Unit direction pointing toward the light.
    pub direction: Vec3,
    pub ambient: f64,
}

impl Default for Light {
    fn default() -> Self {
        Self {
            direction: Vec3::new(0.3, -0.4, 1.0).normalized(),
            ambient: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub name: String,
    pub shape: SdfField,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub light: Light,
    /// Radius of a ball around the origin enclosing all content.
    pub bound_radius: f64,
    pub background: Rgb,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub object: usize,
    pub point: Vec3,
    pub normal: Vec3,
}

const TRACE_EPS: f64 = 1e-9;
const TRACE_MAX_STEPS: usize = 4096;

impl Scene {
    pub fn new(objects: Vec<SceneObject>, bound_radius: f64) -> Self {
        Self {
            objects,
            light: Light::default(),
            bound_radius,
            background: Rgb::ZERO,
        }
    }

    /// Distance to the nearest object and its index.
    pub fn distance(&self, p: Vec3) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (i, o) in self.objects.iter().enumerate() {
            let d = o.shape.eval_at(p);
            if d < best.0 {
                best = (d, i);
            }
        }
        best
    }

    pub fn shape(&self) -> SdfField {
        SdfField::Union(self.objects.iter().map(|o| o.shape.clone()).collect())
    }

    /// Diffuse-plus-specular shading. `to_eye` points from the surface toward the viewer.
    pub fn shade(&self, object: usize, normal: Vec3, to_eye: Vec3) -> Rgb {
        let m = &self.objects[object].material;
        let l = self.light.direction;
        let lambert = normal.dot(l).max(0.0);
        let mut c = m.diffuse * (self.light.ambient + (1.0 - self.light.ambient) * lambert);
        if m.shininess > 0.0 {
            let reflected = normal * (2.0 * normal.dot(to_eye)) - to_eye;
            c += m.specular * exp(m.shininess * (reflected.dot(l) - 1.0));
        }
        c
    }

    /// Sphere tracing from `ray.near` to `ray.far`.
    pub fn trace(&self, ray: &Ray) -> Option<Hit> {
        let clipped = ray.clip_to_ball(self.bound_radius)?;
        let mut t = clipped.near;
        for _ in 0..TRACE_MAX_STEPS {
            if t > clipped.far {
                return None;
            }
            let p = ray.at(t);
            let (d, object) = self.distance(p);
            if d < TRACE_EPS {
                let normal = self.objects[object].shape.eval_with_gradient(p).1.normalized();
                return Some(Hit {
                    t,
                    object,
                    point: p,
                    normal,
                });
            }
            t += d;
        }
        None
    }

    pub fn render_pixel(&self, camera: &Camera, u: usize, v: usize) -> Rgb {
        let dir = camera.pixel_direction(u, v);
        let ray = Ray {
            origin: camera.origin(),
            direction: dir,
            near: 0.0,
            far: f64::MAX,
        };
        match self.trace(&ray) {
            Some(hit) => self.shade(hit.object, hit.normal, -dir).clamp(0.0, 1.0),
            None => self.background,
        }
    }

    pub fn render(&self, camera: &Camera) -> Image {
        let mut img = Image::new(camera.width(), camera.height());
        for v in 0..camera.height() {
            for u in 0..camera.width() {
                img.set(u, v, self.render_pixel(camera, u, v));
            }
        }
        img
    }
}

/// A specular ball resting above a round table top, inside the unit ball.
pub fn desk_scene() -> Scene {
    Scene::new(
        alloc::vec![
            SceneObject {
                name: "ball".into(),
                shape: SdfField::sphere(Vec3::new(0.0, 0.0, 0.05), 0.35),
                material: Material {
                    diffuse: Rgb::new(0.75, 0.25, 0.2),
                    specular: Rgb::splat(0.6),
                    shininess: 8.0,
                },
            },
            SceneObject {
                name: "table".into(),
                shape: SdfField::Intersection(alloc::vec![
                    SdfField::plane(Vec3::Z, -0.3),
                    SdfField::sphere(Vec3::ZERO, 0.9),
                ]),
                material: Material::diffuse(Rgb::new(0.35, 0.55, 0.4)),
            },
        ],
        1.0,
    )
}

/// Reads a scene's coordinates as contracted coordinates. Objects inside the
/// unit ball are unaffected, since the contraction is the identity there.
pub struct ContractedScene<'a>(pub &'a Scene);

impl RadianceField for ContractedScene<'_> {
    fn query(&self, points: &[ContractedPoint], direction: Vec3, sdf: &mut [f64], color: &mut [Rgb]) {
        let scene = self.0;
        for ((q, s), c) in points.iter().zip(sdf.iter_mut()).zip(color.iter_mut()) {
            let (d, obj) = scene.distance(q.0);
            *s = d;
            let normal = scene.objects[obj].shape.eval_with_gradient(q.0).1.normalized();
            *c = scene.shade(obj, normal, -direction);
        }
    }
}
