//! TOML scene descriptions: analytic shapes with materials plus the camera
//! rigs used for training and held-out views.

use std::path::Path;

use bakedsdf_core::camera::{ring_cameras, sphere_cameras, Camera, Intrinsics};
use bakedsdf_core::field::SdfField;
use bakedsdf_core::scene::{Light, Material, Scene, SceneObject};
use bakedsdf_core::{Rgb, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{read, PipelineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ShapeSpec {
    Sphere { center: Vec3, radius: f64 },
    /// Half-space `normal . p <= offset`.
    Plane { normal: Vec3, offset: f64 },
    Cuboid { center: Vec3, half_extents: Vec3 },
    Union { children: Vec<ShapeSpec> },
    Intersection { children: Vec<ShapeSpec> },
    Difference { base: Box<ShapeSpec>, subtract: Box<ShapeSpec> },
}

impl ShapeSpec {
    pub fn to_field(&self) -> std::result::Result<SdfField, String> {
        Ok(match self {
            ShapeSpec::Sphere { center, radius } => {
                if !(*radius > 0.0) {
                    return Err(format!("sphere radius {radius} must be positive"));
                }
                SdfField::sphere(*center, *radius)
            }
            ShapeSpec::Plane { normal, offset } => {
                if !(normal.norm() > 0.0) {
                    return Err("plane normal must be non-zero".into());
                }
                SdfField::plane(*normal, *offset)
            }
            ShapeSpec::Cuboid { center, half_extents } => {
                if !(half_extents.min_elem() > 0.0) {
                    return Err("cuboid half extents must be positive".into());
                }
                SdfField::Cuboid { center: *center, half_extents: *half_extents }
            }
            ShapeSpec::Union { children } | ShapeSpec::Intersection { children } => {
                if children.is_empty() {
                    return Err("union and intersection need children".into());
                }
                let c = children.iter().map(ShapeSpec::to_field).collect::<std::result::Result<Vec<_>, _>>()?;
                if matches!(self, ShapeSpec::Union { .. }) {
                    SdfField::Union(c)
                } else {
                    SdfField::Intersection(c)
                }
            }
            ShapeSpec::Difference { base, subtract } => {
                SdfField::Difference(Box::new(base.to_field()?), Box::new(subtract.to_field()?))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    pub shape: ShapeSpec,
    pub material: Material,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RigKind {
    /// Horizontal ring at a fixed height.
    Ring,
    /// Fibonacci spiral over the full sphere.
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRig {
    #[serde(default = "default_rig")]
    pub kind: RigKind,
    pub count: usize,
    pub radius: f64,
    /// Ring height above the target; unused for sphere rigs.
    #[serde(default)]
    pub elevation: f64,
    #[serde(default)]
    pub target: Vec3,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
    /// Ring: angular offset in radians. Sphere: spiral offset in `[0, 1)`.
    #[serde(default)]
    pub phase: f64,
}

fn default_rig() -> RigKind {
    RigKind::Ring
}

impl CameraRig {
    pub fn cameras(&self) -> std::result::Result<Vec<Camera>, String> {
        if self.count == 0 || self.width == 0 || self.height == 0 {
            return Err("camera rig needs a positive count and image size".into());
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(format!("field of view {} outside (0, 180)", self.fov_deg));
        }
        if !(self.radius > 0.0) {
            return Err(format!("rig radius {} must be positive", self.radius));
        }
        let k = Intrinsics::from_fov(self.width, self.height, self.fov_deg);
        let cams = match self.kind {
            RigKind::Ring => ring_cameras(self.count, self.radius, self.elevation, self.target, k, self.phase),
            RigKind::Sphere => sphere_cameras(self.count, self.radius, self.target, k, self.phase),
        };
        for c in &cams {
            Camera::new(c.intrinsics, c.pose).map_err(|e| e.to_string())?;
        }
        Ok(cams)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    /// Radius of a world ball enclosing all content.
    pub bound_radius: f64,
    #[serde(default)]
    pub background: Rgb,
    #[serde(default)]
    pub light: Light,
    pub objects: Vec<ObjectSpec>,
    pub train_cameras: CameraRig,
    pub test_cameras: CameraRig,
}

impl SceneFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let scene: SceneFile = toml::from_str(text).map_err(|e| PipelineError::format(path, e.to_string()))?;
        scene.scene().map_err(|e| PipelineError::format(path, e))?;
        scene.train_cameras.cameras().map_err(|e| PipelineError::format(path, e))?;
        scene.test_cameras.cameras().map_err(|e| PipelineError::format(path, e))?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path)?;
        let text = String::from_utf8(bytes).map_err(|e| PipelineError::format(path, e.to_string()))?;
        Self::parse(&text, path)
    }

    pub fn scene(&self) -> std::result::Result<Scene, String> {
        if self.objects.is_empty() {
            return Err("scene has no objects".into());
        }
        if !(self.bound_radius > 0.0) {
            return Err("bound_radius must be positive".into());
        }
        if !(self.light.direction.norm() > 0.0) {
            return Err("light direction must be non-zero".into());
        }
        let objects = self
            .objects
            .iter()
            .map(|o| {
                Ok(SceneObject {
                    name: o.name.clone(),
                    shape: o.shape.to_field()?,
                    material: o.material,
                })
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        let mut scene = Scene::new(objects, self.bound_radius);
        scene.background = self.background;
        scene.light = Light {
            direction: self.light.direction.normalized(),
            ambient: self.light.ambient,
        };
        Ok(scene)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DESK: &str = include_str!("../../../scenes/desk.toml");

    #[test]
    fn desk_file_matches_builtin_scene() {
        let file = SceneFile::parse(DESK, Path::new("desk.toml")).unwrap();
        let scene = file.scene().unwrap();
        let builtin = bakedsdf_core::scene::desk_scene();
        assert_eq!(scene.objects, builtin.objects);
        assert_eq!(scene.bound_radius, builtin.bound_radius);
        assert_eq!(file.train_cameras.cameras().unwrap().len(), 32);
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let text = DESK.replacen("radius = 0.35", "radius = -1.0", 1);
        assert!(matches!(SceneFile::parse(&text, Path::new("x")), Err(PipelineError::Format { .. })));
        let text = DESK.replacen("type = \"sphere\"", "type = \"torus\"", 1);
        assert!(SceneFile::parse(&text, Path::new("x")).is_err());
        let text = DESK.replacen("count = 32", "count = 0", 1);
        assert!(SceneFile::parse(&text, Path::new("x")).is_err());
    }
}
