//! On-disk datasets: a directory of PNG images plus `cameras.json`.

use std::path::{Path, PathBuf};

use bakedsdf_core::camera::{Camera, Intrinsics, PosedImage, Pose};
use bakedsdf_core::math::Mat3;
use serde::{Deserialize, Serialize};

use crate::error::{read_json, write_json, PipelineError, Result};
use crate::image_io::{read_png, write_png16};

pub const DATASET_FORMAT: &str = "bakedsdf-dataset/1";
pub const CAMERA_FILE: &str = "cameras.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One image and its pinhole camera. `rotation` holds the rows of the
/// camera-to-world rotation; camera space is x right, y down, z forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub file: String,
    pub split: Split,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl CameraRecord {
    pub fn from_camera(camera: &Camera, file: String, split: Split) -> Self {
        let k = camera.intrinsics;
        Self {
            file,
            split,
            width: k.width,
            height: k.height,
            focal: k.focal,
            cx: k.cx,
            cy: k.cy,
            rotation: camera.pose.rotation.to_rows(),
            translation: camera.pose.translation.to_array(),
        }
    }

    pub fn camera(&self) -> bakedsdf_core::Result<Camera> {
        Camera::new(
            Intrinsics {
                width: self.width,
                height: self.height,
                focal: self.focal,
                cx: self.cx,
                cy: self.cy,
            },
            Pose {
                rotation: Mat3::from_rows(self.rotation),
                translation: self.translation.into(),
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub format: String,
    pub frames: Vec<CameraRecord>,
}

impl CameraFile {
    pub fn load(path: &Path) -> Result<Self> {
        let file: CameraFile = read_json(path)?;
        if file.format != DATASET_FORMAT {
            return Err(PipelineError::format(path, format!("unknown dataset format {:?}", file.format)));
        }
        for f in &file.frames {
            f.camera().map_err(|e| PipelineError::format(path, format!("{}: {e}", f.file)))?;
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn cameras(&self, split: Split) -> Vec<Camera> {
        self.frames
            .iter()
            .filter(|f| f.split == split)
            .map(|f| f.camera().expect("validated on load"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<PosedImage>,
    pub test: Vec<PosedImage>,
}

fn image_name(split: Split, i: usize) -> String {
    match split {
        Split::Train => format!("train_{i:03}.png"),
        Split::Test => format!("test_{i:03}.png"),
    }
}

/// Writes images and the camera file; returns every path written.
pub fn write_dataset(dir: &Path, train: &[PosedImage], test: &[PosedImage]) -> Result<Vec<PathBuf>> {
    let mut frames = Vec::new();
    let mut paths = Vec::new();
    for (split, images) in [(Split::Train, train), (Split::Test, test)] {
        for (i, p) in images.iter().enumerate() {
            let name = image_name(split, i);
            let path = dir.join(&name);
            write_png16(&path, &p.image)?;
            paths.push(path);
            frames.push(CameraRecord::from_camera(&p.camera, name, split));
        }
    }
    let cam_path = dir.join(CAMERA_FILE);
    CameraFile {
        format: DATASET_FORMAT.into(),
        frames,
    }
    .save(&cam_path)?;
    paths.push(cam_path);
    Ok(paths)
}

/// Paths of the camera file and every image it references.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let file = CameraFile::load(&dir.join(CAMERA_FILE))?;
    let mut paths: Vec<PathBuf> = file.frames.iter().map(|f| dir.join(&f.file)).collect();
    paths.push(dir.join(CAMERA_FILE));
    Ok(paths)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let file = CameraFile::load(&dir.join(CAMERA_FILE))?;
    let mut ds = Dataset {
        train: Vec::new(),
        test: Vec::new(),
    };
    for f in &file.frames {
        let path = dir.join(&f.file);
        let image = read_png(&path)?;
        let posed = PosedImage::new(image, f.camera()?).map_err(|e| PipelineError::format(&path, e.to_string()))?;
        match f.split {
            Split::Train => ds.train.push(posed),
            Split::Test => ds.test.push(posed),
        }
    }
    if ds.train.is_empty() {
        return Err(PipelineError::format(&dir.join(CAMERA_FILE), "dataset has no training images"));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bakedsdf_core::camera::{ring_cameras, Image};
    use bakedsdf_core::{Rgb, Vec3};

    #[test]
    fn camera_file_round_trips_bit_exactly() {
        let cams = ring_cameras(5, 2.6, 1.2, Vec3::new(0.1, 0.0, 0.0), Intrinsics::from_fov(16, 12, 45.0), 0.3);
        let file = CameraFile {
            format: DATASET_FORMAT.into(),
            frames: cams.iter().enumerate().map(|(i, c)| CameraRecord::from_camera(c, format!("{i}.png"), Split::Train)).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CAMERA_FILE);
        file.save(&path).unwrap();
        let back = CameraFile::load(&path).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.cameras(Split::Train), cams);
        assert!(back.cameras(Split::Test).is_empty());
    }

    #[test]
    fn dataset_round_trips() {
        let cams = ring_cameras(3, 2.6, 1.2, Vec3::ZERO, Intrinsics::from_fov(8, 8, 45.0), 0.0);
        let posed: Vec<PosedImage> = cams
            .iter()
            .enumerate()
            .map(|(i, c)| PosedImage::new(Image::filled(8, 8, Rgb::new(0.1 * i as f64, 0.5, 1.0)), *c).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let written = write_dataset(dir.path(), &posed[..2], &posed[2..]).unwrap();
        assert_eq!(written.len(), 4);
        assert_eq!(dataset_files(dir.path()).unwrap().len(), 4);
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.train.len(), 2);
        assert_eq!(ds.test[0].camera, cams[2]);
        assert_eq!(ds.train[1].image, crate::image_io::quantize16(&posed[1].image));
    }

    #[test]
    fn wrong_format_tag_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CAMERA_FILE);
        std::fs::write(&path, r#"{"format":"other","frames":[]}"#).unwrap();
        assert!(CameraFile::load(&path).is_err());
    }
}
