//! Binary containers for the trained stage-1 model (`.bsdf`) and fitted
//! appearance parameters (`.bapp`).
//!
//! Layout, little-endian: 4-byte magic, u32 version, u64 header length,
//! JSON header, u64 value count, f64 values.

use std::path::Path;

use bakedsdf_core::appearance::BakedAppearance;
use bakedsdf_core::bake::TriangleMesh;
use bakedsdf_core::field::{Mlp, MlpConfig};
use bakedsdf_core::neural::NeuralScene;
use bakedsdf_core::Rgb;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{read, write, PipelineError, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"BSDF";
pub const APPEARANCE_MAGIC: &[u8; 4] = b"BAPP";
const VERSION: u32 = 1;

fn encode<H: Serialize>(magic: &[u8; 4], header: &H, values: &[f64]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("headers serialize");
    let mut out = Vec::with_capacity(24 + json.len() + 8 * values.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode<H: DeserializeOwned>(magic: &[u8; 4], bytes: &[u8], path: &Path) -> Result<(H, Vec<f64>)> {
    let bad = |m: &str| PipelineError::format(path, m.to_string());
    let take = |at: usize, n: usize| bytes.get(at..at + n).ok_or_else(|| bad("truncated file"));
    if take(0, 4)? != magic {
        return Err(bad("wrong magic number"));
    }
    let version = u32::from_le_bytes(take(4, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(take(8, 8)?.try_into().unwrap()) as usize;
    let header: H = serde_json::from_slice(take(16, hlen)?).map_err(|e| bad(&e.to_string()))?;
    let at = 16 + hlen;
    let count = u64::from_le_bytes(take(at, 8)?.try_into().unwrap()) as usize;
    let body = take(at + 8, count.checked_mul(8).ok_or_else(|| bad("bad value count"))?)?;
    if bytes.len() != at + 8 + 8 * count {
        return Err(bad("trailing bytes"));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub mlp: MlpConfig,
    /// Density scale reached at the end of training.
    pub beta: f64,
    pub near: f64,
    pub bound_radius: f64,
}

pub fn save_model(path: &Path, model: &NeuralScene, header: &ModelHeader) -> Result<()> {
    write(path, &encode(MODEL_MAGIC, header, model.mlp.params()))
}

pub fn load_model(path: &Path) -> Result<(NeuralScene, ModelHeader)> {
    let (header, params): (ModelHeader, _) = decode(MODEL_MAGIC, &read(path)?, path)?;
    let mlp = Mlp::from_params(header.mlp.clone(), params).map_err(|e| PipelineError::format(path, e.to_string()))?;
    let model = NeuralScene::from_mlp(mlp).map_err(|e| PipelineError::format(path, e.to_string()))?;
    Ok((model, header))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppearanceHeader {
    pub central_lobes: usize,
    pub periphery_lobes: usize,
    pub lambda_max: f64,
    pub vertex_count: usize,
    pub clear_color: Rgb,
}

pub fn save_appearance(path: &Path, appearance: &BakedAppearance) -> Result<()> {
    let header = AppearanceHeader {
        central_lobes: appearance.central_lobes,
        periphery_lobes: appearance.periphery_lobes,
        lambda_max: appearance.lambda_max,
        vertex_count: appearance.vertex_count(),
        clear_color: appearance.clear_color,
    };
    write(path, &encode(APPEARANCE_MAGIC, &header, &appearance.params))
}

/// Loads appearance parameters for `mesh`, whose vertices fix the layout.
pub fn load_appearance(path: &Path, mesh: &TriangleMesh) -> Result<BakedAppearance> {
    let (h, params): (AppearanceHeader, _) = decode(APPEARANCE_MAGIC, &read(path)?, path)?;
    if h.vertex_count != mesh.vertex_count() {
        return Err(PipelineError::format(
            path,
            format!("appearance has {} vertices, mesh has {}", h.vertex_count, mesh.vertex_count()),
        ));
    }
    let mut app = BakedAppearance::new(mesh, h.central_lobes, h.periphery_lobes, h.lambda_max)
        .map_err(|e| PipelineError::format(path, e.to_string()))?;
    if params.len() != app.params.len() {
        return Err(PipelineError::format(path, "parameter count does not match the mesh layout"));
    }
    app.params = params;
    app.clear_color = h.clear_color;
    Ok(app)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bakedsdf_core::neural::default_mlp_config;
    use bakedsdf_core::rng::substream;
    use bakedsdf_core::Vec3;

    #[test]
    fn model_round_trips_exactly() {
        let model = NeuralScene::new(default_mlp_config(), &mut substream(3, "t")).unwrap();
        let header = ModelHeader { mlp: default_mlp_config(), beta: 1e-3, near: 0.05, bound_radius: 1.0 };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bsdf");
        save_model(&path, &model, &header).unwrap();
        let (back, h) = load_model(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(h, header);
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bsdf");
        let bytes = encode(MODEL_MAGIC, &1u32, &[1.0, 2.0]);
        for cut in [0, 3, 10, bytes.len() - 1] {
            std::fs::write(&path, &bytes[..cut]).unwrap();
            assert!(load_model(&path).is_err());
        }
        std::fs::write(&path, encode(APPEARANCE_MAGIC, &1u32, &[])).unwrap();
        assert!(load_model(&path).is_err());
    }

    #[test]
    fn appearance_round_trips_and_checks_layout() {
        let mesh = TriangleMesh::new(vec![Vec3::ZERO, Vec3::X, Vec3::new(0.0, 3.0, 0.0)], vec![[0, 1, 2]]).unwrap();
        let mut app = BakedAppearance::new(&mesh, 3, 1, 40.0).unwrap();
        for (i, p) in app.params.iter_mut().enumerate() {
            *p = i as f64 * 0.01;
        }
        app.clear_color = Rgb::new(0.1, 0.2, 0.3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bapp");
        save_appearance(&path, &app).unwrap();
        assert_eq!(load_appearance(&path, &mesh).unwrap(), app);
        let other = TriangleMesh::new(vec![Vec3::ZERO, Vec3::X, Vec3::Y], vec![[0, 1, 2]]).unwrap();
        assert!(load_appearance(&path, &other).is_err());
    }
}
