//! Binary glTF 2.0 export and import of baked assets; see `docs/FORMAT.md`.
//!
//! Vertices are stored central first. The central primitive draws the
//! triangles whose corners are all central and carries every central lobe;
//! the periphery primitive draws the rest with the periphery lobe budget.
//! Attributes are normalized `u8` with a 4-byte stride; their levels are
//! exactly the quantizer's training-time levels.

use std::io::{Read, Write};
use std::path::Path;

use bakedsdf_core::appearance::model::{quantize_level, decode_level, MEAN_RANGE, UNIT_RANGE};
use bakedsdf_core::appearance::BakedAppearance;
use bakedsdf_core::bake::TriangleMesh;
use bakedsdf_core::{Rgb, Vec3};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{read, write, PipelineError, Result};

pub const FORMAT_NAME: &str = "bakedsdf-asset";
pub const FORMAT_VERSION: u32 = 1;
const GLB_MAGIC: u32 = 0x4654_6C67;
const CHUNK_JSON: u32 = 0x4E4F_534A;
const CHUNK_BIN: u32 = 0x004E_4942;
const FLOAT: u32 = 5126;
const UNSIGNED_BYTE: u32 = 5121;
const UNSIGNED_INT: u32 = 5125;
const ARRAY_BUFFER: u32 = 34962;
const ELEMENT_ARRAY_BUFFER: u32 = 34963;

/// Scene-level metadata stored under `extras.bakedsdf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetInfo {
    pub format: String,
    pub version: u32,
    pub central_lobes: usize,
    pub periphery_lobes: usize,
    pub lambda_max: f64,
    /// 8-bit levels of the clear color.
    pub clear_color: [u8; 3],
    pub vertex_count: usize,
    pub central_vertex_count: usize,
    pub triangle_count: usize,
    pub central_triangle_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Asset {
    pub mesh: TriangleMesh,
    /// Decoded (already quantized) parameters.
    pub appearance: BakedAppearance,
    pub info: AssetInfo,
}

pub fn diffuse_attribute() -> &'static str {
    "_DIFFUSE"
}

pub fn lobe_attribute(lobe: usize, part: &str) -> String {
    format!("_LOBE{lobe}_{part}")
}

struct BinWriter {
    bin: Vec<u8>,
    views: Vec<Value>,
}

impl BinWriter {
    fn view(&mut self, name: &str, data: &[u8], stride: Option<usize>, target: u32) -> usize {
        while self.bin.len() % 4 != 0 {
            self.bin.push(0);
        }
        let mut v = json!({
            "name": name,
            "buffer": 0,
            "byteOffset": self.bin.len(),
            "byteLength": data.len(),
            "target": target,
        });
        if let Some(s) = stride {
            v["byteStride"] = json!(s);
        }
        self.bin.extend_from_slice(data);
        self.views.push(v);
        self.views.len() - 1
    }
}

/// Per-vertex `u8` vectors padded to 4 bytes.
fn padded(levels: impl Iterator<Item = [u8; 3]>) -> Vec<u8> {
    levels.flat_map(|[a, b, c]| [a, b, c, 0]).collect()
}

/// Encodes `mesh` with the quantized `appearance` as an uncompressed GLB.
/// The mesh must list central vertices and all-central triangles first.
pub fn encode_glb(mesh: &TriangleMesh, appearance: &BakedAppearance) -> Result<Vec<u8>> {
    let mismatch = |m: String| PipelineError::Core(bakedsdf_core::Error::AttributeMismatch(m));
    let n = mesh.vertex_count();
    if appearance.vertex_count() != n {
        return Err(mismatch(format!("appearance has {} vertices, mesh has {n}", appearance.vertex_count())));
    }
    if !mesh.is_region_ordered() {
        return Err(mismatch("mesh is not ordered central-first".into()));
    }
    let (nc, tc) = mesh.central_prefix();
    if (0..n).any(|v| appearance.central[v] != (v < nc)) {
        return Err(mismatch("appearance regions disagree with vertex positions".into()));
    }
    let (cl, pl) = (appearance.central_lobes, appearance.periphery_lobes);
    let levels = appearance.levels();
    let block = |v: usize| &levels[appearance.offset(v)..];
    let mut w = BinWriter { bin: Vec::new(), views: Vec::new() };
    let mut accessors: Vec<Value> = Vec::new();
    let mut accessor = |view: usize, count: usize, ty: &str, comp: u32, normalized: bool, minmax: Option<(Vec3, Vec3)>| {
        let mut a = json!({ "bufferView": view, "byteOffset": 0, "componentType": comp, "count": count, "type": ty });
        if normalized {
            a["normalized"] = json!(true);
        }
        if let Some((lo, hi)) = minmax {
            a["min"] = json!(lo.to_f32());
            a["max"] = json!(hi.to_f32());
        }
        accessors.push(a);
        accessors.len() - 1
    };
    let bounds = |r: std::ops::Range<usize>| {
        let mut lo = Vec3::splat(f64::INFINITY);
        let mut hi = Vec3::splat(f64::NEG_INFINITY);
        for p in &mesh.positions[r] {
            lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        (lo, hi)
    };

    let pos: Vec<u8> = mesh.positions.iter().flat_map(|p| p.to_f32()).flat_map(f32::to_le_bytes).collect();
    let pos_view = w.view("POSITION", &pos, Some(12), ARRAY_BUFFER);
    let diffuse_view = w.view(diffuse_attribute(), &padded((0..n).map(|v| [block(v)[0], block(v)[1], block(v)[2]])), Some(4), ARRAY_BUFFER);
    // lobe k is stored for every vertex when k < periphery budget, else for central vertices only
    let mut lobe_views = Vec::new();
    for k in 0..cl {
        let count = if k < pl { n } else { nc };
        let slot = |v: usize, i: usize| block(v)[3 + 7 * k + i];
        let mean = padded((0..count).map(|v| [slot(v, 0), slot(v, 1), slot(v, 2)]));
        let color = padded((0..count).map(|v| [slot(v, 3), slot(v, 4), slot(v, 5)]));
        let width = padded((0..count).map(|v| [slot(v, 6), 0, 0]));
        lobe_views.push([
            w.view(&lobe_attribute(k, "MEAN"), &mean, Some(4), ARRAY_BUFFER),
            w.view(&lobe_attribute(k, "COLOR"), &color, Some(4), ARRAY_BUFFER),
            w.view(&lobe_attribute(k, "WIDTH"), &width, Some(4), ARRAY_BUFFER),
        ]);
    }
    let mut primitives = Vec::new();
    for (range, count, lobes, name) in [(0..tc, nc, cl, "central"), (tc..mesh.triangle_count(), n, pl, "periphery")] {
        if range.is_empty() {
            continue;
        }
        let idx: Vec<u8> = mesh.triangles[range.clone()].iter().flatten().flat_map(|i| i.to_le_bytes()).collect();
        let idx_view = w.view(&format!("INDICES_{name}"), &idx, None, ELEMENT_ARRAY_BUFFER);
        let mut attrs = serde_json::Map::new();
        attrs.insert("POSITION".into(), json!(accessor(pos_view, count, "VEC3", FLOAT, false, Some(bounds(0..count)))));
        attrs.insert(diffuse_attribute().into(), json!(accessor(diffuse_view, count, "VEC3", UNSIGNED_BYTE, true, None)));
        for (k, views) in lobe_views.iter().enumerate().take(lobes) {
            attrs.insert(lobe_attribute(k, "MEAN"), json!(accessor(views[0], count, "VEC3", UNSIGNED_BYTE, true, None)));
            attrs.insert(lobe_attribute(k, "COLOR"), json!(accessor(views[1], count, "VEC3", UNSIGNED_BYTE, true, None)));
            attrs.insert(lobe_attribute(k, "WIDTH"), json!(accessor(views[2], count, "SCALAR", UNSIGNED_BYTE, true, None)));
        }
        let indices = accessor(idx_view, 3 * range.len(), "SCALAR", UNSIGNED_INT, false, None);
        primitives.push(json!({ "attributes": attrs, "indices": indices, "mode": 4, "extras": { "region": name, "lobes": lobes } }));
    }
    while w.bin.len() % 4 != 0 {
        w.bin.push(0);
    }
    let info = AssetInfo {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        central_lobes: cl,
        periphery_lobes: pl,
        lambda_max: appearance.lambda_max,
        clear_color: appearance.clear_color.to_array().map(|c| quantize_level(c, 0.0, 1.0)),
        vertex_count: n,
        central_vertex_count: nc,
        triangle_count: mesh.triangle_count(),
        central_triangle_count: tc,
    };
    let doc = json!({
        "asset": { "version": "2.0", "generator": "bakedsdf" },
        "extras": { "bakedsdf": info },
        "scene": 0,
        "scenes": [{ "nodes": [0] }],
        "nodes": [{ "mesh": 0 }],
        "meshes": [{ "primitives": primitives }],
        "buffers": [{ "byteLength": w.bin.len() }],
        "bufferViews": w.views,
        "accessors": accessors,
    });
    let mut json_bytes = serde_json::to_vec(&doc).expect("document serializes");
    while json_bytes.len() % 4 != 0 {
        json_bytes.push(b' ');
    }
    let total = 12 + 8 + json_bytes.len() + 8 + w.bin.len();
    let mut out = Vec::with_capacity(total);
    for word in [GLB_MAGIC, 2, total as u32, json_bytes.len() as u32, CHUNK_JSON] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    out.extend_from_slice(&json_bytes);
    out.extend_from_slice(&(w.bin.len() as u32).to_le_bytes());
    out.extend_from_slice(&CHUNK_BIN.to_le_bytes());
    out.extend_from_slice(&w.bin);
    Ok(out)
}

struct Doc<'a> {
    json: Value,
    bin: &'a [u8],
}

impl Doc<'_> {
    fn view_named(&self, name: &str) -> std::result::Result<&[u8], String> {
        let views = self.json["bufferViews"].as_array().ok_or("missing bufferViews")?;
        let v = views.iter().find(|v| v["name"] == name).ok_or_else(|| format!("missing buffer view {name}"))?;
        let off = v["byteOffset"].as_u64().unwrap_or(0) as usize;
        let len = v["byteLength"].as_u64().ok_or("buffer view without byteLength")? as usize;
        self.bin.get(off..off + len).ok_or_else(|| format!("buffer view {name} out of range"))
    }

    /// `count` elements of `width` bytes from a view with stride `stride`.
    fn elements(&self, name: &str, count: usize, stride: usize) -> std::result::Result<&[u8], String> {
        let data = self.view_named(name)?;
        if data.len() != count * stride {
            return Err(format!("buffer view {name} holds {} bytes, expected {}", data.len(), count * stride));
        }
        Ok(data)
    }
}

/// Decodes a GLB written by [`encode_glb`].
pub fn decode_glb(bytes: &[u8], path: &Path) -> Result<Asset> {
    decode_inner(bytes).map_err(|m| PipelineError::format(path, m))
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<Asset, String> {
    let word = |at: usize| -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(bytes.get(at..at + 4).ok_or("truncated container")?.try_into().unwrap()))
    };
    if word(0)? != GLB_MAGIC || word(4)? != 2 {
        return Err("not a glTF 2.0 binary".into());
    }
    if word(8)? as usize != bytes.len() {
        return Err("container length mismatch".into());
    }
    let jlen = word(12)? as usize;
    if word(16)? != CHUNK_JSON {
        return Err("first chunk is not JSON".into());
    }
    let json: Value = serde_json::from_slice(bytes.get(20..20 + jlen).ok_or("truncated JSON chunk")?).map_err(|e| e.to_string())?;
    let at = 20 + jlen;
    let blen = word(at)? as usize;
    if word(at + 4)? != CHUNK_BIN {
        return Err("second chunk is not BIN".into());
    }
    let bin = bytes.get(at + 8..at + 8 + blen).ok_or("truncated BIN chunk")?;
    let info: AssetInfo = serde_json::from_value(json["extras"]["bakedsdf"].clone()).map_err(|e| format!("metadata: {e}"))?;
    if info.format != FORMAT_NAME || info.version != FORMAT_VERSION {
        return Err(format!("unsupported asset format {} v{}", info.format, info.version));
    }
    let doc = Doc { json, bin };
    let (n, nc) = (info.vertex_count, info.central_vertex_count);
    let (m, tc) = (info.triangle_count, info.central_triangle_count);
    if nc > n || tc > m || info.periphery_lobes > info.central_lobes {
        return Err("inconsistent metadata counts".into());
    }
    let pos = doc.elements("POSITION", n, 12)?;
    let positions: Vec<Vec3> = pos
        .chunks_exact(12)
        .map(|c| Vec3::from_f32([0, 4, 8].map(|o| f32::from_le_bytes(c[o..o + 4].try_into().unwrap()))))
        .collect();
    let mut triangles = Vec::with_capacity(m);
    for (name, count) in [("central", tc), ("periphery", m - tc)] {
        if count == 0 {
            continue;
        }
        let idx = doc.elements(&format!("INDICES_{name}"), 3 * count, 4)?;
        let flat: Vec<u32> = idx.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        triangles.extend(flat.chunks_exact(3).map(|t| [t[0], t[1], t[2]]));
    }
    let mesh = TriangleMesh::new(positions, triangles).map_err(|e| e.to_string())?;
    if mesh.central_prefix() != (nc, tc) || !mesh.is_region_ordered() {
        return Err("vertex regions disagree with metadata".into());
    }
    let central: Vec<bool> = (0..n).map(|v| v < nc).collect();
    let mut appearance = BakedAppearance::with_regions(central, info.central_lobes, info.periphery_lobes, info.lambda_max)
        .map_err(|e| e.to_string())?;
    let diffuse = doc.elements(diffuse_attribute(), n, 4)?;
    let mut lobes = Vec::new();
    for k in 0..info.central_lobes {
        let count = if k < info.periphery_lobes { n } else { nc };
        lobes.push([
            doc.elements(&lobe_attribute(k, "MEAN"), count, 4)?,
            doc.elements(&lobe_attribute(k, "COLOR"), count, 4)?,
            doc.elements(&lobe_attribute(k, "WIDTH"), count, 4)?,
        ]);
    }
    let mut levels = Vec::with_capacity(appearance.params.len());
    for v in 0..n {
        levels.extend_from_slice(&diffuse[4 * v..4 * v + 3]);
        for l in lobes.iter().take(appearance.lobe_count(v)) {
            levels.extend_from_slice(&l[0][4 * v..4 * v + 3]);
            levels.extend_from_slice(&l[1][4 * v..4 * v + 3]);
            levels.push(l[2][4 * v]);
        }
    }
    appearance.set_from_levels(&levels).map_err(|e| e.to_string())?;
    appearance.clear_color = Rgb::from(info.clear_color.map(|l| decode_level(l, UNIT_RANGE.0, UNIT_RANGE.1)));
    Ok(Asset { mesh, appearance, info })
}

pub fn gzip(bytes: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(bytes).expect("in-memory write");
    enc.finish().expect("in-memory write")
}

pub fn gunzip(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    GzDecoder::new(bytes).read_to_end(&mut out).map_err(|e| PipelineError::format(path, format!("gzip: {e}")))?;
    Ok(out)
}

/// Writes a gzip-compressed GLB.
pub fn export_asset(path: &Path, mesh: &TriangleMesh, appearance: &BakedAppearance) -> Result<()> {
    write(path, &gzip(&encode_glb(mesh, appearance)?))
}

pub fn import_asset(path: &Path) -> Result<Asset> {
    decode_glb(&gunzip(&read(path)?, path)?, path)
}

/// Decoding ranges of the stored attributes, for documentation and viewers.
pub fn attribute_ranges(lambda_max: f64) -> [(&'static str, (f64, f64)); 4] {
    [("diffuse", UNIT_RANGE), ("mean", MEAN_RANGE), ("color", UNIT_RANGE), ("width", (0.0, lambda_max))]
}

#[cfg(test)]
mod tests {
    use super::*;
    use bakedsdf_core::appearance::{render_view, Lobe, VertexAppearance};
    use bakedsdf_core::camera::{ring_cameras, Intrinsics};
    use bakedsdf_core::rng::{substream, uniform_unit_vector};
    use rand::Rng;

    fn cube(scale: f64) -> TriangleMesh {
        let p: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64 - 0.5, ((i >> 1) & 1) as f64 - 0.5, ((i >> 2) & 1) as f64 - 0.5) * scale)
            .collect();
        let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
        let tris = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
        TriangleMesh::new(p, tris).unwrap()
    }

    /// A cube inside the unit ball plus a bigger one outside it, with
    /// f32-representable positions.
    fn two_region_mesh() -> TriangleMesh {
        let (a, b) = (cube(0.8), cube(3.0));
        let mut positions: Vec<Vec3> = a.positions.iter().map(|p| Vec3::from_f32(p.to_f32())).collect();
        positions.extend(&b.positions);
        let mut tris = a.triangles.clone();
        tris.extend(b.triangles.iter().map(|t| t.map(|i| i + 8)));
        TriangleMesh::new(positions, tris).unwrap().region_ordered().0
    }

    fn random_appearance(mesh: &TriangleMesh, central: usize, seed: u64) -> BakedAppearance {
        let mut app = BakedAppearance::new(mesh, central, central.min(1), 40.0).unwrap();
        let mut rng = substream(seed, "gltf-test");
        for v in 0..mesh.vertex_count() {
            let a = VertexAppearance {
                diffuse: Rgb::new(rng.gen(), rng.gen(), rng.gen()),
                lobes: (0..app.lobe_count(v))
                    .map(|_| Lobe {
                        mean: uniform_unit_vector(&mut rng),
                        color: Rgb::new(rng.gen(), rng.gen(), rng.gen()) * 0.3,
                        width: rng.gen::<f64>() * 40.0,
                    })
                    .collect(),
            };
            app.set_vertex(v, &a).unwrap();
        }
        app.clear_color = Rgb::new(0.1, 0.5, 0.9);
        app
    }

    #[test]
    fn export_import_preserves_levels_and_bytes() {
        let mesh = two_region_mesh();
        let app = random_appearance(&mesh, 3, 1);
        let glb = encode_glb(&mesh, &app).unwrap();
        let asset = decode_glb(&glb, Path::new("x.glb")).unwrap();
        assert_eq!(asset.mesh, mesh);
        assert_eq!(asset.appearance.levels(), app.levels());
        assert_eq!(asset.appearance.params, app.quantized().params);
        assert_eq!(asset.appearance.clear_color, app.quantized().clear_color);
        assert_eq!(asset.info.central_vertex_count, 8);
        assert_eq!(encode_glb(&asset.mesh, &asset.appearance).unwrap(), glb);
    }

    #[test]
    fn imported_asset_renders_like_training_shading() {
        let mesh = two_region_mesh();
        let app = random_appearance(&mesh, 3, 2);
        let asset = decode_glb(&encode_glb(&mesh, &app).unwrap(), Path::new("x.glb")).unwrap();
        for cam in ring_cameras(3, 6.0, 1.0, Vec3::ZERO, Intrinsics::from_fov(24, 24, 50.0), 0.1) {
            assert_eq!(render_view(&asset.mesh, &asset.appearance, &cam), render_view(&mesh, &app, &cam));
        }
    }

    #[test]
    fn accessor_counts_follow_regions() {
        let mesh = two_region_mesh();
        let glb = encode_glb(&mesh, &random_appearance(&mesh, 3, 3)).unwrap();
        let jlen = u32::from_le_bytes(glb[12..16].try_into().unwrap()) as usize;
        let doc: Value = serde_json::from_slice(&glb[20..20 + jlen]).unwrap();
        let prims = doc["meshes"][0]["primitives"].as_array().unwrap();
        assert_eq!(prims.len(), 2);
        let count = |p: &Value, attr: &str| doc["accessors"][p["attributes"][attr].as_u64().unwrap() as usize]["count"].as_u64().unwrap();
        assert_eq!(count(&prims[0], "POSITION"), 8);
        assert_eq!(count(&prims[0], "_LOBE2_WIDTH"), 8);
        assert_eq!(count(&prims[1], "POSITION"), 16);
        assert_eq!(count(&prims[1], "_LOBE0_MEAN"), 16);
        assert!(prims[1]["attributes"].get("_LOBE1_MEAN").is_none());
        assert_eq!(doc["accessors"][prims[0]["indices"].as_u64().unwrap() as usize]["count"], 36);
    }

    #[test]
    fn single_region_asset_has_one_primitive() {
        let mesh = cube(1.0);
        let app = random_appearance(&mesh, 1, 4);
        let asset = decode_glb(&encode_glb(&mesh, &app).unwrap(), Path::new("x.glb")).unwrap();
        assert_eq!(asset.info.triangle_count, 12);
        assert_eq!(asset.appearance.levels(), app.levels());
    }

    #[test]
    fn rejects_unordered_mesh_and_malformed_files() {
        let mesh = two_region_mesh();
        let app = random_appearance(&mesh, 3, 5);
        let mut flipped = mesh.clone();
        flipped.triangles.reverse();
        assert!(encode_glb(&flipped, &app).is_err());
        let glb = encode_glb(&mesh, &app).unwrap();
        let p = Path::new("x.glb");
        assert!(decode_glb(&glb[..glb.len() - 4], p).is_err());
        assert!(decode_glb(&[0u8; 8], p).is_err());
        let mut bad = glb.clone();
        bad[0] ^= 1;
        assert!(decode_glb(&bad, p).is_err());
        let text = String::from_utf8_lossy(&glb).replace("\"version\":1", "\"version\":9");
        assert!(decode_glb(text.as_bytes(), p).is_err());
    }

    #[test]
    fn gzip_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.glb.gz");
        let mesh = two_region_mesh();
        let app = random_appearance(&mesh, 3, 6);
        export_asset(&path, &mesh, &app).unwrap();
        let first = std::fs::read(&path).unwrap();
        let asset = import_asset(&path).unwrap();
        export_asset(&path, &asset.mesh, &asset.appearance).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
        std::fs::write(&path, &first[..first.len() / 2]).unwrap();
        assert!(import_asset(&path).is_err());
    }
}
