//! Mesh files: binary `BMSH` and Wavefront OBJ for inspection.
//!
//! `BMSH` layout, little-endian: magic, u32 vertex count, u32 index count,
//! f32 xyz per vertex, u32 indices.

use std::fmt::Write as _;
use std::path::Path;

use bakedsdf_core::bake::TriangleMesh;
use bakedsdf_core::Vec3;

use crate::error::{read, write, PipelineError, Result};

pub const MESH_MAGIC: &[u8; 4] = b"BMSH";

pub fn encode_bmsh(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 12 * mesh.vertex_count() + 12 * mesh.triangle_count());
    out.extend_from_slice(MESH_MAGIC);
    out.extend_from_slice(&(mesh.vertex_count() as u32).to_le_bytes());
    out.extend_from_slice(&(3 * mesh.triangle_count() as u32).to_le_bytes());
    for p in &mesh.positions {
        for c in p.to_f32() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        for i in t {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

pub fn decode_bmsh(bytes: &[u8], path: &Path) -> Result<TriangleMesh> {
    let bad = |m: &str| PipelineError::format(path, m.to_string());
    if bytes.len() < 12 || &bytes[..4] != MESH_MAGIC {
        return Err(bad("not a BMSH file"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let (nv, ni) = (word(4) as usize, word(8) as usize);
    if ni % 3 != 0 {
        return Err(bad("index count is not a multiple of 3"));
    }
    if bytes.len() as u64 != 12 + 12 * nv as u64 + 4 * ni as u64 {
        return Err(bad("size does not match header counts"));
    }
    let f = |at: usize| f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let positions = (0..nv)
        .map(|v| {
            let at = 12 + 12 * v;
            Vec3::from_f32([f(at), f(at + 4), f(at + 8)])
        })
        .collect();
    let base = 12 + 12 * nv;
    let triangles = (0..ni / 3).map(|t| [0, 1, 2].map(|k| word(base + 12 * t + 4 * k))).collect();
    TriangleMesh::new(positions, triangles).map_err(|e| bad(&e.to_string()))
}

pub fn save_bmsh(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    write(path, &encode_bmsh(mesh))
}

pub fn load_bmsh(path: &Path) -> Result<TriangleMesh> {
    decode_bmsh(&read(path)?, path)
}

pub fn save_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut s = String::new();
    for p in &mesh.positions {
        let [x, y, z] = p.to_f32();
        writeln!(s, "v {x} {y} {z}").unwrap();
    }
    for t in &mesh.triangles {
        writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
    }
    write(path, s.as_bytes())
}
