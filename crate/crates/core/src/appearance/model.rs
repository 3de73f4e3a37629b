//! Shading, quantization and the per-vertex parameter store.

use alloc::vec;
use alloc::vec::Vec;

use crate::bake::TriangleMesh;
use crate::error::{Error, Result};
use crate::math::{exp, ln, round_ties_even, Rgb, Vec3};

/// Upper bound on lobes per vertex.
pub const MAX_LOBES: usize = 8;
/// Encoding range of colors.
pub const UNIT_RANGE: (f64, f64) = (0.0, 1.0);
/// Encoding range of lobe mean components.
pub const MEAN_RANGE: (f64, f64) = (-1.0, 1.0);

const LEVELS: f64 = 255.0;

/// Nearest of 256 levels over `[lo, hi]` (ties to even) after clamping.
#[inline]
pub fn quantize_level(value: f64, lo: f64, hi: f64) -> u8 {
    let x = ((value - lo) / (hi - lo)).clamp(0.0, 1.0);
    round_ties_even(x * LEVELS) as u8
}

#[inline]
pub fn decode_level(level: u8, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * (level as f64 / LEVELS)
}

/// Forward value of the straight-through quantizer. Its backward pass is the
/// identity, so callers apply gradients of the quantized value to the raw one.
#[inline]
pub fn quantize_ste(value: f64, lo: f64, hi: f64) -> f64 {
    decode_level(quantize_level(value, lo, hi), lo, hi)
}

/// `log(0.5 (r / c)^2 + 1)`.
#[inline]
pub fn robust_loss(residual: f64, c: f64) -> f64 {
    let s = residual / c;
    ln(0.5 * s * s + 1.0)
}

#[inline]
pub fn robust_loss_derivative(residual: f64, c: f64) -> f64 {
    2.0 * residual / (residual * residual + 2.0 * c * c)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Lobe {
    pub mean: Vec3,
    pub color: Rgb,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VertexAppearance {
    pub diffuse: Rgb,
    pub lobes: Vec<Lobe>,
}

/// Lobe terms are summed per channel in ascending order so the result does
/// not depend on lobe order.
#[inline]
pub(crate) fn shade_lobes(diffuse: Rgb, lobes: &[Lobe], d: Vec3) -> Rgb {
    let mut terms = [[0.0f64; MAX_LOBES]; 3];
    for (k, l) in lobes.iter().enumerate() {
        let e = exp(l.width * (l.mean.dot(d) - 1.0));
        for ch in 0..3 {
            terms[ch][k] = l.color[ch] * e;
        }
    }
    let mut out = diffuse;
    for ch in 0..3 {
        let t = &mut terms[ch][..lobes.len()];
        t.sort_unstable_by(f64::total_cmp);
        out[ch] += t.iter().sum::<f64>();
    }
    out
}

/// `c_d + sum_i c_i exp(lambda_i (mu_i . d - 1))` with `d` pointing from the
/// surface toward the viewer.
pub fn shade(appearance: &VertexAppearance, d: Vec3) -> Rgb {
    shade_lobes(appearance.diffuse, &appearance.lobes, d)
}

/// Adjoints of the shaded color with respect to the diffuse color and every
/// lobe parameter, given `g = dL/dC`.
pub(crate) fn shade_backward(lobes: &[Lobe], d: Vec3, g: Rgb, d_lobes: &mut [Lobe]) -> Rgb {
    for (l, dl) in lobes.iter().zip(d_lobes.iter_mut()) {
        let cosine = l.mean.dot(d);
        let e = exp(l.width * (cosine - 1.0));
        dl.color = g * e;
        let s = g.dot(l.color) * e;
        dl.width = s * (cosine - 1.0);
        dl.mean = d * (s * l.width);
    }
    g
}

/// Floats per vertex: diffuse then `(mean, color, width)` per lobe.
#[inline]
pub fn vertex_stride(lobes: usize) -> usize {
    3 + 7 * lobes
}

/// Raw (unquantized) appearance parameters of every mesh vertex plus the
/// clear color. Vertices inside the unit ball get `central_lobes` lobes, the
/// rest `periphery_lobes`.
#[derive(Debug, Clone, PartialEq)]
pub struct BakedAppearance {
    pub central_lobes: usize,
    pub periphery_lobes: usize,
    pub lambda_max: f64,
    pub central: Vec<bool>,
    offsets: Vec<usize>,
    pub params: Vec<f64>,
    pub clear_color: Rgb,
}

impl BakedAppearance {
    pub fn new(mesh: &TriangleMesh, central_lobes: usize, periphery_lobes: usize, lambda_max: f64) -> Result<Self> {
        let central: Vec<bool> = (0..mesh.vertex_count()).map(|v| mesh.is_central(v)).collect();
        Self::with_regions(central, central_lobes, periphery_lobes, lambda_max)
    }

    pub fn with_regions(
        central: Vec<bool>,
        central_lobes: usize,
        periphery_lobes: usize,
        lambda_max: f64,
    ) -> Result<Self> {
        if central_lobes > MAX_LOBES || periphery_lobes > central_lobes {
            return Err(Error::InvalidConfig(alloc::format!(
                "lobe counts central {central_lobes}, periphery {periphery_lobes} unsupported"
            )));
        }
        if !(lambda_max > 0.0) {
            return Err(Error::InvalidConfig("lambda_max must be positive".into()));
        }
        let mut offsets = Vec::with_capacity(central.len() + 1);
        let mut off = 0;
        for &c in &central {
            offsets.push(off);
            off += vertex_stride(if c { central_lobes } else { periphery_lobes });
        }
        offsets.push(off);
        Ok(Self {
            central_lobes,
            periphery_lobes,
            lambda_max,
            central,
            offsets,
            params: vec![0.0; off],
            clear_color: Rgb::ZERO,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.central.len()
    }

    pub fn lobe_count(&self, v: usize) -> usize {
        if self.central[v] {
            self.central_lobes
        } else {
            self.periphery_lobes
        }
    }

    #[inline]
    pub fn offset(&self, v: usize) -> usize {
        self.offsets[v]
    }

    /// Encoding range of parameter slot `i` within a vertex block.
    #[inline]
    pub fn slot_range(&self, slot: usize) -> (f64, f64) {
        if slot < 3 {
            return UNIT_RANGE;
        }
        match (slot - 3) % 7 {
            0..=2 => MEAN_RANGE,
            3..=5 => UNIT_RANGE,
            _ => (0.0, self.lambda_max),
        }
    }

    fn read(block: &[f64], lobes: usize) -> VertexAppearance {
        VertexAppearance {
            diffuse: Rgb::new(block[0], block[1], block[2]),
            lobes: (0..lobes)
                .map(|k| {
                    let b = &block[3 + 7 * k..3 + 7 * (k + 1)];
                    Lobe {
                        mean: Vec3::new(b[0], b[1], b[2]),
                        color: Rgb::new(b[3], b[4], b[5]),
                        width: b[6],
                    }
                })
                .collect(),
        }
    }

    pub fn raw_vertex(&self, v: usize) -> VertexAppearance {
        Self::read(&self.params[self.offsets[v]..self.offsets[v + 1]], self.lobe_count(v))
    }

    pub fn set_vertex(&mut self, v: usize, a: &VertexAppearance) -> Result<()> {
        if a.lobes.len() != self.lobe_count(v) {
            return Err(Error::AttributeMismatch(alloc::format!(
                "vertex {v} takes {} lobes, got {}",
                self.lobe_count(v),
                a.lobes.len()
            )));
        }
        let off = self.offsets[v];
        let b = &mut self.params[off..self.offsets[v + 1]];
        b[..3].copy_from_slice(&a.diffuse.to_array());
        for (k, l) in a.lobes.iter().enumerate() {
            let s = &mut b[3 + 7 * k..3 + 7 * (k + 1)];
            s[..3].copy_from_slice(&l.mean.to_array());
            s[3..6].copy_from_slice(&l.color.to_array());
            s[6] = l.width;
        }
        Ok(())
    }

    /// 8-bit level of every parameter, in parameter order.
    pub fn levels(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.params.len());
        for v in 0..self.vertex_count() {
            let off = self.offsets[v];
            for (i, &x) in self.params[off..self.offsets[v + 1]].iter().enumerate() {
                let (lo, hi) = self.slot_range(i);
                out.push(quantize_level(x, lo, hi));
            }
        }
        out
    }

    /// Replaces every parameter by the value its 8-bit level decodes to.
    pub fn set_from_levels(&mut self, levels: &[u8]) -> Result<()> {
        if levels.len() != self.params.len() {
            return Err(Error::AttributeMismatch(alloc::format!(
                "expected {} levels, got {}",
                self.params.len(),
                levels.len()
            )));
        }
        for v in 0..self.vertex_count() {
            let off = self.offsets[v];
            for i in 0..self.offsets[v + 1] - off {
                let (lo, hi) = self.slot_range(i);
                self.params[off + i] = decode_level(levels[off + i], lo, hi);
            }
        }
        Ok(())
    }

    /// Quantized copy: what the exported asset decodes to.
    pub fn quantized(&self) -> BakedAppearance {
        let mut q = self.clone();
        let levels = self.levels();
        q.set_from_levels(&levels).expect("same layout");
        q.clear_color = self.clear_color.map(|c| quantize_ste(c, 0.0, 1.0));
        q
    }

    pub fn vertex(&self, v: usize) -> VertexAppearance {
        let mut a = self.raw_vertex(v);
        a.diffuse = a.diffuse.map(|c| quantize_ste(c, 0.0, 1.0));
        for l in a.lobes.iter_mut() {
            l.mean = l.mean.map(|c| quantize_ste(c, MEAN_RANGE.0, MEAN_RANGE.1));
            l.color = l.color.map(|c| quantize_ste(c, 0.0, 1.0));
            l.width = quantize_ste(l.width, 0.0, self.lambda_max);
        }
        a
    }

    /// Lobes used on a triangle: all central lobes only when every corner is
    /// central, otherwise the periphery budget.
    #[inline]
    pub fn triangle_lobes(&self, tri: [u32; 3]) -> usize {
        if tri.iter().all(|&v| self.central[v as usize]) {
            self.central_lobes
        } else {
            self.periphery_lobes
        }
    }

    /// Clamps colors and widths into range and renormalizes lobe means.
    pub fn project(&mut self) {
        for v in 0..self.vertex_count() {
            let lobes = self.lobe_count(v);
            let off = self.offsets[v];
            let lmax = self.lambda_max;
            let b = &mut self.params[off..self.offsets[v + 1]];
            for x in b[..3].iter_mut() {
                *x = x.clamp(0.0, 1.0);
            }
            for k in 0..lobes {
                let s = &mut b[3 + 7 * k..3 + 7 * (k + 1)];
                let m = Vec3::new(s[0], s[1], s[2]);
                let n = m.norm();
                let m = if n > 1e-12 { m / n } else { Vec3::Z };
                s[..3].copy_from_slice(&m.to_array());
                for x in s[3..6].iter_mut() {
                    *x = x.clamp(0.0, 1.0);
                }
                s[6] = s[6].clamp(0.0, lmax);
            }
        }
        self.clear_color = self.clear_color.clamp(0.0, 1.0);
    }

    /// Bytes per vertex in the exported asset.
    pub fn bytes_per_vertex(lobes: usize) -> usize {
        12 + 4 + 12 * lobes
    }
}

/// Barycentric interpolation of three vertex blocks using the first `lobes`
/// lobes of each.
pub(crate) fn interpolate(blocks: [&[f64]; 3], b: [f64; 3], lobes: usize) -> (Rgb, [Lobe; MAX_LOBES]) {
    let mut diffuse = Rgb::ZERO;
    let mut out = [Lobe::default(); MAX_LOBES];
    for (blk, &w) in blocks.iter().zip(&b) {
        diffuse += Rgb::new(blk[0], blk[1], blk[2]) * w;
        for (k, l) in out.iter_mut().enumerate().take(lobes) {
            let s = &blk[3 + 7 * k..3 + 7 * (k + 1)];
            l.mean += Vec3::new(s[0], s[1], s[2]) * w;
            l.color += Rgb::new(s[3], s[4], s[5]) * w;
            l.width += s[6] * w;
        }
    }
    (diffuse, out)
}
