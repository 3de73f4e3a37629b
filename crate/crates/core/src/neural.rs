//! Stage-1 model: one MLP producing a signed distance, diffuse color logits
//! and first-order spherical-harmonic view coefficients.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::field::{ContractedPoint, FieldSampler, Mlp, MlpConfig, SdfField, SDF_OUTPUT};
use crate::math::{sigmoid, Rgb, Vec3};
use crate::volume::RadianceField;

pub const DIFFUSE_OUTPUT: usize = 1;
pub const SH_OUTPUT: usize = 4;
pub const SH_COEFFS: usize = 4;
pub const NEURAL_OUTPUTS: usize = SH_OUTPUT + 3 * SH_COEFFS;

const SH_C0: f64 = 0.282_094_791_773_878_1;
const SH_C1: f64 = 0.488_602_511_902_919_9;

/// Real spherical-harmonic basis up to degree 1.
#[inline]
pub fn sh_basis(d: Vec3) -> [f64; SH_COEFFS] {
    [SH_C0, SH_C1 * d.y, SH_C1 * d.z, SH_C1 * d.x]
}

/// Default network for stage-1 training.
pub fn default_mlp_config() -> MlpConfig {
    MlpConfig {
        hidden_layers: 3,
        width: 64,
        num_freqs: 6,
        outputs: NEURAL_OUTPUTS,
        sphere_prior: Some(0.5),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralScene {
    pub mlp: Mlp,
}

impl NeuralScene {
    pub fn new<R: Rng + ?Sized>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        if config.outputs != NEURAL_OUTPUTS {
            return Err(crate::Error::InvalidConfig(alloc::format!(
                "stage-1 network needs {NEURAL_OUTPUTS} outputs, got {}",
                config.outputs
            )));
        }
        Ok(Self {
            mlp: Mlp::new(config, rng)?,
        })
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.outputs() != NEURAL_OUTPUTS {
            return Err(crate::Error::InvalidConfig(alloc::format!(
                "stage-1 network needs {NEURAL_OUTPUTS} outputs, got {}",
                mlp.outputs()
            )));
        }
        Ok(Self { mlp })
    }

    /// The geometry as a standalone field.
    pub fn sdf_field(&self) -> SdfField {
        SdfField::Mlp(Arc::new(self.mlp.clone()))
    }

    /// Pre-sigmoid color for one point's raw outputs.
    #[inline]
    pub fn color_logits(raw: &[f64], basis: &[f64; SH_COEFFS]) -> Rgb {
        let mut c = [0.0; 3];
        for (ch, slot) in c.iter_mut().enumerate() {
            let sh = &raw[SH_OUTPUT + ch * SH_COEFFS..SH_OUTPUT + (ch + 1) * SH_COEFFS];
            *slot = raw[DIFFUSE_OUTPUT + ch]
                + sh.iter().zip(basis).map(|(a, b)| a * b).sum::<f64>();
        }
        Rgb::new(c[0], c[1], c[2])
    }

    /// Accumulates the raw-output adjoint of a color adjoint. `color` is the
    /// post-sigmoid color of the same point.
    #[inline]
    pub fn color_backward(color: Rgb, d_color: Rgb, basis: &[f64; SH_COEFFS], d_raw: &mut [f64]) {
        for ch in 0..3 {
            let s = color[ch];
            let g = d_color[ch] * s * (1.0 - s);
            d_raw[DIFFUSE_OUTPUT + ch] += g;
            for (k, b) in basis.iter().enumerate() {
                d_raw[SH_OUTPUT + ch * SH_COEFFS + k] += g * b;
            }
        }
    }

    /// Signed distance and color for points seen along `direction`.
    pub fn query_raw(&self, points: &[Vec3], direction: Vec3, sdf: &mut [f64], color: &mut [Rgb]) {
        let o = NEURAL_OUTPUTS;
        let mut raw = vec![0.0; points.len() * o];
        self.mlp.forward(points, &mut raw);
        let basis = sh_basis(direction);
        for (p, x) in points.iter().enumerate() {
            let r = &raw[p * o..(p + 1) * o];
            sdf[p] = r[SDF_OUTPUT] + prior(&self.mlp, *x);
            color[p] = Self::color_logits(r, &basis).map(sigmoid);
        }
    }
}

#[inline]
pub(crate) fn prior(mlp: &Mlp, x: Vec3) -> f64 {
    match mlp.config().sphere_prior {
        Some(r) => x.norm() - r,
        None => 0.0,
    }
}

impl RadianceField for NeuralScene {
    fn query(&self, points: &[ContractedPoint], direction: Vec3, sdf: &mut [f64], color: &mut [Rgb]) {
        let raw: Vec<Vec3> = points.iter().map(|p| p.0).collect();
        self.query_raw(&raw, direction, sdf, color);
    }
}

impl FieldSampler for NeuralScene {
    fn sample_batch(&self, points: &[Vec3], out: &mut [f64]) {
        self.mlp.sdf_batch(points, out);
    }
}
