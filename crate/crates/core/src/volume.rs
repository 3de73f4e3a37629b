//! Quadrature volume rendering along rays.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{contract, density_from_sdf, ContractedPoint, DensityParams, SdfField};
use crate::math::{exp, Rgb, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, near: f64, far: f64) -> Result<Self> {
        if !(near < far) || !near.is_finite() || !far.is_finite() {
            return Err(Error::DegenerateRay { near, far });
        }
        if (direction.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidConfig(alloc::format!(
                "ray direction must be unit length, got norm {}",
                direction.norm()
            )));
        }
        Ok(Self {
            origin,
            direction,
            near,
            far,
        })
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Clip to the ball of `radius` around the origin. `None` when the ray misses it.
    pub fn clip_to_ball(&self, radius: f64) -> Option<Ray> {
        let b = self.origin.dot(self.direction);
        let c = self.origin.norm_squared() - radius * radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            return None;
        }
        let s = crate::math::sqrt(disc);
        let near = self.near.max(-b - s);
        let far = self.far.min(-b + s);
        if near < far {
            Some(Ray { near, far, ..*self })
        } else {
            None
        }
    }
}

/// Samples along one ray. Sample `i` represents the interval
/// `[edges[i], edges[i + 1])`; `deltas[i]` is its length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub deltas: Vec<f64>,
    pub densities: Vec<f64>,
    pub colors: Vec<Rgb>,
    pub weights: Vec<f64>,
}

/// A batch of rays and their samples.
pub type RaySampleBatch = Vec<RaySamples>;

/// `n` equal intervals over `[near, far]`; returns the `n + 1` edges.
pub fn interval_edges(near: f64, far: f64, n: usize) -> Vec<f64> {
    let step = (far - near) / n as f64;
    (0..=n).map(|i| near + step * i as f64).collect()
}

/// One distance per interval: the midpoint, or a uniform jitter inside it.
pub fn sample_distances<R: Rng + ?Sized>(edges: &[f64], rng: Option<&mut R>) -> Vec<f64> {
    match rng {
        Some(rng) => edges
            .windows(2)
            .map(|w| w[0] + (w[1] - w[0]) * rng.gen::<f64>())
            .collect(),
        None => edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect(),
    }
}

/// Per-sample weights `T_i (1 - exp(-tau_i delta_i))` with
/// `T_i = exp(-sum_{j<i} tau_j delta_j)`.
pub fn compositing_weights(densities: &[f64], deltas: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    densities
        .iter()
        .zip(deltas)
        .map(|(&tau, &d)| {
            let od = tau * d;
            let w = exp(-acc) * (1.0 - exp(-od));
            acc += od;
            w
        })
        .collect()
}

/// Composited color and the per-sample weights multiplying each color.
pub fn composite(densities: &[f64], deltas: &[f64], colors: &[Rgb]) -> (Rgb, Vec<f64>) {
    let weights = compositing_weights(densities, deltas);
    let color = weights
        .iter()
        .zip(colors)
        .fold(Rgb::ZERO, |acc, (&w, &c)| acc + c * w);
    (color, weights)
}

impl RaySamples {
    /// Fills `weights` and returns the composited color.
    pub fn composite(&mut self) -> Rgb {
        let (c, w) = composite(&self.densities, &self.deltas, &self.colors);
        self.weights = w;
        c
    }

    pub fn expected_depth(&self) -> f64 {
        self.weights.iter().zip(&self.t).map(|(w, t)| w * t).sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Adjoints of the composited color with respect to densities and colors,
/// given `d_color = dL/dC` and the weights from the forward pass.
pub fn composite_backward(
    densities: &[f64],
    deltas: &[f64],
    colors: &[Rgb],
    weights: &[f64],
    d_color: Rgb,
    d_densities: &mut [f64],
    d_colors: &mut [Rgb],
) {
    let n = densities.len();
    // suffix[i] = sum_{j > i} w_j (g . c_j)
    let mut suffix = 0.0;
    let mut acc_before = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n {
        acc_before[i] = acc;
        acc += densities[i] * deltas[i];
    }
    for i in (0..n).rev() {
        let gc = d_color.dot(colors[i]);
        let trans_after = exp(-(acc_before[i] + densities[i] * deltas[i]));
        d_densities[i] = deltas[i] * (trans_after * gc - suffix);
        d_colors[i] = d_color * weights[i];
        suffix += weights[i] * gc;
    }
}

/// A volume queried in contracted space: signed distance plus color as seen
/// along a world-space direction.
pub trait RadianceField {
    fn query(&self, points: &[ContractedPoint], direction: Vec3, sdf: &mut [f64], color: &mut [Rgb]);
}

/// Color model paired with a separate [`SdfField`].
pub trait AppearanceHead {
    fn color(&self, point: ContractedPoint, direction: Vec3) -> Rgb;
}

impl<F: Fn(ContractedPoint, Vec3) -> Rgb> AppearanceHead for F {
    fn color(&self, point: ContractedPoint, direction: Vec3) -> Rgb {
        self(point, direction)
    }
}

pub struct FieldWithHead<'a, H> {
    pub field: &'a SdfField,
    pub head: &'a H,
}

impl<H: AppearanceHead> RadianceField for FieldWithHead<'_, H> {
    fn query(&self, points: &[ContractedPoint], direction: Vec3, sdf: &mut [f64], color: &mut [Rgb]) {
        for ((p, s), c) in points.iter().zip(sdf.iter_mut()).zip(color.iter_mut()) {
            *s = self.field.eval(*p);
            *c = self.head.color(*p, direction);
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderedRay {
    pub color: Rgb,
    pub depth: f64,
    pub samples: RaySamples,
}

/// Sample `[near, far]` in `n_samples` strata, contract the sample points,
/// convert signed distance to density and composite.
pub fn render_ray<M: RadianceField + ?Sized, R: Rng + ?Sized>(
    model: &M,
    ray: &Ray,
    params: DensityParams,
    n_samples: usize,
    jitter: Option<&mut R>,
) -> Result<RenderedRay> {
    if !(ray.near < ray.far) {
        return Err(Error::DegenerateRay {
            near: ray.near,
            far: ray.far,
        });
    }
    if n_samples < 2 {
        return Err(Error::InvalidConfig("render_ray needs at least 2 samples".into()));
    }
    let edges = interval_edges(ray.near, ray.far, n_samples);
    let t = sample_distances(&edges, jitter);
    let deltas: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();
    let points: Vec<ContractedPoint> = t.iter().map(|&s| contract(ray.at(s))).collect();
    let mut sdf = vec![0.0; n_samples];
    let mut colors = vec![Rgb::ZERO; n_samples];
    model.query(&points, ray.direction, &mut sdf, &mut colors);
    let densities = sdf.iter().map(|&f| density_from_sdf(f, params)).collect();
    let mut samples = RaySamples {
        t,
        deltas,
        densities,
        colors,
        weights: Vec::new(),
    };
    let color = samples.composite();
    let depth = samples.expected_depth();
    Ok(RenderedRay {
        color,
        depth,
        samples,
    })
}

/// Mean of `(|grad f| - 1)^2` over the points.
pub fn eikonal_loss(field: &SdfField, points: &[ContractedPoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let grads: Vec<Vec3> = match field {
        SdfField::Mlp(net) => {
            let raw: Vec<Vec3> = points.iter().map(|p| p.0).collect();
            let mut ws = crate::field::MlpWorkspace::new();
            net.forward_into(&raw, &mut ws, true);
            net.sdf_gradients_from_workspace(&ws)
        }
        _ => points.iter().map(|p| field.gradient(*p)).collect(),
    };
    crate::field::mlp::eikonal_terms(&grads).0
}
