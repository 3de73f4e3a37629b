//! Fitting per-vertex appearance to posed images through a raster cache.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::model::{
    interpolate, quantize_ste, robust_loss, robust_loss_derivative, shade_backward, shade_lobes, BakedAppearance,
    Lobe, MAX_LOBES,
};
use super::raster::{rasterize, PixelHit, RasterCache, ViewCache};
use crate::bake::TriangleMesh;
use crate::camera::{Camera, Image, PosedImage};
use crate::error::{Error, Result};
use crate::math::{Rgb, Vec3};
use crate::optim::{Adam, AdamConfig, StepSchedule};
use crate::par::map_ordered;
use crate::rng::{substream, uniform_unit_vector};

const CHUNK_PIXELS: usize = 16384;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum LossKind {
    Robust,
    L2,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AppearanceConfig {
    pub central_lobes: usize,
    pub periphery_lobes: usize,
    pub lambda_max: f64,
    pub loss: LossKind,
    /// Scale `c` of the robust loss.
    pub robust_scale: f64,
    pub iterations: usize,
    /// Pixels per step; the whole set when at least as large.
    pub batch_pixels: usize,
    pub lr: StepSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
    pub init_lobe_color: f64,
    pub init_width: f64,
}

impl Default for AppearanceConfig {
    fn default() -> Self {
        Self {
            central_lobes: 3,
            periphery_lobes: 1,
            lambda_max: 40.0,
            loss: LossKind::Robust,
            robust_scale: 0.2,
            iterations: 2000,
            batch_pixels: 1 << 16,
            lr: StepSchedule::default(),
            adam: AdamConfig::default(),
            seed: 0,
            init_lobe_color: 0.1,
            init_width: 5.0,
        }
    }
}

impl AppearanceConfig {
    /// Ablation preset: `lobes` lobes in the center and at most one outside.
    pub fn with_lobes(mut self, lobes: usize) -> Self {
        self.central_lobes = lobes;
        self.periphery_lobes = lobes.min(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.robust_scale > 0.0) || self.batch_pixels == 0 {
            return Err(Error::InvalidConfig(
                "robust_scale and batch_pixels must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitRecord {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub appearance: BakedAppearance,
    pub history: Vec<FitRecord>,
}

/// Unit direction from the surface toward the camera for a pixel.
#[inline]
fn view_direction(camera: &Camera, pixel: usize) -> Vec3 {
    -camera.pixel_direction(pixel % camera.width(), pixel / camera.width())
}

/// Decoded parameter array: every value replaced by its quantized level.
fn decoded_params(a: &BakedAppearance) -> Vec<f64> {
    a.quantized().params
}

#[inline]
fn blocks<'a>(a: &BakedAppearance, params: &'a [f64], hit: &PixelHit) -> [&'a [f64]; 3] {
    hit.vertices.map(|v| {
        let off = a.offset(v as usize);
        &params[off..]
    })
}

/// Unclamped color of a hit pixel under decoded parameters.
#[inline]
fn shade_hit(a: &BakedAppearance, params: &[f64], hit: &PixelHit, d: Vec3) -> Rgb {
    let n = a.triangle_lobes(hit.vertices);
    let (diffuse, lobes) = interpolate(blocks(a, params, hit), hit.barycentric, n);
    shade_lobes(diffuse, &lobes[..n], d)
}

fn pixel_loss(kind: LossKind, c: f64, r: Rgb) -> (f64, Rgb) {
    match kind {
        LossKind::Robust => (
            (0..3).map(|k| robust_loss(r[k], c)).sum(),
            r.map(|x| robust_loss_derivative(x, c)),
        ),
        LossKind::L2 => (r.norm_squared(), r * 2.0),
    }
}

struct Sample {
    view: u32,
    pixel: u32,
}

/// Fits appearance to `images` given a cache rasterized from their cameras.
pub fn fit_appearance(
    mesh: &TriangleMesh,
    cache: &RasterCache,
    images: &[PosedImage],
    config: &AppearanceConfig,
) -> Result<FitOutput> {
    config.validate()?;
    if cache.views.len() != images.len() {
        return Err(Error::InvalidConfig(alloc::format!(
            "raster cache has {} views for {} images",
            cache.views.len(),
            images.len()
        )));
    }
    for (view, img) in cache.views.iter().zip(images) {
        if view.width != img.image.width || view.height != img.image.height {
            return Err(Error::SizeMismatch(view.width, view.height, img.image.width, img.image.height));
        }
    }
    let mut app = BakedAppearance::new(mesh, config.central_lobes, config.periphery_lobes, config.lambda_max)?;
    initialize(&mut app, cache, images, config);
    let samples = all_samples(cache);
    if samples.is_empty() {
        return Ok(FitOutput { appearance: app, history: Vec::new() });
    }
    let mut rng = substream(config.seed, "fit/batches");
    let mut opt = Adam::new(config.adam, app.params.len());
    let mut clear_opt = Adam::new(config.adam, 3);
    let mut history = Vec::with_capacity(config.iterations);
    let full = config.batch_pixels >= samples.len();
    for it in 0..config.iterations {
        let batch: Vec<u32> = if full {
            (0..samples.len() as u32).collect()
        } else {
            (0..config.batch_pixels).map(|_| rng.gen_range(0..samples.len() as u32)).collect()
        };
        let q = decoded_params(&app);
        let clear_q = app.clear_color.map(|c| quantize_ste(c, 0.0, 1.0));
        let (loss, grad, clear_grad) = batch_gradient(&app, &q, clear_q, &samples, &batch, cache, images, config)
            .map_err(|(image, pixel)| Error::NonFiniteAppearance {
                iteration: it,
                image: image as usize,
                pixel: pixel as usize,
            })?;
        let lr = config.lr.at(it, config.iterations);
        opt.step(&mut app.params, &grad, lr);
        let mut clear = app.clear_color.to_array();
        clear_opt.step(&mut clear, &clear_grad.to_array(), lr);
        app.clear_color = Rgb::new(clear[0], clear[1], clear[2]);
        app.project();
        history.push(FitRecord { iteration: it, loss, lr });
    }
    Ok(FitOutput { appearance: app, history })
}

/// Mean loss over `batch` and its gradient with respect to `params` and the
/// clear color. A non-finite pixel loss is reported as `(view, pixel)`.
#[allow(clippy::too_many_arguments)]
fn batch_gradient(
    app: &BakedAppearance,
    params: &[f64],
    clear: Rgb,
    samples: &[Sample],
    batch: &[u32],
    cache: &RasterCache,
    images: &[PosedImage],
    config: &AppearanceConfig,
) -> core::result::Result<(f64, Vec<f64>, Rgb), (u32, u32)> {
    let inv = 1.0 / batch.len() as f64;
    let chunks: Vec<&[u32]> = batch.chunks(CHUNK_PIXELS).collect();
    let results = map_ordered(&chunks, |_, idx| {
        let mut grad = vec![0.0; app.params.len()];
        let mut clear_grad = Rgb::ZERO;
        let mut loss = 0.0;
        for &si in idx.iter() {
            let s = &samples[si as usize];
            let target = images[s.view as usize].image.pixels[s.pixel as usize];
            match &cache.views[s.view as usize].pixels[s.pixel as usize] {
                None => {
                    let (l, g) = pixel_loss(config.loss, config.robust_scale, clear - target);
                    if !l.is_finite() {
                        return Err((s.view, s.pixel));
                    }
                    loss += l * inv;
                    clear_grad += g * inv;
                }
                Some(hit) => {
                    let d = view_direction(&images[s.view as usize].camera, s.pixel as usize);
                    let n = app.triangle_lobes(hit.vertices);
                    let (diffuse, lobes) = interpolate(blocks(app, params, hit), hit.barycentric, n);
                    let color = shade_lobes(diffuse, &lobes[..n], d);
                    let (l, g) = pixel_loss(config.loss, config.robust_scale, color - target);
                    if !l.is_finite() {
                        return Err((s.view, s.pixel));
                    }
                    loss += l * inv;
                    let mut dl = [Lobe::default(); MAX_LOBES];
                    let dd = shade_backward(&lobes[..n], d, g * inv, &mut dl[..n]);
                    for (&v, &b) in hit.vertices.iter().zip(&hit.barycentric) {
                        let blk = &mut grad[app.offset(v as usize)..];
                        for ch in 0..3 {
                            blk[ch] += b * dd[ch];
                        }
                        for (k, l) in dl[..n].iter().enumerate() {
                            let s = &mut blk[3 + 7 * k..3 + 7 * (k + 1)];
                            for ch in 0..3 {
                                s[ch] += b * l.mean[ch];
                                s[3 + ch] += b * l.color[ch];
                            }
                            s[6] += b * l.width;
                        }
                    }
                }
            }
        }
        Ok((loss, grad, clear_grad))
    });
    let mut grad = vec![0.0; app.params.len()];
    let mut clear_grad = Rgb::ZERO;
    let mut loss = 0.0;
    for r in results {
        let (l, g, cg) = r?;
        loss += l;
        clear_grad += cg;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss, grad, clear_grad))
}

fn all_samples(cache: &RasterCache) -> Vec<Sample> {
    cache
        .views
        .iter()
        .enumerate()
        .flat_map(|(vi, v)| (0..v.pixels.len()).map(move |p| Sample { view: vi as u32, pixel: p as u32 }))
        .collect()
}

/// Full-batch loss at the raw (unquantized) parameters with its gradient
/// with respect to `appearance.params` and the clear color.
pub fn loss_gradient(
    appearance: &BakedAppearance,
    cache: &RasterCache,
    images: &[PosedImage],
    config: &AppearanceConfig,
) -> Result<(f64, Vec<f64>, Rgb)> {
    let samples = all_samples(cache);
    let batch: Vec<u32> = (0..samples.len() as u32).collect();
    if batch.is_empty() {
        return Ok((0.0, vec![0.0; appearance.params.len()], Rgb::ZERO));
    }
    batch_gradient(appearance, &appearance.params, appearance.clear_color, &samples, &batch, cache, images, config)
        .map_err(|(image, pixel)| Error::NonFiniteAppearance { iteration: 0, image: image as usize, pixel: pixel as usize })
}

fn initialize(app: &mut BakedAppearance, cache: &RasterCache, images: &[PosedImage], config: &AppearanceConfig) {
    let n = app.vertex_count();
    let mut sum = vec![Rgb::ZERO; n];
    let mut weight = vec![0.0; n];
    let mut miss_sum = Rgb::ZERO;
    let mut misses = 0usize;
    let mut hit_sum = Rgb::ZERO;
    let mut hits = 0usize;
    for (view, img) in cache.views.iter().zip(images) {
        for (p, px) in view.pixels.iter().enumerate() {
            let c = img.image.pixels[p];
            match px {
                None => {
                    miss_sum += c;
                    misses += 1;
                }
                Some(h) => {
                    hit_sum += c;
                    hits += 1;
                    for (&v, &b) in h.vertices.iter().zip(&h.barycentric) {
                        sum[v as usize] += c * b;
                        weight[v as usize] += b;
                    }
                }
            }
        }
    }
    let fallback = if hits > 0 { hit_sum / hits as f64 } else { Rgb::splat(0.5) };
    let mut rng = substream(config.seed, "fit/init");
    for v in 0..n {
        let diffuse = if weight[v] > 0.0 { sum[v] / weight[v] } else { fallback };
        let lobes = (0..app.lobe_count(v))
            .map(|_| Lobe {
                mean: uniform_unit_vector(&mut rng),
                color: Rgb::splat(config.init_lobe_color),
                width: config.init_width,
            })
            .collect();
        app.set_vertex(v, &super::model::VertexAppearance { diffuse, lobes })
            .expect("lobe count from layout");
    }
    app.clear_color = if misses > 0 { miss_sum / misses as f64 } else { Rgb::ZERO };
    app.project();
}

/// Renders a cached view with quantized parameters; misses get the clear color.
pub fn render_cached(appearance: &BakedAppearance, view: &ViewCache, camera: &Camera) -> Image {
    let q = appearance.quantized();
    let mut img = Image::filled(view.width, view.height, q.clear_color);
    for (p, px) in view.pixels.iter().enumerate() {
        if let Some(hit) = px {
            let d = view_direction(camera, p);
            img.pixels[p] = shade_hit(&q, &q.params, hit, d).clamp(0.0, 1.0);
        }
    }
    img
}

/// Rasterizes and renders a camera from scratch.
pub fn render_view(mesh: &TriangleMesh, appearance: &BakedAppearance, camera: &Camera) -> Image {
    render_cached(appearance, &rasterize(mesh, camera), camera)
}
