//! Stage-1 optimization: photometric loss through volume rendering plus an
//! Eikonal regularizer, with annealed density sharpness.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::camera::{Camera, Image, PosedImage};
use crate::error::{Error, Result};
use crate::field::{
    beta_at, contract, density_derivative, density_from_sdf, BetaSchedule, DensityParams, Mlp,
    MlpConfig, MlpWorkspace, SDF_OUTPUT,
};
use crate::math::{sigmoid, Rgb, Vec3};
use crate::neural::{default_mlp_config, prior, sh_basis, NeuralScene, NEURAL_OUTPUTS};
use crate::optim::{Adam, AdamConfig, LogLinearSchedule};
use crate::par::map_ordered;
use crate::rng::{substream, uniform_in_ball};
use crate::volume::{
    composite, composite_backward, interval_edges, render_ray, sample_distances, RadianceField, Ray,
};

/// Rays per gradient work item. Fixed so the reduction order never depends
/// on the number of threads.
const CHUNK_RAYS: usize = 8;
const CHUNK_EIKONAL: usize = 128;
/// Radius of the contracted ball holding the uniform Eikonal samples.
pub const EIKONAL_BALL: f64 = 1.9;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_rays: usize,
    pub samples_per_ray: usize,
    pub lr: LogLinearSchedule,
    pub adam: AdamConfig,
    pub eikonal_weight: f64,
    /// Eikonal points per iteration, half from ray samples and half uniform.
    pub eikonal_points: usize,
    pub beta: BetaSchedule,
    pub seed: u64,
    pub near: f64,
    /// World-space ball enclosing the content; rays are clipped to it.
    pub bound_radius: f64,
    pub mlp: MlpConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_rays: 64,
            samples_per_ray: 64,
            lr: LogLinearSchedule::default(),
            adam: AdamConfig::default(),
            eikonal_weight: 0.1,
            eikonal_points: 512,
            beta: BetaSchedule::default(),
            seed: 0,
            near: 0.05,
            bound_radius: 1.0,
            mlp: default_mlp_config(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_rays == 0 || self.samples_per_ray < 2 {
            return Err(Error::InvalidConfig(
                "batch_rays must be positive and samples_per_ray at least 2".into(),
            ));
        }
        if !(self.eikonal_weight >= 0.0) || !(self.bound_radius > 0.0) || !(self.near >= 0.0) {
            return Err(Error::InvalidConfig(
                "eikonal_weight, near and bound_radius must be non-negative".into(),
            ));
        }
        self.beta.validate()?;
        self.mlp.validate()
    }

    /// Training progress in `[0, 1]` at an iteration.
    pub fn progress(&self, iteration: usize) -> f64 {
        if self.iterations <= 1 {
            1.0
        } else {
            iteration as f64 / (self.iterations - 1) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub data: f64,
    pub eikonal: f64,
    pub beta: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: NeuralScene,
    pub history: Vec<LossRecord>,
}

/// One supervised ray with its sample intervals. `t` is empty when the ray
/// misses the bounding ball.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRay {
    pub ray: Ray,
    pub target: Rgb,
    /// `image * pixels_per_image + pixel`.
    pub id: usize,
    pub t: Vec<f64>,
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub rays: Vec<TrainRay>,
    pub eikonal: Vec<Vec3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub data: f64,
    pub eikonal: f64,
}

/// Pixel ray clipped to `[near, far]` inside the ball of `bound_radius`.
pub fn clipped_pixel_ray(camera: &Camera, u: usize, v: usize, near: f64, bound_radius: f64) -> Option<Ray> {
    let ray = Ray {
        origin: camera.origin(),
        direction: camera.pixel_direction(u, v),
        near,
        far: f64::MAX,
    };
    ray.clip_to_ball(bound_radius)
}

/// Draws rays, jittered samples and Eikonal points for one iteration.
pub fn sample_batch<R: Rng + ?Sized>(
    images: &[PosedImage],
    config: &TrainConfig,
    rng: &mut R,
) -> TrainBatch {
    let mut rays = Vec::with_capacity(config.batch_rays);
    for _ in 0..config.batch_rays {
        let img = rng.gen_range(0..images.len());
        let pi = &images[img];
        let n = pi.camera.pixel_count();
        let pix = rng.gen_range(0..n);
        let (u, v) = (pix % pi.camera.width(), pix / pi.camera.width());
        let target = pi.image.get(u, v);
        let id = img * n + pix;
        match clipped_pixel_ray(&pi.camera, u, v, config.near, config.bound_radius) {
            Some(ray) => {
                let edges = interval_edges(ray.near, ray.far, config.samples_per_ray);
                let t = sample_distances(&edges, Some(&mut *rng));
                let deltas = edges.windows(2).map(|w| w[1] - w[0]).collect();
                rays.push(TrainRay { ray, target, id, t, deltas });
            }
            None => rays.push(TrainRay {
                ray: Ray {
                    origin: pi.camera.origin(),
                    direction: pi.camera.pixel_direction(u, v),
                    near: 0.0,
                    far: 0.0,
                },
                target,
                id,
                t: Vec::new(),
                deltas: Vec::new(),
            }),
        }
    }
    let mut eikonal = Vec::with_capacity(config.eikonal_points);
    let hitting: Vec<usize> = (0..rays.len()).filter(|&i| !rays[i].t.is_empty()).collect();
    let from_rays = if hitting.is_empty() { 0 } else { config.eikonal_points / 2 };
    for _ in 0..from_rays {
        let r = &rays[hitting[rng.gen_range(0..hitting.len())]];
        let s = r.t[rng.gen_range(0..r.t.len())];
        eikonal.push(contract(r.ray.at(s)).0);
    }
    while eikonal.len() < config.eikonal_points {
        eikonal.push(uniform_in_ball(rng, EIKONAL_BALL));
    }
    TrainBatch { rays, eikonal }
}

/// Data and Eikonal losses of a batch and the gradient of
/// `data + eikonal_weight * eikonal` with respect to the network parameters.
///
/// The data term is the mean over rays of the squared color error norm. A
/// non-finite ray loss is reported with the ray id and iteration 0; callers
/// fill in the iteration.
pub fn batch_loss_gradient(
    mlp: &Mlp,
    batch: &TrainBatch,
    params: DensityParams,
    eikonal_weight: f64,
) -> Result<(LossParts, Vec<f64>)> {
    let n_params = mlp.num_params();
    let inv_rays = 1.0 / batch.rays.len().max(1) as f64;
    let chunks: Vec<&[TrainRay]> = batch.rays.chunks(CHUNK_RAYS).collect();
    let ray_results = map_ordered(&chunks, |_, chunk| ray_chunk_gradient(mlp, chunk, params, inv_rays));
    let mut grad = vec![0.0; n_params];
    let mut parts = LossParts::default();
    for r in ray_results {
        let (loss, g) = r.map_err(|ray| Error::NonFiniteLoss { iteration: 0, ray: Some(ray) })?;
        parts.data += loss;
        if let Some(g) = g {
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
    }
    if !batch.eikonal.is_empty() {
        let scale = 1.0 / batch.eikonal.len() as f64;
        let chunks: Vec<&[Vec3]> = batch.eikonal.chunks(CHUNK_EIKONAL).collect();
        let results = map_ordered(&chunks, |_, pts| eikonal_chunk_gradient(mlp, pts, scale, eikonal_weight));
        for (loss, g) in results {
            parts.eikonal += loss;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        if !parts.eikonal.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: 0, ray: None });
        }
    }
    Ok((parts, grad))
}

type ChunkResult = core::result::Result<(f64, Option<Vec<f64>>), usize>;

fn ray_chunk_gradient(mlp: &Mlp, rays: &[TrainRay], params: DensityParams, inv_rays: f64) -> ChunkResult {
    let o = NEURAL_OUTPUTS;
    let mut points = Vec::new();
    for r in rays {
        points.extend(r.t.iter().map(|&s| contract(r.ray.at(s)).0));
    }
    let mut loss = 0.0;
    if points.is_empty() {
        for r in rays {
            let l = r.target.norm_squared() * inv_rays;
            if !l.is_finite() {
                return Err(r.id);
            }
            loss += l;
        }
        return Ok((loss, None));
    }
    let mut ws = MlpWorkspace::new();
    mlp.forward_into(&points, &mut ws, false);
    let raw = ws.outputs().to_vec();
    let mut d_raw = vec![0.0; raw.len()];
    let mut offset = 0;
    for r in rays {
        let n = r.t.len();
        if n == 0 {
            let l = r.target.norm_squared() * inv_rays;
            if !l.is_finite() {
                return Err(r.id);
            }
            loss += l;
            continue;
        }
        let basis = sh_basis(r.ray.direction);
        let mut sdf = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(n);
        for i in 0..n {
            let rp = &raw[(offset + i) * o..(offset + i + 1) * o];
            sdf.push(rp[SDF_OUTPUT] + prior(mlp, points[offset + i]));
            colors.push(NeuralScene::color_logits(rp, &basis).map(sigmoid));
        }
        let dens: Vec<f64> = sdf.iter().map(|&f| density_from_sdf(f, params)).collect();
        let (c, w) = composite(&dens, &r.deltas, &colors);
        let err = c - r.target;
        let l = err.norm_squared() * inv_rays;
        if !l.is_finite() {
            return Err(r.id);
        }
        loss += l;
        let g = err * (2.0 * inv_rays);
        let mut d_dens = vec![0.0; n];
        let mut d_col = vec![Rgb::ZERO; n];
        composite_backward(&dens, &r.deltas, &colors, &w, g, &mut d_dens, &mut d_col);
        for i in 0..n {
            let dr = &mut d_raw[(offset + i) * o..(offset + i + 1) * o];
            dr[SDF_OUTPUT] += d_dens[i] * density_derivative(sdf[i], params);
            NeuralScene::color_backward(colors[i], d_col[i], &basis, dr);
        }
        offset += n;
    }
    let mut grad = vec![0.0; mlp.num_params()];
    mlp.backward(&mut ws, &d_raw, &mut grad);
    Ok((loss, Some(grad)))
}

fn eikonal_chunk_gradient(mlp: &Mlp, pts: &[Vec3], scale: f64, weight: f64) -> (f64, Vec<f64>) {
    let mut ws = MlpWorkspace::new();
    mlp.forward_into(pts, &mut ws, true);
    let grads = mlp.sdf_gradients_from_workspace(&ws);
    let mut loss = 0.0;
    let adj: Vec<Vec3> = grads
        .iter()
        .map(|g| {
            let m = g.norm();
            loss += (m - 1.0) * (m - 1.0) * scale;
            if m > 0.0 {
                *g * (weight * scale * 2.0 * (m - 1.0) / m)
            } else {
                Vec3::ZERO
            }
        })
        .collect();
    let mut grad = vec![0.0; mlp.num_params()];
    if weight != 0.0 {
        mlp.backward_tangent(&mut ws, &adj, &[], &mut grad);
    }
    (loss, grad)
}

/// Trains a freshly initialized model.
pub fn train(images: &[PosedImage], config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let mut init_rng = substream(config.seed, "train/init");
    let model = NeuralScene::new(config.mlp, &mut init_rng)?;
    train_from(model, images, config)
}

/// Continues training from `model`. Zero iterations return it unchanged.
pub fn train_from(mut model: NeuralScene, images: &[PosedImage], config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    if config.iterations > 0 && images.len() < 2 {
        return Err(Error::InvalidConfig("training needs at least two posed images".into()));
    }
    let mut rng = substream(config.seed, "train/batches");
    let mut opt = Adam::new(config.adam, model.mlp.num_params());
    let mut history = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let beta = beta_at(&config.beta, config.progress(it))?;
        let params = DensityParams::new(beta)?;
        let batch = sample_batch(images, config, &mut rng);
        let (parts, grad) = batch_loss_gradient(&model.mlp, &batch, params, config.eikonal_weight)
            .map_err(|e| match e {
                Error::NonFiniteLoss { ray, .. } => Error::NonFiniteLoss { iteration: it, ray },
                other => other,
            })?;
        let lr = config.lr.at(it, config.iterations);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: it, ray: None });
        }
        opt.step(model.mlp.params_mut(), &grad, lr);
        history.push(LossRecord {
            iteration: it,
            loss: parts.data + config.eikonal_weight * parts.eikonal,
            data: parts.data,
            eikonal: parts.eikonal,
            beta,
            lr,
        });
    }
    Ok(TrainOutput { model, history })
}

/// Volume-renders an image with midpoint samples.
pub fn render_image<M: RadianceField + Sync>(
    model: &M,
    camera: &Camera,
    params: DensityParams,
    samples_per_ray: usize,
    near: f64,
    bound_radius: f64,
) -> Result<Image> {
    let rows: Vec<usize> = (0..camera.height()).collect();
    let rendered = map_ordered(&rows, |_, &v| -> Result<Vec<Rgb>> {
        (0..camera.width())
            .map(|u| match clipped_pixel_ray(camera, u, v, near, bound_radius) {
                Some(ray) => Ok(render_ray(model, &ray, params, samples_per_ray, None::<&mut crate::rng::StreamRng>)?.color),
                None => Ok(Rgb::ZERO),
            })
            .collect()
    });
    let mut img = Image::new(camera.width(), camera.height());
    for (v, row) in rendered.into_iter().enumerate() {
        for (u, c) in row?.into_iter().enumerate() {
            img.set(u, v, c);
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{ring_cameras, Intrinsics};
    use crate::field::SdfField;
    use crate::scene::{Material, Scene, SceneObject};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            iterations: 3,
            batch_rays: 6,
            samples_per_ray: 8,
            eikonal_points: 6,
            mlp: MlpConfig {
                hidden_layers: 2,
                width: 8,
                num_freqs: 2,
                outputs: NEURAL_OUTPUTS,
                sphere_prior: Some(0.5),
            },
            ..TrainConfig::default()
        }
    }

    fn tiny_dataset() -> Vec<PosedImage> {
        let scene = Scene::new(
            vec![SceneObject {
                name: "ball".into(),
                shape: SdfField::sphere(Vec3::ZERO, 0.5),
                material: Material::diffuse(Rgb::new(0.8, 0.4, 0.2)),
            }],
            1.0,
        );
        ring_cameras(3, 2.5, 0.5, Vec3::ZERO, Intrinsics::from_fov(6, 6, 40.0), 0.0)
            .into_iter()
            .map(|c| PosedImage::new(scene.render(&c), c).unwrap())
            .collect()
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let cfg = TrainConfig { iterations: 0, ..tiny_config() };
        let mut rng = substream(cfg.seed, "train/init");
        let init = NeuralScene::new(cfg.mlp, &mut rng).unwrap();
        let out = train(&tiny_dataset(), &cfg).unwrap();
        assert_eq!(out.model, init);
        assert!(out.history.is_empty());
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let data = tiny_dataset();
        let a = train(&data, &tiny_config()).unwrap();
        let b = train(&data, &tiny_config()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.mlp.params(), b.model.mlp.params());
        assert_eq!(a.history.len(), 3);
        assert!(a.history.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn beta_follows_schedule() {
        let out = train(&tiny_dataset(), &tiny_config()).unwrap();
        assert_eq!(out.history[0].beta, 0.1);
        assert_eq!(out.history[2].beta, 0.001);
    }

    #[test]
    fn non_finite_target_reports_ray() {
        let mut data = tiny_dataset();
        for p in data[1].image.pixels.iter_mut() {
            *p = Rgb::splat(f64::NAN);
        }
        let cfg = TrainConfig { batch_rays: 64, ..tiny_config() };
        match train(&data, &cfg) {
            Err(Error::NonFiniteLoss { iteration: 0, ray: Some(id) }) => assert!(id >= 36 && id < 72),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let cfg = tiny_config();
        let data = tiny_dataset();
        let mut rng = substream(9, "gc");
        let mlp = Mlp::new(cfg.mlp, &mut rng).unwrap();
        let batch = sample_batch(&data, &cfg, &mut rng);
        let params = DensityParams::new(0.05).unwrap();
        let w = 0.1;
        let (_, grad) = batch_loss_gradient(&mlp, &batch, params, w).unwrap();
        let loss = |p: &[f64]| {
            let m = Mlp::from_params(cfg.mlp, p.to_vec()).unwrap();
            let (parts, _) = batch_loss_gradient(&m, &batch, params, w).unwrap();
            parts.data + w * parts.eikonal
        };
        let base = mlp.params().to_vec();
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let h = 1e-5;
            let mut a = base.clone();
            a[i] += h;
            let mut b = base.clone();
            b[i] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-4);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }
}
