//! The three stages chained in memory on a small analytic scene.

use bakedsdf_core::appearance::{fit_appearance, rasterize_views, render_cached, AppearanceConfig, BakedAppearance};
use bakedsdf_core::bake::{bake_mesh, BakeConfig};
use bakedsdf_core::camera::{ring_cameras, Intrinsics, PosedImage};
use bakedsdf_core::field::{beta_at, DensityParams, MlpConfig, SdfField};
use bakedsdf_core::metrics::psnr;
use bakedsdf_core::neural::NEURAL_OUTPUTS;
use bakedsdf_core::scene::{Material, Scene, SceneObject};
use bakedsdf_core::train::{train, TrainConfig};
use bakedsdf_core::{Rgb, Vec3};

fn sphere_scene() -> Scene {
    Scene::new(
        vec![SceneObject {
            name: "ball".into(),
            shape: SdfField::sphere(Vec3::ZERO, 0.5),
            material: Material::diffuse(Rgb::new(0.7, 0.3, 0.2)),
        }],
        1.0,
    )
}

fn dataset(count: usize, size: usize, phase: f64) -> Vec<PosedImage> {
    let scene = sphere_scene();
    ring_cameras(count, 2.5, 0.8, Vec3::ZERO, Intrinsics::from_fov(size, size, 40.0), phase)
        .into_iter()
        .map(|c| PosedImage::new(scene.render(&c), c).unwrap())
        .collect()
}

#[test]
fn analytic_geometry_bakes_and_fits() {
    let images = dataset(12, 48, 0.0);
    let cameras: Vec<_> = images.iter().map(|p| p.camera).collect();
    let params = DensityParams::new(0.002).unwrap();
    let config = BakeConfig { resolution: 64, ..BakeConfig::default() };
    let baked = bake_mesh(&SdfField::sphere(Vec3::ZERO, 0.5), &cameras, params, &config).unwrap();
    assert!(baked.mesh.is_edge_manifold());
    assert!(baked.mesh.is_region_ordered());

    let cache = rasterize_views(&baked.mesh, &cameras);
    let fit = fit_appearance(&baked.mesh, &cache, &images, &AppearanceConfig { iterations: 300, ..AppearanceConfig::default() }).unwrap();
    assert!(fit.history.last().unwrap().loss < fit.history[0].loss);
    let rendered = render_cached(&fit.appearance, &cache.views[0], &cameras[0]);
    assert!(psnr(&images[0].image, &rendered).unwrap() > 25.0);
}

#[test]
fn trained_model_feeds_the_bake() {
    let images = dataset(8, 24, 0.0);
    let config = TrainConfig {
        iterations: 60,
        batch_rays: 32,
        samples_per_ray: 24,
        eikonal_points: 64,
        mlp: MlpConfig { hidden_layers: 2, width: 16, num_freqs: 2, outputs: NEURAL_OUTPUTS, sphere_prior: Some(0.5) },
        ..TrainConfig::default()
    };
    let out = train(&images, &config).unwrap();
    assert_eq!(out.history.len(), 60);
    assert!(out.history.iter().all(|r| r.loss.is_finite()));
    let params = DensityParams::new(beta_at(&config.beta, 1.0).unwrap()).unwrap();
    let cameras: Vec<_> = images.iter().map(|p| p.camera).collect();
    let baked = bake_mesh(&out.model, &cameras, params, &BakeConfig { resolution: 32, samples_per_ray: 24, ..BakeConfig::default() }).unwrap();
    // the sphere prior starts the field at the right surface, so a mesh exists
    assert!(baked.report.triangles > 0);
    let app = BakedAppearance::new(&baked.mesh, 3, 1, 40.0).unwrap();
    assert_eq!(app.vertex_count(), baked.mesh.vertex_count());
}
