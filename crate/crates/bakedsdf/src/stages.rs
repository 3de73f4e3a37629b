//! The pipeline stages. Stages communicate only through files in the output
//! directory; each verifies its upstream manifests before running and writes
//! its own manifest afterwards.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bakedsdf_core::appearance::{fit_appearance, rasterize_views, render_view};
use bakedsdf_core::bake::bake_mesh;
use bakedsdf_core::camera::{Image, PosedImage};
use bakedsdf_core::field::{beta_at, DensityParams};
use bakedsdf_core::metrics::{psnr, ssim};
use bakedsdf_core::train::{render_image, train};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{load_appearance, load_model, save_appearance, save_model, ModelHeader};
use crate::config::PipelineConfig;
use crate::dataset::{dataset_files, load_dataset, write_dataset, CameraFile, Split, CAMERA_FILE};
use crate::error::{read, read_json, write, write_json, PipelineError, Result};
use crate::gltf::{export_asset, import_asset};
use crate::image_io::{read_png, write_png16};
use crate::manifest::{config_hash, sha256_hex, verify_upstream, Manifest};
use crate::mesh_io::{load_bmsh, save_bmsh, save_obj};
use crate::scene_file::SceneFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    Train,
    Bake,
    Fit,
    Export,
    Render,
    Metrics,
}

impl Stage {
    pub const ALL: [Stage; 7] = [Stage::Synth, Stage::Train, Stage::Bake, Stage::Fit, Stage::Export, Stage::Render, Stage::Metrics];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Train => "train",
            Stage::Bake => "bake",
            Stage::Fit => "fit",
            Stage::Export => "export",
            Stage::Render => "render",
            Stage::Metrics => "metrics",
        }
    }

    fn enabled(self, config: &PipelineConfig) -> bool {
        let s = &config.stages;
        match self {
            Stage::Synth => s.synth,
            Stage::Train => s.train,
            Stage::Bake => s.bake,
            Stage::Fit => s.fit,
            Stage::Export => s.export,
            Stage::Render => s.render,
            Stage::Metrics => s.metrics,
        }
    }
}

/// File names inside the output directory.
pub mod layout {
    pub const DATASET: &str = "dataset";
    pub const MODEL: &str = "model.bsdf";
    pub const TRAIN_HISTORY: &str = "train_history.json";
    pub const MESH: &str = "mesh.bmsh";
    pub const MESH_OBJ: &str = "mesh.obj";
    pub const BAKE_REPORT: &str = "bake_report.json";
    pub const APPEARANCE: &str = "appearance.bapp";
    pub const FIT_HISTORY: &str = "fit_history.json";
    pub const ASSET: &str = "asset.glb.gz";
    pub const RENDERS: &str = "renders";
    pub const METRICS: &str = "metrics.json";
    pub const TIMINGS: &str = "timings.json";
    pub const EFFECTIVE_CONFIG: &str = "config.toml";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub file: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub images: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricSet {
    pub fn compute(pairs: &[(String, Image, Image)]) -> Result<Self> {
        let images = pairs
            .iter()
            .map(|(file, truth, render)| Ok(ImageMetrics { file: file.clone(), psnr: psnr(truth, render)?, ssim: ssim(truth, render)? }))
            .collect::<Result<Vec<_>>>()?;
        let n = images.len().max(1) as f64;
        Ok(Self {
            mean_psnr: images.iter().map(|m| m.psnr).sum::<f64>() / n,
            mean_ssim: images.iter().map(|m| m.ssim).sum::<f64>() / n,
            images,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Baked asset renders against held-out ground truth.
    pub baked: MetricSet,
    /// Stage-1 volume renders, when enabled.
    pub stage1: Option<MetricSet>,
    /// Seconds per stage, from the most recent run of each.
    pub runtimes: BTreeMap<String, f64>,
}

fn baked_render_name(i: usize) -> String {
    format!("test_{i:03}.png")
}

fn stage1_render_name(i: usize) -> String {
    format!("stage1_test_{i:03}.png")
}

pub struct Pipeline {
    pub config: PipelineConfig,
}

struct StageRun {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config }
    }

    pub fn root(&self) -> &Path {
        &self.config.output
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.config.output.join(name)
    }

    fn upstream(&self, stage: Stage) -> Vec<Stage> {
        match stage {
            Stage::Synth => vec![],
            Stage::Train => vec![Stage::Synth],
            Stage::Bake => vec![Stage::Synth, Stage::Train],
            Stage::Fit => vec![Stage::Synth, Stage::Bake],
            Stage::Export => vec![Stage::Bake, Stage::Fit],
            Stage::Render if self.config.render.stage1 => vec![Stage::Synth, Stage::Train, Stage::Export],
            Stage::Render => vec![Stage::Synth, Stage::Export],
            Stage::Metrics => vec![Stage::Synth, Stage::Render],
        }
    }

    /// Hash of the configuration a stage depends on directly.
    pub fn stage_config_hash(&self, stage: Stage) -> Result<String> {
        let c = &self.config;
        Ok(match stage {
            Stage::Synth => config_hash(&json!({ "scene_sha256": sha256_hex(&read(&c.scene)?) })),
            Stage::Train => config_hash(&c.train),
            Stage::Bake => config_hash(&c.bake),
            Stage::Fit => config_hash(&c.appearance),
            Stage::Export => config_hash(&json!({ "format": crate::gltf::FORMAT_VERSION })),
            Stage::Render => config_hash(&c.render),
            Stage::Metrics => config_hash(&json!({})),
        })
    }

    /// Runs one stage after verifying its upstream manifests.
    pub fn run(&self, stage: Stage) -> Result<()> {
        for up in self.upstream(stage) {
            verify_upstream(self.root(), up.name(), &self.stage_config_hash(up)?)?;
        }
        tracing::info!(stage = stage.name(), output = %self.root().display(), "stage started");
        let start = Instant::now();
        let run = match stage {
            Stage::Synth => self.synth()?,
            Stage::Train => self.train()?,
            Stage::Bake => self.bake()?,
            Stage::Fit => self.fit()?,
            Stage::Export => self.export()?,
            Stage::Render => self.render()?,
            Stage::Metrics => self.metrics()?,
        };
        let seconds = start.elapsed().as_secs_f64();
        Manifest::build(self.root(), stage.name(), self.stage_config_hash(stage)?, self.config.seed, &run.inputs, &run.outputs)?
            .save(self.root())?;
        write(&self.path(layout::EFFECTIVE_CONFIG), self.config.to_toml().as_bytes())?;
        let timings_path = self.path(layout::TIMINGS);
        let mut timings: BTreeMap<String, f64> = if timings_path.exists() { read_json(&timings_path)? } else { BTreeMap::new() };
        timings.insert(stage.name().into(), seconds);
        write_json(&timings_path, &timings)?;
        tracing::info!(stage = stage.name(), seconds, outputs = run.outputs.len(), "stage finished");
        Ok(())
    }

    /// Runs every enabled stage in order.
    pub fn run_enabled(&self) -> Result<()> {
        for stage in Stage::ALL {
            if stage.enabled(&self.config) {
                self.run(stage)?;
            } else {
                tracing::info!(stage = stage.name(), "stage disabled");
            }
        }
        Ok(())
    }

    fn dataset_dir(&self) -> PathBuf {
        self.path(layout::DATASET)
    }

    fn synth(&self) -> Result<StageRun> {
        let file = SceneFile::load(&self.config.scene)?;
        let scene = file.scene().map_err(|e| PipelineError::format(&self.config.scene, e))?;
        let render = |rig: &crate::scene_file::CameraRig| -> Result<Vec<PosedImage>> {
            let cams = rig.cameras().map_err(|e| PipelineError::format(&self.config.scene, e))?;
            let images = bakedsdf_core::par::map_ordered(&cams, |_, c| scene.render(c));
            images.into_iter().zip(cams).map(|(img, cam)| Ok(PosedImage::new(img, cam)?)).collect()
        };
        let (train, test) = (render(&file.train_cameras)?, render(&file.test_cameras)?);
        tracing::info!(train = train.len(), test = test.len(), "rendered ground truth");
        let dir = self.dataset_dir();
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(crate::error::io_at(&dir))?;
        }
        let outputs = write_dataset(&dir, &train, &test)?;
        Ok(StageRun { inputs: vec![], outputs })
    }

    fn train(&self) -> Result<StageRun> {
        let data = load_dataset(&self.dataset_dir())?;
        let cfg = &self.config.train;
        let out = train(&data.train, cfg)?;
        let last = out.history.last();
        tracing::info!(iterations = cfg.iterations, loss = last.map(|r| r.loss), "trained stage-1 model");
        let header = ModelHeader {
            mlp: cfg.mlp,
            beta: beta_at(&cfg.beta, 1.0)?,
            near: cfg.near,
            bound_radius: cfg.bound_radius,
        };
        let (model_path, history_path) = (self.path(layout::MODEL), self.path(layout::TRAIN_HISTORY));
        save_model(&model_path, &out.model, &header)?;
        write_json(&history_path, &out.history)?;
        Ok(StageRun { inputs: dataset_files(&self.dataset_dir())?, outputs: vec![model_path, history_path] })
    }

    fn bake(&self) -> Result<StageRun> {
        let cam_path = self.dataset_dir().join(CAMERA_FILE);
        let cameras = CameraFile::load(&cam_path)?.cameras(Split::Train);
        let model_path = self.path(layout::MODEL);
        let (model, header) = load_model(&model_path)?;
        let out = bake_mesh(&model, &cameras, DensityParams::new(header.beta)?, &self.config.bake)?;
        tracing::info!(triangles = out.report.triangles, vertices = out.report.vertices, "baked mesh");
        let outputs = vec![self.path(layout::MESH), self.path(layout::MESH_OBJ), self.path(layout::BAKE_REPORT)];
        save_bmsh(&outputs[0], &out.mesh)?;
        save_obj(&outputs[1], &out.mesh)?;
        write_json(&outputs[2], &out.report)?;
        Ok(StageRun { inputs: vec![cam_path, model_path], outputs })
    }

    fn fit(&self) -> Result<StageRun> {
        let data = load_dataset(&self.dataset_dir())?;
        let mesh_path = self.path(layout::MESH);
        let mesh = load_bmsh(&mesh_path)?;
        let cameras: Vec<_> = data.train.iter().map(|p| p.camera).collect();
        let cache = rasterize_views(&mesh, &cameras);
        let out = fit_appearance(&mesh, &cache, &data.train, &self.config.appearance)?;
        tracing::info!(
            iterations = self.config.appearance.iterations,
            loss = out.history.last().map(|r| r.loss),
            "fitted appearance"
        );
        let outputs = vec![self.path(layout::APPEARANCE), self.path(layout::FIT_HISTORY)];
        save_appearance(&outputs[0], &out.appearance)?;
        write_json(&outputs[1], &out.history)?;
        let mut inputs = dataset_files(&self.dataset_dir())?;
        inputs.push(mesh_path);
        Ok(StageRun { inputs, outputs })
    }

    fn export(&self) -> Result<StageRun> {
        let mesh_path = self.path(layout::MESH);
        let app_path = self.path(layout::APPEARANCE);
        let mesh = load_bmsh(&mesh_path)?;
        let appearance = load_appearance(&app_path, &mesh)?;
        let asset = self.path(layout::ASSET);
        export_asset(&asset, &mesh, &appearance)?;
        Ok(StageRun { inputs: vec![mesh_path, app_path], outputs: vec![asset] })
    }

    fn render(&self) -> Result<StageRun> {
        let cam_path = self.dataset_dir().join(CAMERA_FILE);
        let cameras = CameraFile::load(&cam_path)?.cameras(Split::Test);
        let asset_path = self.path(layout::ASSET);
        let asset = import_asset(&asset_path)?;
        let dir = self.path(layout::RENDERS);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(crate::error::io_at(&dir))?;
        }
        let mut outputs = Vec::new();
        for (i, cam) in cameras.iter().enumerate() {
            let path = dir.join(baked_render_name(i));
            write_png16(&path, &render_view(&asset.mesh, &asset.appearance, cam))?;
            outputs.push(path);
        }
        let mut inputs = vec![cam_path, asset_path];
        if self.config.render.stage1 {
            let model_path = self.path(layout::MODEL);
            let (model, header) = load_model(&model_path)?;
            let params = DensityParams::new(header.beta)?;
            for (i, cam) in cameras.iter().enumerate() {
                let img = render_image(&model, cam, params, self.config.render.stage1_samples, header.near, header.bound_radius)?;
                let path = dir.join(stage1_render_name(i));
                write_png16(&path, &img.clamped())?;
                outputs.push(path);
            }
            inputs.push(model_path);
        }
        tracing::info!(views = cameras.len(), stage1 = self.config.render.stage1, "rendered held-out views");
        Ok(StageRun { inputs, outputs })
    }

    fn metrics(&self) -> Result<StageRun> {
        let dir = self.dataset_dir();
        let cam_path = dir.join(CAMERA_FILE);
        let frames: Vec<_> = CameraFile::load(&cam_path)?.frames.into_iter().filter(|f| f.split == Split::Test).collect();
        let mut inputs = vec![cam_path];
        let mut collect = |name: fn(usize) -> String| -> Result<Vec<(String, Image, Image)>> {
            let mut pairs = Vec::new();
            for (i, f) in frames.iter().enumerate() {
                let (truth_path, render_path) = (dir.join(&f.file), self.path(layout::RENDERS).join(name(i)));
                pairs.push((f.file.clone(), read_png(&truth_path)?, read_png(&render_path)?));
                inputs.extend([truth_path, render_path]);
            }
            Ok(pairs)
        };
        let baked = MetricSet::compute(&collect(baked_render_name)?)?;
        let stage1 = if self.config.render.stage1 { Some(MetricSet::compute(&collect(stage1_render_name)?)?) } else { None };
        let timings_path = self.path(layout::TIMINGS);
        let runtimes = if timings_path.exists() { read_json(&timings_path)? } else { BTreeMap::new() };
        tracing::info!(
            baked_psnr = baked.mean_psnr,
            baked_ssim = baked.mean_ssim,
            stage1_psnr = stage1.as_ref().map(|s| s.mean_psnr),
            "computed metrics"
        );
        let report = MetricsReport { baked, stage1, runtimes };
        let path = self.path(layout::METRICS);
        write_json(&path, &report)?;
        Ok(StageRun { inputs, outputs: vec![path] })
    }
}
