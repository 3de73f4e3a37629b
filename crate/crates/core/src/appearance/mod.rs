//! Per-vertex diffuse color plus spherical-Gaussian lobes, fitted to images
//! through a rasterization cache with 8-bit quantization in the loop.

pub mod fit;
pub mod model;
pub mod raster;

pub use fit::{fit_appearance, loss_gradient, render_cached, render_view, AppearanceConfig, FitOutput, FitRecord, LossKind};
pub use model::{
    quantize_level, quantize_ste, decode_level, robust_loss, robust_loss_derivative, shade, BakedAppearance,
    Lobe, VertexAppearance, MAX_LOBES, MEAN_RANGE, UNIT_RANGE,
};
pub use raster::{rasterize, rasterize_views, PixelHit, RasterCache, ViewCache};
