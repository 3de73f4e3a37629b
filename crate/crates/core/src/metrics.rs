//! Image fidelity metrics on linear RGB in `[0, 1]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::Image;
use crate::error::{Error, Result};
use crate::math::{exp, log10};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

fn check_sizes(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::SizeMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_sizes(a, b)?;
    let n = (a.pixels.len() * 3).max(1) as f64;
    let s: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (*x - *y).norm_squared())
        .sum();
    Ok(s / n)
}

/// Peak signal-to-noise ratio for a unit peak, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m))
}

pub fn psnr_from_mse(m: f64) -> f64 {
    if m <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * log10(m)).min(PSNR_CAP)
    }
}

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> Vec<f64> {
    let n = 2 * SSIM_RADIUS + 1;
    let mut k: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 - SSIM_RADIUS as f64;
            exp(-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" filtering of a single-channel plane.
fn filter(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over channels with an 11x11 Gaussian window (sigma 1.5).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_sizes(a, b)?;
    let (w, h) = (a.width, a.height);
    let n = 2 * SSIM_RADIUS + 1;
    if w < n || h < n {
        return Err(Error::InvalidConfig("SSIM needs images of at least 11x11".into()));
    }
    let k = gaussian_kernel();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.pixels.iter().map(|p| p[ch]).collect();
        let y: Vec<f64> = b.pixels.iter().map(|p| p[ch]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter(&x, w, h, &k);
        let (my, _, _) = filter(&y, w, h, &k);
        let (sxx, _, _) = filter(&xx, w, h, &k);
        let (syy, _, _) = filter(&yy, w, h, &k);
        let (sxy, ow, oh) = filter(&xy, w, h, &k);
        let mut acc = 0.0;
        for i in 0..ow * oh {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / (ow * oh) as f64;
    }
    Ok(total / 3.0)
}
