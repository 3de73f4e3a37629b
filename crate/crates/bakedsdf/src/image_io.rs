//! PNG images. Pipeline images are linear RGB stored as 16-bit PNGs; 8-bit
//! inputs are treated as sRGB-encoded and linearized on load.

use std::io::BufWriter;
use std::path::Path;

use bakedsdf_core::camera::Image;
use bakedsdf_core::Rgb;

use crate::error::{io_at, read, PipelineError, Result};

const MAX16: f64 = 65535.0;

/// sRGB transfer function, encoded to linear.
pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// Nearest 16-bit level of a value clamped to `[0, 1]`.
pub fn to_level16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * MAX16).round() as u16
}

/// Rounds every channel to the 16-bit level stored on disk, so in-memory
/// images can match their files exactly.
pub fn quantize16(img: &Image) -> Image {
    Image {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|p| p.map(|v| to_level16(v) as f64 / MAX16)).collect(),
    }
}

/// Writes linear values as a 16-bit RGB PNG.
pub fn write_png16(path: &Path, img: &Image) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    let file = std::fs::File::create(path).map_err(io_at(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut data = Vec::with_capacity(img.pixels.len() * 6);
    for p in &img.pixels {
        for ch in 0..3 {
            data.extend_from_slice(&to_level16(p[ch]).to_be_bytes());
        }
    }
    let fail = |e: png::EncodingError| PipelineError::format(path, e.to_string());
    let mut w = enc.write_header().map_err(fail)?;
    w.write_image_data(&data).map_err(fail)?;
    w.finish().map_err(fail)
}

/// Reads an RGB or RGBA PNG. 16-bit data is taken as linear; 8-bit data as
/// sRGB. Alpha is ignored.
pub fn read_png(path: &Path) -> Result<Image> {
    let bytes = read(path)?;
    let fail = |e: png::DecodingError| PipelineError::format(path, e.to_string());
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(fail)?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| PipelineError::format(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(fail)?;
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(PipelineError::format(path, format!("unsupported color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let pixels: Vec<Rgb> = match info.bit_depth {
        png::BitDepth::Sixteen => data
            .chunks_exact(2 * channels)
            .map(|px| {
                let c = |i: usize| u16::from_be_bytes([px[2 * i], px[2 * i + 1]]) as f64 / MAX16;
                Rgb::new(c(0), c(1), c(2))
            })
            .collect(),
        png::BitDepth::Eight => data
            .chunks_exact(channels)
            .map(|px| Rgb::new(px[0] as f64, px[1] as f64, px[2] as f64).map(|v| srgb_to_linear(v / 255.0)))
            .collect(),
        other => return Err(PipelineError::format(path, format!("unsupported bit depth {other:?}"))),
    };
    if pixels.len() != w * h {
        return Err(PipelineError::format(path, "truncated image data"));
    }
    Ok(Image { width: w, height: h, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png16_round_trips_quantized_images() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(5, 3);
        for (i, p) in img.pixels.iter_mut().enumerate() {
            *p = Rgb::new(i as f64 / 14.0, 1.0 - i as f64 / 14.0, 0.123456789);
        }
        let path = dir.path().join("a.png");
        write_png16(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back, quantize16(&img));
        assert!((back.pixels[3] - img.pixels[3]).abs().max_elem() <= 0.5 / MAX16);
    }

    #[test]
    fn srgb_curve_round_trips() {
        for i in 0..=255 {
            let c = i as f64 / 255.0;
            assert!((linear_to_srgb(srgb_to_linear(c)) - c).abs() < 1e-12);
        }
        assert_eq!(srgb_to_linear(0.0), 0.0);
        assert!((srgb_to_linear(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn garbage_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"not a png").unwrap();
        assert!(matches!(read_png(&path), Err(PipelineError::Format { .. })));
    }
}
