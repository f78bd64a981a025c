use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Dimensions(format!(
            "image must be at least 1x1, got {width}x{height}"
        )));
    }
    if width * height != len {
        return Err(Error::Dimensions(format!(
            "{width}x{height} image needs {} pixels, got {len}",
            width * height
        )));
    }
    Ok(())
}

fn check_unit(v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Data(format!("pixel value {v} outside [0, 1]")));
    }
    Ok(())
}

/// Single-channel raster, row-major, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        check_dims(width, height, pixels.len())?;
        pixels.iter().try_for_each(|&v| check_unit(v))?;
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image from a per-pixel function, clamping results into [0, 1].
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(clamp_unit(f(x, y)));
            }
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub(crate) fn from_clamped(width: usize, height: usize, mut pixels: Vec<f64>) -> Self {
        debug_assert_eq!(width * height, pixels.len());
        pixels.iter_mut().for_each(|v| *v = clamp_unit(*v));
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn to_rgb(&self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| [v, v, v]).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.pixels.iter().map(|&v| quantize(v)).collect(),
        )
        .expect("buffer length matches dims");
        buf.save_with_format(path, ImageFormat::Png)
            .map_err(|e| encode_error(path, e))
    }

    /// Writes a binary (P5) 8-bit PGM.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|&v| quantize(v)));
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Three-channel raster, row-major RGB triples in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        check_dims(width, height, pixels.len())?;
        pixels
            .iter()
            .flat_map(|p| p.iter())
            .try_for_each(|&v| check_unit(v))?;
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let raw = self
            .pixels
            .iter()
            .flat_map(|p| p.iter().map(|&v| quantize(v)))
            .collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dims");
        buf.save_with_format(path, ImageFormat::Png)
            .map_err(|e| encode_error(path, e))
    }
}

fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (clamp_unit(v) * 255.0).round() as u8
}

fn encode_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other}", path.display())),
    }
}

/// Decodes a PNG or binary PPM/PGM file, scaling channels into [0, 1].
///
/// Grayscale sources are promoted to equal RGB channels; alpha is dropped.
pub fn load_image(path: &Path) -> Result<RgbImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        _ => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
            })
        }
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(_) => Error::UnsupportedFormat {
            path: path.to_path_buf(),
        },
        other => Error::CorruptImage {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let s8 = 1.0 / 255.0;
    let s16 = 1.0 / 65535.0;
    let pixels: Vec<[f64; 3]> = match decoded {
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| [p.0[0] as f64 * s8; 3]).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| [p.0[0] as f64 * s8; 3]).collect(),
        DynamicImage::ImageRgb8(b) => b
            .pixels()
            .map(|p| p.0.map(|c| c as f64 * s8))
            .collect(),
        DynamicImage::ImageRgba8(b) => b
            .pixels()
            .map(|p| [p.0[0], p.0[1], p.0[2]].map(|c| c as f64 * s8))
            .collect(),
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| [p.0[0] as f64 * s16; 3]).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| [p.0[0] as f64 * s16; 3]).collect(),
        DynamicImage::ImageRgb16(b) => b
            .pixels()
            .map(|p| p.0.map(|c| c as f64 * s16))
            .collect(),
        other => other
            .to_rgb16()
            .pixels()
            .map(|p| p.0.map(|c| c as f64 * s16))
            .collect(),
    };
    RgbImage::new(w, h, pixels).map_err(|e| Error::CorruptImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// BT.601 luminance: 0.299 R + 0.587 G + 0.114 B.
pub fn to_gray(img: &RgbImage) -> GrayImage {
    let pixels = img
        .pixels
        .iter()
        .map(|&[r, g, b]| 0.299 * r + 0.587 * g + 0.114 * b)
        .collect();
    GrayImage::from_clamped(img.width, img.height, pixels)
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resize_bilinear(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Dimensions(format!(
            "resize target must be at least 1x1, got {out_w}x{out_h}"
        )));
    }
    if (out_w, out_h) == img.dims() {
        return Ok(img.clone());
    }
    let sample_axis = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let pos = (i as f64 + 0.5) * (n_in as f64 / n_out as f64) - 0.5;
        let pos = pos.clamp(0.0, (n_in - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| sample_axis(x, img.width, out_w)).collect();
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, ty) = sample_axis(y, img.height, out_h);
        for &(x0, x1, tx) in &xs {
            let top = lerp(img.get(x0, y0), img.get(x1, y0), tx);
            let bottom = lerp(img.get(x0, y1), img.get(x1, y1), tx);
            out.push(lerp(top, bottom, ty));
        }
    }
    Ok(GrayImage::from_clamped(out_w, out_h, out))
}

/// `a + (b - a) * t`; exact when `a == b`.
#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}
