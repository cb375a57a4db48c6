//! Float RGB images.
//!
//! Pixels are `f32` in `[0, 1]`, stored row-major, interleaved RGB. Pixel
//! `(x, y)` covers the continuous square `[x, x+1) × [y, y+1)`, so its
//! centre sits at `(x + 0.5, y + 0.5)`. Quantization to 8 bits happens only
//! when writing files.

use std::path::Path;

use image::{ImageBuffer, RgbImage};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * CHANNELS {
            return Err(Error::Shape(format!(
                "{}x{} RGB image needs {} values, got {}",
                width,
                height,
                width * height * CHANNELS,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    /// Bilinear sample at continuous pixel-index coordinates (pixel `k` has
    /// its centre at index `k`), clamping to the border.
    pub fn sample_bilinear(&self, fx: f64, fy: f64) -> [f32; 3] {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let fx = fx.clamp(0.0, max_x);
        let fy = fy.clamp(0.0, max_y);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = (fx - x0 as f64) as f32;
        let ty = (fy - y0 as f64) as f32;
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        let mut out = [0.0f32; 3];
        for c in 0..CHANNELS {
            let top = p00[c] + (p10[c] - p00[c]) * tx;
            let bottom = p01[c] + (p11[c] - p01[c]) * tx;
            out[c] = top + (bottom - top) * ty;
        }
        out
    }

    pub fn map(&self, mut f: impl FnMut([f32; 3]) -> [f32; 3]) -> Image {
        let mut out = self.clone();
        for px in out.data.chunks_exact_mut(CHANNELS) {
            let v = f([px[0], px[1], px[2]]);
            px.copy_from_slice(&v);
        }
        out
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(self.width - 1 - x, y, self.pixel(x, y));
            }
        }
        out
    }

    /// Per-channel mean.
    pub fn mean_rgb(&self) -> [f32; 3] {
        let mut acc = [0.0f64; 3];
        for px in self.data.chunks_exact(CHANNELS) {
            for c in 0..CHANNELS {
                acc[c] += px[c] as f64;
            }
        }
        let n = (self.width * self.height).max(1) as f64;
        [(acc[0] / n) as f32, (acc[1] / n) as f32, (acc[2] / n) as f32]
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions")
    }

    pub fn from_rgb8(img: &RgbImage) -> Image {
        let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Image {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    /// Reads any format the `image` crate decodes; grayscale and alpha inputs
    /// are promoted/flattened to RGB.
    pub fn load(path: &Path) -> Result<Image> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let dynamic = image::load_from_memory(&bytes)?;
        Ok(Image::from_rgb8(&dynamic.to_rgb8()))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let encoder = image::codecs::png::PngEncoder::new(&mut buf);
        self.to_rgb8().write_with_encoder(encoder)?;
        Ok(buf)
    }

    pub fn save_png(&self, path: &Path) -> Result<Vec<u8>> {
        let bytes = self.encode_png()?;
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(bytes)
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub fn luma(rgb: [f32; 3]) -> f32 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

/// RGB → HSV with all components in `[0, 1]`.
pub fn rgb_to_hsv(rgb: [f32; 3]) -> [f32; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, v]
}

pub fn hsv_to_rgb(hsv: [f32; 3]) -> [f32; 3] {
    let [h, s, v] = hsv;
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`; identical
/// images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape(format!(
            "psnr of {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len().max(1) as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// Single-channel float plane, used for masks, noise layers and kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn sample_bilinear(&self, fx: f64, fy: f64) -> f32 {
        let fx = fx.clamp(0.0, (self.width - 1) as f64);
        let fy = fy.clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = (fx - x0 as f64) as f32;
        let ty = (fy - y0 as f64) as f32;
        let top = self.get(x0, y0) + (self.get(x1, y0) - self.get(x0, y0)) * tx;
        let bottom = self.get(x0, y1) + (self.get(x1, y1) - self.get(x0, y1)) * tx;
        top + (bottom - top) * ty
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_round_trip() {
        for &rgb in &[
            [0.2f32, 0.4, 0.6],
            [1.0, 0.0, 0.0],
            [0.5, 0.5, 0.5],
            [0.9, 0.8, 0.1],
            [0.1, 0.7, 0.3],
            [0.6, 0.1, 0.8],
        ] {
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-6, "{rgb:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn flip_is_involution() {
        let img = Image::from_fn(5, 3, |x, y| [x as f32 / 5.0, y as f32 / 3.0, 0.5]);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_horizontal().pixel(0, 1), img.pixel(4, 1));
    }

    #[test]
    fn png_round_trip_quantizes_once() {
        let img = Image::from_fn(4, 4, |x, y| [(x * 60) as f32 / 255.0, (y * 50) as f32 / 255.0, 1.0]);
        let bytes = img.encode_png().unwrap();
        let back = Image::from_rgb8(&image::load_from_memory(&bytes).unwrap().to_rgb8());
        assert_eq!(back, img);
    }

    #[test]
    fn psnr_identity_is_infinite() {
        let img = Image::filled(3, 3, [0.3, 0.3, 0.3]);
        assert!(psnr(&img, &img).unwrap().is_infinite());
        let other = Image::filled(3, 3, [0.4, 0.3, 0.3]);
        let p = psnr(&img, &other).unwrap();
        // mse = 0.01 / 3
        assert!((p - 10.0 * (3.0f64 / 0.01).log10()).abs() < 1e-4);
    }
}
