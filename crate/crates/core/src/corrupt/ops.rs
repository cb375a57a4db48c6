//! The individual corruption functions. Each takes already-resolved
//! parameters and a random stream; severity lookup happens in the caller.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use super::filters::{blur_plane, convolve, disk_kernel, map_planes, merge, motion_blur_plane, split, zoom_plane};
use super::noise::{plasma_fractal, value_noise};
use crate::error::Result;
use crate::imaging::{hsv_to_rgb, luma, rgb_to_hsv, Image, Plane, CHANNELS};
use crate::rng::StreamRng;

fn clamped(mut img: Image) -> Image {
    img.clamp01();
    img
}

fn map_values(image: &Image, mut f: impl FnMut(f32) -> f32) -> Image {
    let data = image.data().iter().map(|&v| f(v)).collect();
    clamped(Image::from_raw(image.width(), image.height(), data).expect("same size"))
}

pub fn gaussian_noise(image: &Image, sigma: f64, rng: &mut StreamRng) -> Image {
    map_values(image, |v| {
        let g: f64 = StandardNormal.sample(rng);
        v + (sigma * g) as f32
    })
}

pub fn shot_noise(image: &Image, photons: f64, rng: &mut StreamRng) -> Image {
    map_values(image, |v| {
        let lambda = v.max(0.0) as f64 * photons;
        if lambda <= 0.0 {
            return 0.0;
        }
        let k: f64 = Poisson::new(lambda).expect("positive rate").sample(rng);
        (k / photons) as f32
    })
}

/// Salt and pepper: each channel value independently becomes 0 or 1 (even
/// odds) with probability `amount`.
pub fn impulse_noise(image: &Image, amount: f64, rng: &mut StreamRng) -> Image {
    map_values(image, |v| {
        let u: f64 = rng.random();
        let salt: bool = rng.random();
        if u < amount {
            salt as u8 as f32
        } else {
            v
        }
    })
}

pub fn speckle_noise(image: &Image, sigma: f64, rng: &mut StreamRng) -> Image {
    map_values(image, |v| {
        let g: f64 = StandardNormal.sample(rng);
        v + v * (sigma * g) as f32
    })
}

pub fn defocus_blur(image: &Image, radius: f64, alias_blur: f64) -> Image {
    let k = disk_kernel(radius, alias_blur);
    clamped(map_planes(image, |p| convolve(p, &k)))
}

/// Blur, then `iterations` sweeps of swapping each pixel with a random
/// neighbour at most `max_delta` away (bottom-right to top-left), then blur
/// again.
pub fn glass_blur(image: &Image, sigma: f64, max_delta: usize, iterations: usize, rng: &mut StreamRng) -> Image {
    let mut x = crate::augment::gaussian_blur(image, sigma);
    let (w, h) = (x.width(), x.height());
    let d = max_delta as i64;
    if w as i64 > 2 * d && h as i64 > 2 * d {
        for _ in 0..iterations {
            for yy in (d + 1..=h as i64 - d).rev() {
                for xx in (d + 1..=w as i64 - d).rev() {
                    let dx = rng.random_range(-d..d);
                    let dy = rng.random_range(-d..d);
                    let (sx, sy) = ((xx + dx) as usize, (yy + dy) as usize);
                    let (px, py) = (xx as usize, yy as usize);
                    let a = x.pixel(px, py);
                    let b = x.pixel(sx, sy);
                    x.set_pixel(px, py, b);
                    x.set_pixel(sx, sy, a);
                }
            }
        }
    }
    clamped(crate::augment::gaussian_blur(&x, sigma))
}

pub fn motion_blur(image: &Image, radius: usize, sigma: f64, rng: &mut StreamRng) -> Image {
    let angle = rng.random_range(-45.0..45.0);
    clamped(map_planes(image, |p| motion_blur_plane(p, radius, sigma, angle)))
}

/// Mean of the image and its centre zooms by `1, 1+step, ..., max_zoom`.
pub fn zoom_blur(image: &Image, max_zoom: f64, step: f64) -> Image {
    let n = ((max_zoom - 1.0) / step).round() as usize + 1;
    let planes = split(image);
    let mut acc: Vec<Plane> = planes.to_vec();
    for i in 0..n {
        let z = 1.0 + i as f64 * step;
        for c in 0..CHANNELS {
            let zp = zoom_plane(&planes[c], z);
            for (a, b) in acc[c].data.iter_mut().zip(&zp.data) {
                *a += b;
            }
        }
    }
    for p in &mut acc {
        p.data.iter_mut().for_each(|v| *v /= (n + 1) as f32);
    }
    clamped(merge(&[acc[0].clone(), acc[1].clone(), acc[2].clone()]))
}

#[allow(clippy::too_many_arguments)]
pub fn snow(
    image: &Image,
    loc: f64,
    scale: f64,
    zoom: f64,
    threshold: f64,
    motion_radius: usize,
    motion_sigma: f64,
    blend: f64,
    rng: &mut StreamRng,
) -> Image {
    let (w, h) = (image.width(), image.height());
    let normal = Normal::new(loc, scale).expect("finite");
    let mut layer = Plane::zeros(w, h);
    layer.data.iter_mut().for_each(|v| *v = normal.sample(rng) as f32);
    let mut layer = zoom_plane(&layer, zoom);
    layer.data.iter_mut().for_each(|v| {
        if (*v as f64) < threshold {
            *v = 0.0
        }
    });
    layer.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let angle = rng.random_range(-135.0..-45.0);
    let flakes = motion_blur_plane(&layer, motion_radius, motion_sigma, angle);
    let blend = blend as f32;
    let mut out = image.map(|p| {
        let g = luma(p) * 1.5 + 0.5;
        p.map(|v| blend * v + (1.0 - blend) * v.max(g))
    });
    for y in 0..h {
        for x in 0..w {
            let s = flakes.get(x, y) + flakes.get(w - 1 - x, h - 1 - y);
            let p = out.pixel(x, y).map(|v| v + s);
            out.set_pixel(x, y, p);
        }
    }
    clamped(out)
}

/// Procedural frost: thin bright crystal ridges over a dim haze, tinted
/// pale blue. Like photographed frost it is mostly dark with sparse bright
/// structure (mean around 0.15).
pub fn frost_layer(width: usize, height: usize, rng: &mut StreamRng) -> Image {
    let haze = value_noise(width, height, 6, 4, 0.6, rng);
    let veins = value_noise(width, height, 24, 4, 0.55, rng);
    Image::from_fn(width, height, |x, y| {
        let ridge = 1.0 - (2.0 * veins.get(x, y) - 1.0).abs();
        let t = (0.1 * haze.get(x, y) + 0.95 * ridge.powi(16)).clamp(0.0, 1.0);
        [0.85 * t, 0.92 * t, t]
    })
}

pub fn frost(image: &Image, image_weight: f64, frost_weight: f64, rng: &mut StreamRng) -> Image {
    let layer = frost_layer(image.width(), image.height(), rng);
    let (a, b) = (image_weight as f32, frost_weight as f32);
    let data = image.data().iter().zip(layer.data()).map(|(&x, &f)| a * x + b * f).collect();
    clamped(Image::from_raw(image.width(), image.height(), data).expect("same size"))
}

pub fn fog(image: &Image, strength: f64, decay: f64, rng: &mut StreamRng) -> Image {
    let (w, h) = (image.width(), image.height());
    let size = w.max(h).next_power_of_two().max(2);
    let plasma = plasma_fractal(size, decay, rng);
    let max_val = image.data().iter().copied().fold(0.0f32, f32::max) as f64;
    let norm = (max_val / (max_val + strength)) as f32;
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let f = (strength * plasma[y * size + x]) as f32;
            let p = image.pixel(x, y).map(|v| (v + f) * norm);
            out.set_pixel(x, y, p);
        }
    }
    clamped(out)
}

pub fn brightness(image: &Image, delta: f64) -> Image {
    let d = delta as f32;
    image.map(|p| {
        let [h, s, v] = rgb_to_hsv(p);
        hsv_to_rgb([h, s, (v + d).clamp(0.0, 1.0)]).map(|c| c.clamp(0.0, 1.0))
    })
}

/// Liquid splashes: smoothed Gaussian noise above a threshold marks the
/// splash area. Mud darkens it towards brown; water brightens it towards a
/// pale cyan.
#[allow(clippy::too_many_arguments)]
pub fn spatter(
    image: &Image,
    loc: f64,
    scale: f64,
    sigma: f64,
    threshold: f64,
    intensity: f64,
    mud: bool,
    rng: &mut StreamRng,
) -> Image {
    let (w, h) = (image.width(), image.height());
    let normal = Normal::new(loc, scale).expect("finite");
    let mut layer = Plane::zeros(w, h);
    layer.data.iter_mut().for_each(|v| *v = normal.sample(rng) as f32);
    let layer = blur_plane(&layer, sigma, sigma);
    let t = threshold as f32;
    let (mask, colour) = if mud {
        let mut m = Plane::zeros(w, h);
        for (d, &s) in m.data.iter_mut().zip(&layer.data) {
            *d = (s > t) as u8 as f32;
        }
        let mut m = blur_plane(&m, intensity, intensity);
        m.data.iter_mut().for_each(|v| {
            if *v < 0.8 {
                *v = 0.0
            }
        });
        (m, [63.0 / 255.0, 42.0 / 255.0, 20.0 / 255.0])
    } else {
        let mut m = Plane::zeros(w, h);
        for (d, &s) in m.data.iter_mut().zip(&layer.data) {
            *d = if s > t { s } else { 0.0 };
        }
        let mut m = blur_plane(&m, 1.0, 1.0);
        let a = intensity as f32;
        m.data.iter_mut().for_each(|v| *v = (*v * a).clamp(0.0, 1.0));
        (m, [175.0 / 255.0, 238.0 / 255.0, 238.0 / 255.0])
    };
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let a = mask.get(x, y);
            let p = image.pixel(x, y);
            out.set_pixel(x, y, [0, 1, 2].map(|c| p[c] * (1.0 - a) + colour[c] * a));
        }
    }
    clamped(out)
}

/// `(x − mean)·c + mean` with per-channel means.
pub fn contrast(image: &Image, factor: f64) -> Image {
    let m = image.mean_rgb();
    let c = factor as f32;
    clamped(image.map(|p| [0, 1, 2].map(|i| (p[i] - m[i]) * c + m[i])))
}

/// Warp by a smooth random displacement field: uniform noise in
/// `±max_shift_frac·H`, Gaussian-smoothed with `σ = sigma_frac · side`,
/// scaled by `alpha`, sampled bilinearly with mirrored borders.
pub fn elastic(image: &Image, alpha: f64, sigma_frac: f64, max_shift_frac: f64, rng: &mut StreamRng) -> Image {
    let (w, h) = (image.width(), image.height());
    let max_d = h as f64 * max_shift_frac;
    let field = |rng: &mut StreamRng| {
        let mut p = Plane::zeros(w, h);
        if max_d > 0.0 {
            p.data.iter_mut().for_each(|v| *v = rng.random_range(-max_d..max_d) as f32);
        }
        let mut p = blur_plane(&p, w as f64 * sigma_frac, h as f64 * sigma_frac);
        p.data.iter_mut().for_each(|v| *v = (*v as f64 * alpha) as f32);
        p
    };
    let dy = field(rng);
    let dx = field(rng);
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let sx = mirror(x as f64 + dx.get(x, y) as f64, w);
            let sy = mirror(y as f64 + dy.get(x, y) as f64, h);
            out.set_pixel(x, y, image.sample_bilinear(sx, sy));
        }
    }
    clamped(out)
}

/// Mirrors a continuous coordinate into `[0, n − 1]`.
fn mirror(v: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let period = 2.0 * (n as f64 - 1.0);
    let m = v.rem_euclid(period);
    if m <= n as f64 - 1.0 {
        m
    } else {
        period - m
    }
}

/// Area-average downsample to `max(1, floor(side · scale))` pixels per
/// side, then nearest-neighbour upsample to the original size.
pub fn pixelate(image: &Image, scale: f64) -> Image {
    let (w, h) = (image.width(), image.height());
    let dw = ((w as f64 * scale).floor() as usize).max(1);
    let dh = ((h as f64 * scale).floor() as usize).max(1);
    let small = box_downsample(image, dw, dh);
    Image::from_fn(w, h, |x, y| {
        let sx = (((x as f64 + 0.5) * dw as f64 / w as f64).floor() as usize).min(dw - 1);
        let sy = (((y as f64 + 0.5) * dh as f64 / h as f64).floor() as usize).min(dh - 1);
        small.pixel(sx, sy)
    })
}

/// Each output pixel is the area-weighted mean of the source region it
/// covers.
pub fn box_downsample(image: &Image, dw: usize, dh: usize) -> Image {
    let (w, h) = (image.width(), image.height());
    let (fx, fy) = (w as f64 / dw as f64, h as f64 / dh as f64);
    let spans = |i: usize, f: f64, n: usize| -> Vec<(usize, f64)> {
        let (a, b) = (i as f64 * f, (i + 1) as f64 * f);
        (a.floor() as usize..(b.ceil() as usize).min(n))
            .map(|k| (k, (b.min(k as f64 + 1.0) - a.max(k as f64)).max(0.0)))
            .filter(|s| s.1 > 0.0)
            .collect()
    };
    Image::from_fn(dw, dh, |x, y| {
        let mut acc = [0.0f64; 3];
        let mut total = 0.0;
        for (sy, wy) in spans(y, fy, h) {
            for (sx, wx) in spans(x, fx, w) {
                let p = image.pixel(sx, sy);
                for c in 0..CHANNELS {
                    acc[c] += wx * wy * p[c] as f64;
                }
                total += wx * wy;
            }
        }
        acc.map(|v| (v / total) as f32)
    })
}

pub fn jpeg(image: &Image, quality: u8) -> Result<Image> {
    let rgb = image.to_rgb8();
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(Cursor::new(&mut buf), quality).encode_image(&rgb)?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)?.to_rgb8();
    Ok(Image::from_rgb8(&decoded))
}

pub fn saturate(image: &Image, factor: f64, offset: f64) -> Image {
    let (f, o) = (factor as f32, offset as f32);
    image.map(|p| {
        let [h, s, v] = rgb_to_hsv(p);
        hsv_to_rgb([h, (s * f + o).clamp(0.0, 1.0), v]).map(|c| c.clamp(0.0, 1.0))
    })
}

/// Low-frequency fractal cloud cover: where the noise exceeds `threshold`
/// the image is alpha-blended towards a bright, slightly shaded cloud
/// colour, with opacity ramping up to `opacity`.
pub fn cloudy(image: &Image, threshold: f64, opacity: f64, rng: &mut StreamRng) -> Image {
    let (w, h) = (image.width(), image.height());
    let cover = value_noise(w, h, 3, 5, 0.55, rng);
    let shade = value_noise(w, h, 8, 3, 0.5, rng);
    let t = threshold as f32;
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let n = cover.get(x, y);
            let r = ((n - t) / (1.0 - t).max(1e-6)).clamp(0.0, 1.0);
            let a = opacity as f32 * r * r * (3.0 - 2.0 * r);
            let tone = 0.88 + 0.1 * shade.get(x, y);
            let cloud = [tone, tone, (tone + 0.02).min(1.0)];
            let p = image.pixel(x, y);
            out.set_pixel(x, y, [0, 1, 2].map(|c| p[c] * (1.0 - a) + cloud[c] * a));
        }
    }
    clamped(out)
}
