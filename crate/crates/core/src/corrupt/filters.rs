//! Single-channel filtering helpers shared by the corruption kinds.

use crate::augment::{gaussian_kernel, reflect_index};
use crate::imaging::{Image, Plane, CHANNELS};

pub fn split(image: &Image) -> [Plane; 3] {
    let (w, h) = (image.width(), image.height());
    let mut planes = [Plane::zeros(w, h), Plane::zeros(w, h), Plane::zeros(w, h)];
    for (i, px) in image.data().chunks_exact(CHANNELS).enumerate() {
        for c in 0..CHANNELS {
            planes[c].data[i] = px[c];
        }
    }
    planes
}

pub fn merge(planes: &[Plane; 3]) -> Image {
    let (w, h) = (planes[0].width, planes[0].height);
    let mut data = Vec::with_capacity(w * h * CHANNELS);
    for i in 0..w * h {
        data.extend(planes.iter().map(|p| p.data[i]));
    }
    Image::from_raw(w, h, data).expect("planes share dimensions")
}

pub fn map_planes(image: &Image, f: impl Fn(&Plane) -> Plane) -> Image {
    let [r, g, b] = split(image);
    merge(&[f(&r), f(&g), f(&b)])
}

/// 2-D correlation with a centred odd-sized kernel, mirrored borders.
pub fn convolve(p: &Plane, kernel: &Plane) -> Plane {
    let (kw, kh) = (kernel.width as i64, kernel.height as i64);
    let (rx, ry) = (kw / 2, kh / 2);
    let taps: Vec<(i64, i64, f64)> = (0..kh)
        .flat_map(|j| (0..kw).map(move |i| (i, j)))
        .map(|(i, j)| (i - rx, j - ry, kernel.get(i as usize, j as usize) as f64))
        .filter(|t| t.2 != 0.0)
        .collect();
    let mut out = Plane::zeros(p.width, p.height);
    for y in 0..p.height {
        for x in 0..p.width {
            let mut acc = 0.0;
            for &(dx, dy, k) in &taps {
                let xx = reflect_index(x as i64 + dx, p.width);
                let yy = reflect_index(y as i64 + dy, p.height);
                acc += k * p.get(xx, yy) as f64;
            }
            out.set(x, y, acc as f32);
        }
    }
    out
}

/// Separable Gaussian with independent horizontal and vertical `σ`.
pub fn blur_plane(p: &Plane, sigma_x: f64, sigma_y: f64) -> Plane {
    let pass = |src: &Plane, sigma: f64, horizontal: bool| -> Plane {
        if sigma <= 0.0 {
            return src.clone();
        }
        let k = gaussian_kernel(sigma);
        let r = (k.len() / 2) as i64;
        let mut out = Plane::zeros(src.width, src.height);
        for y in 0..src.height {
            for x in 0..src.width {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let off = t as i64 - r;
                    let v = if horizontal {
                        src.get(reflect_index(x as i64 + off, src.width), y)
                    } else {
                        src.get(x, reflect_index(y as i64 + off, src.height))
                    };
                    acc += kv * v as f64;
                }
                out.set(x, y, acc as f32);
            }
        }
        out
    };
    pass(&pass(p, sigma_x, true), sigma_y, false)
}

/// One-sided Gaussian line blur: tap `i` (`0 ≤ i ≤ 2·radius`) samples the
/// pixel `i` steps back along `angle_deg` with weight `exp(−i²/2σ²)`.
/// Samples beyond the border take the nearest edge pixel.
pub fn motion_blur_plane(p: &Plane, radius: usize, sigma: f64, angle_deg: f64) -> Plane {
    let width = 2 * radius + 1;
    let weights: Vec<f64> = (0..width)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let (s, c) = angle_deg.to_radians().sin_cos();
    let offsets: Vec<(i64, i64, f64)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let dx = -((i as f64 * c).ceil()) as i64;
            let dy = -((i as f64 * s).ceil()) as i64;
            (dx, dy, w / total)
        })
        .collect();
    let mut out = Plane::zeros(p.width, p.height);
    let (wm, hm) = (p.width as i64 - 1, p.height as i64 - 1);
    for y in 0..p.height {
        for x in 0..p.width {
            let mut acc = 0.0;
            for &(dx, dy, w) in &offsets {
                let xx = (x as i64 + dx).clamp(0, wm) as usize;
                let yy = (y as i64 + dy).clamp(0, hm) as usize;
                acc += w * p.get(xx, yy) as f64;
            }
            out.set(x, y, acc as f32);
        }
    }
    out
}

/// Centre zoom by factor `z ≥ 1`, bilinear, same output size.
pub fn zoom_plane(p: &Plane, z: f64) -> Plane {
    let (cx, cy) = (p.width as f64 / 2.0, p.height as f64 / 2.0);
    let mut out = Plane::zeros(p.width, p.height);
    for y in 0..p.height {
        for x in 0..p.width {
            let sx = cx + (x as f64 + 0.5 - cx) / z - 0.5;
            let sy = cy + (y as f64 + 0.5 - cy) / z - 0.5;
            out.set(x, y, p.sample_bilinear(sx, sy));
        }
    }
    out
}

/// Normalized disk kernel of the given radius, softened by a Gaussian of
/// width `alias_blur`.
pub fn disk_kernel(radius: f64, alias_blur: f64) -> Plane {
    let half = radius.max(8.0).ceil() as i64;
    let n = (2 * half + 1) as usize;
    let mut k = Plane::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (i as f64 - half as f64, j as f64 - half as f64);
            if x * x + y * y <= radius * radius {
                k.set(i, j, 1.0);
            }
        }
    }
    let sum: f32 = k.data.iter().sum();
    k.data.iter_mut().for_each(|v| *v /= sum);
    let mut k = blur_plane(&k, alias_blur, alias_blur);
    let sum: f64 = k.data.iter().map(|&v| v as f64).sum();
    k.data.iter_mut().for_each(|v| *v = (*v as f64 / sum) as f32);
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Plane {
        let mut p = Plane::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                p.set(x, y, ((x * 3 + y * 5) % 11) as f32 / 10.0);
            }
        }
        p
    }

    #[test]
    fn identity_kernel() {
        let p = ramp(7, 5);
        let mut k = Plane::zeros(3, 3);
        k.set(1, 1, 1.0);
        assert_eq!(convolve(&p, &k), p);
    }

    #[test]
    fn constant_plane_survives_filters() {
        let mut p = Plane::zeros(12, 9);
        p.data.iter_mut().for_each(|v| *v = 0.4);
        for out in [
            blur_plane(&p, 1.5, 0.7),
            motion_blur_plane(&p, 4, 2.0, 30.0),
            zoom_plane(&p, 1.3),
            convolve(&p, &disk_kernel(3.0, 0.5)),
        ] {
            assert!(out.data.iter().all(|v| (v - 0.4).abs() < 1e-6));
        }
    }

    #[test]
    fn disk_kernel_sums_to_one() {
        let k = disk_kernel(6.0, 0.5);
        let s: f64 = k.data.iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert_eq!(k.width, 17);
    }

    #[test]
    fn split_merge_round_trip() {
        let img = Image::from_fn(5, 4, |x, y| [x as f32 / 5.0, y as f32 / 4.0, 0.5]);
        assert_eq!(merge(&split(&img)), img);
    }

    #[test]
    fn zoom_one_is_identity() {
        let p = ramp(6, 6);
        let z = zoom_plane(&p, 1.0);
        for (a, b) in z.data.iter().zip(&p.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
