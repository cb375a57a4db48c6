use rand::Rng;

use super::noise::value_noise;
use crate::imaging::{hsv_to_rgb, Image};
use crate::rng;

/// Deterministic natural-looking test images: smooth fractal luminance,
/// muted colours and a few hard-edged patches. Saturation stays at or below
/// 0.35.
pub fn probe_images(count: usize, size: usize, seed: u64) -> Vec<Image> {
    (0..count)
        .map(|i| {
            let mut rng = rng::stream(seed, &["probe".into(), i.into()]);
            let lum = value_noise(size, size, 4, 5, 0.55, &mut rng);
            let tint = value_noise(size, size, 2, 2, 0.5, &mut rng);
            let base_hue: f32 = rng.random();
            let sat: f32 = rng.random_range(0.08..0.3);
            let patches: Vec<(usize, usize, usize, usize, f32)> = (0..rng.random_range(2..6))
                .map(|_| {
                    let w = rng.random_range(size / 8..size / 3).max(1);
                    let h = rng.random_range(size / 8..size / 3).max(1);
                    let x = rng.random_range(0..size - w);
                    let y = rng.random_range(0..size - h);
                    (x, y, w, h, rng.random_range(-0.25..0.25))
                })
                .collect();
            Image::from_fn(size, size, |x, y| {
                let mut v = 0.2 + 0.6 * lum.get(x, y);
                for &(px, py, pw, ph, dv) in &patches {
                    if (px..px + pw).contains(&x) && (py..py + ph).contains(&y) {
                        v += dv;
                    }
                }
                let h = (base_hue + 0.15 * tint.get(x, y)).rem_euclid(1.0);
                let s = (sat + 0.05 * tint.get(x, y)).min(0.35);
                hsv_to_rgb([h, s, v.clamp(0.05, 0.95)])
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::rgb_to_hsv;

    #[test]
    fn probes_are_muted_and_deterministic() {
        let a = probe_images(3, 32, 1);
        assert_eq!(a, probe_images(3, 32, 1));
        for img in &a {
            for y in 0..32 {
                for x in 0..32 {
                    assert!(rgb_to_hsv(img.pixel(x, y))[1] <= 0.3501);
                }
            }
        }
    }
}
