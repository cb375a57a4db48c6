//! Weak and strong views for mean-teacher training.
//!
//! The weak view is an optional horizontal flip, applied to pixels and
//! boxes alike. The strong view is photometric only (colour jitter,
//! grayscale, blur, cutout), so boxes found on the weak view stay valid on
//! the strong one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::OrientedBox;
use crate::imaging::{hsv_to_rgb, luma, rgb_to_hsv, Image, CHANNELS};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeakAugmentConfig {
    pub flip_p: f64,
}

impl Default for WeakAugmentConfig {
    fn default() -> Self {
        WeakAugmentConfig { flip_p: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrongAugmentConfig {
    pub jitter_p: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub grayscale_p: f64,
    pub blur_p: f64,
    pub blur_sigma: [f64; 2],
    pub cutout_p: f64,
    pub cutout_count: [usize; 2],
    /// Largest rectangle side as a fraction of the image side.
    pub cutout_max_frac: f64,
}

impl Default for StrongAugmentConfig {
    fn default() -> Self {
        StrongAugmentConfig {
            jitter_p: 0.8,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            grayscale_p: 0.2,
            blur_p: 0.5,
            blur_sigma: [0.1, 2.0],
            cutout_p: 0.7,
            cutout_count: [1, 5],
            cutout_max_frac: 0.2,
        }
    }
}

impl StrongAugmentConfig {
    /// Every operation disabled.
    pub fn disabled() -> Self {
        StrongAugmentConfig {
            jitter_p: 0.0,
            grayscale_p: 0.0,
            blur_p: 0.0,
            cutout_p: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, p) in [
            ("augment.strong.jitter_p", self.jitter_p),
            ("augment.strong.grayscale_p", self.grayscale_p),
            ("augment.strong.blur_p", self.blur_p),
            ("augment.strong.cutout_p", self.cutout_p),
        ] {
            check_probability(key, p)?;
        }
        for (key, v, max) in [
            ("augment.strong.brightness", self.brightness, 1.0),
            ("augment.strong.contrast", self.contrast, 1.0),
            ("augment.strong.saturation", self.saturation, 1.0),
            ("augment.strong.hue", self.hue, 0.5),
            ("augment.strong.cutout_max_frac", self.cutout_max_frac, 1.0),
        ] {
            if !(0.0..=max).contains(&v) {
                return Err(Error::config(key, format!("must lie in [0, {max}], got {v}")));
            }
        }
        let [lo, hi] = self.blur_sigma;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::config("augment.strong.blur_sigma", format!("bad range [{lo}, {hi}]")));
        }
        let [a, b] = self.cutout_count;
        if a > b {
            return Err(Error::config("augment.strong.cutout_count", format!("bad range [{a}, {b}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub weak: WeakAugmentConfig,
    pub strong: StrongAugmentConfig,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        check_probability("augment.weak.flip_p", self.weak.flip_p)?;
        self.strong.validate()
    }
}

fn check_probability(key: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(key, format!("probability must lie in [0, 1], got {p}")))
    }
}

/// Result of the weak augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakView {
    pub image: Image,
    pub boxes: Vec<OrientedBox>,
    pub flipped: bool,
}

/// Mirrors the image and every box about the vertical centre line.
pub fn flip(image: &Image, boxes: &[OrientedBox]) -> (Image, Vec<OrientedBox>) {
    let w = image.width() as f64;
    (image.flip_horizontal(), boxes.iter().map(|b| b.mirrored(w)).collect())
}

pub fn weak_augment(image: &Image, boxes: &[OrientedBox], cfg: &WeakAugmentConfig, rng: &mut StreamRng) -> WeakView {
    let flipped = rng.random::<f64>() < cfg.flip_p;
    if flipped {
        let (image, boxes) = flip(image, boxes);
        WeakView { image, boxes, flipped }
    } else {
        WeakView {
            image: image.clone(),
            boxes: boxes.to_vec(),
            flipped,
        }
    }
}

/// Multiplicative factors and hue shift for one colour-jitter draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_shift: f64,
}

/// Brightness, contrast, saturation, then hue, clamping to `[0, 1]` after
/// each step.
pub fn color_jitter(image: &Image, f: &JitterFactors) -> Image {
    let b = f.brightness as f32;
    let mut out = image.map(|p| p.map(|v| (v * b).clamp(0.0, 1.0)));
    let mean_luma = if out.is_empty() {
        0.0
    } else {
        let n = (out.width() * out.height()) as f64;
        (out.data().chunks_exact(CHANNELS).map(|p| luma([p[0], p[1], p[2]]) as f64).sum::<f64>() / n) as f32
    };
    let c = f.contrast as f32;
    out = out.map(|p| p.map(|v| ((v - mean_luma) * c + mean_luma).clamp(0.0, 1.0)));
    let s = f.saturation as f32;
    out = out.map(|p| {
        let g = luma(p);
        p.map(|v| ((v - g) * s + g).clamp(0.0, 1.0))
    });
    if f.hue_shift != 0.0 {
        let h = f.hue_shift as f32;
        out = out.map(|p| {
            let [hh, ss, vv] = rgb_to_hsv(p);
            hsv_to_rgb([(hh + h).rem_euclid(1.0), ss, vv])
        });
    }
    out
}

/// Replaces every channel with the luma `0.299 R + 0.587 G + 0.114 B`.
pub fn grayscale(image: &Image) -> Image {
    image.map(|p| {
        let l = luma(p);
        [l, l, l]
    })
}

/// Axis-aligned pixel rectangle `[x, x+w) × [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

pub fn apply_cutout(image: &Image, rects: &[Rect], fill: [f32; 3]) -> Image {
    let mut out = image.clone();
    for r in rects {
        for y in r.y..(r.y + r.h).min(image.height()) {
            for x in r.x..(r.x + r.w).min(image.width()) {
                out.set_pixel(x, y, fill);
            }
        }
    }
    out
}

/// Normalized Gaussian taps for `σ > 0`, radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
pub fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Separable Gaussian blur with mirrored borders. `σ = 0` returns the input
/// unchanged.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 || image.is_empty() {
        return image.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (image.width(), image.height());
    let src = image.data();
    let mut tmp = vec![0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let xx = reflect_index(x as i64 + t as i64 - r, w);
                    acc += kv * src[(y * w + xx) * CHANNELS + c] as f64;
                }
                tmp[(y * w + x) * CHANNELS + c] = acc;
            }
        }
    }
    let mut out = vec![0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let yy = reflect_index(y as i64 + t as i64 - r, h);
                    acc += kv * tmp[(yy * w + x) * CHANNELS + c];
                }
                out[(y * w + x) * CHANNELS + c] = acc as f32;
            }
        }
    }
    Image::from_raw(w, h, out).expect("same dimensions")
}

/// Which strong operations fired, and with what parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StrongTrace {
    pub jitter: Option<JitterFactors>,
    pub grayscale: bool,
    pub blur_sigma: Option<f64>,
    pub cutout: Vec<Rect>,
}

/// Applies jitter, grayscale, blur and cutout in that order, each with its
/// own probability. Cutout rectangles are filled with `fill`, normally the
/// dataset mean colour.
pub fn strong_augment(image: &Image, cfg: &StrongAugmentConfig, fill: [f32; 3], rng: &mut StreamRng) -> (Image, StrongTrace) {
    let mut trace = StrongTrace::default();
    let mut out = image.clone();
    if rng.random::<f64>() < cfg.jitter_p {
        let mut factor = |s: f64| if s > 0.0 { rng.random_range(1.0 - s..=1.0 + s) } else { 1.0 };
        let brightness = factor(cfg.brightness);
        let contrast = factor(cfg.contrast);
        let saturation = factor(cfg.saturation);
        let hue_shift = if cfg.hue > 0.0 { rng.random_range(-cfg.hue..=cfg.hue) } else { 0.0 };
        let f = JitterFactors {
            brightness,
            contrast,
            saturation,
            hue_shift,
        };
        out = color_jitter(&out, &f);
        trace.jitter = Some(f);
    }
    if rng.random::<f64>() < cfg.grayscale_p {
        out = grayscale(&out);
        trace.grayscale = true;
    }
    if rng.random::<f64>() < cfg.blur_p {
        let [lo, hi] = cfg.blur_sigma;
        let s = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        out = gaussian_blur(&out, s);
        trace.blur_sigma = Some(s);
    }
    if rng.random::<f64>() < cfg.cutout_p && !out.is_empty() {
        let [a, b] = cfg.cutout_count;
        let n = rng.random_range(a..=b);
        let (w, h) = (out.width(), out.height());
        let max_w = ((w as f64 * cfg.cutout_max_frac) as usize).max(1);
        let max_h = ((h as f64 * cfg.cutout_max_frac) as usize).max(1);
        for _ in 0..n {
            let rw = rng.random_range(1..=max_w.min(w));
            let rh = rng.random_range(1..=max_h.min(h));
            let x = rng.random_range(0..=w - rw);
            let y = rng.random_range(0..=h - rh);
            trace.cutout.push(Rect { x, y, w: rw, h: rh });
        }
        out = apply_cutout(&out, &trace.cutout, fill);
    }
    (out, trace)
}

/// Weak and strong views of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub weak: WeakView,
    pub strong_image: Image,
    pub trace: StrongTrace,
}

/// Both views of `image`, drawn from the stream keyed by
/// `(seed, "augment", image_id, round)`. The strong view is built from the
/// weak one, so it shares its frame.
pub fn augment_pair(
    image: &Image,
    boxes: &[OrientedBox],
    cfg: &AugmentConfig,
    fill: [f32; 3],
    seed: u64,
    image_id: &str,
    round: u64,
) -> AugmentedPair {
    let mut rng = rng::stream(seed, &["augment".into(), image_id.into(), round.into()]);
    let weak = weak_augment(image, boxes, &cfg.weak, &mut rng);
    let (strong_image, trace) = strong_augment(&weak.image, &cfg.strong, fill, &mut rng);
    AugmentedPair {
        weak,
        strong_image,
        trace,
    }
}
