use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::corrupt::value_noise;
use crate::error::{Error, Result};
use crate::eval::{format_ground_truth, GtObject};
use crate::geometry::{rotated_iou, OrientedBox};
use crate::imaging::{hsv_to_rgb, Image};
use crate::rng;

pub const MAX_SCENE_CLASSES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Rectangle,
    Ellipse,
    Triangle,
    Cross,
    Diamond,
}

impl Shape {
    const ALL: [Shape; 5] = [Shape::Rectangle, Shape::Ellipse, Shape::Triangle, Shape::Cross, Shape::Diamond];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Rectangle => "rectangle",
            Shape::Ellipse => "ellipse",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
            Shape::Diamond => "diamond",
        }
    }

    /// Membership in the box-local frame, `u ∈ [−a, a]`, `v ∈ [−b, b]`.
    /// Every shape touches all four sides of its box.
    fn contains(self, u: f64, v: f64, a: f64, b: f64) -> bool {
        if u.abs() > a || v.abs() > b {
            return false;
        }
        match self {
            Shape::Rectangle => true,
            Shape::Ellipse => (u / a).powi(2) + (v / b).powi(2) <= 1.0,
            Shape::Triangle => u.abs() <= a * (v + b) / (2.0 * b),
            Shape::Cross => u.abs() <= a / 3.0 || v.abs() <= b / 3.0,
            Shape::Diamond => u.abs() / a + v.abs() / b <= 1.0,
        }
    }
}

const HUES: [(f32, &str); 8] = [
    (0.0, "red"),
    (0.6, "blue"),
    (0.33, "green"),
    (0.8, "purple"),
    (0.14, "yellow"),
    (0.5, "cyan"),
    (0.92, "pink"),
    (0.7, "indigo"),
];

/// Visual identity of one class: a hue and a shape. Classes `k` and
/// `k + 8` share a hue but never a shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStyle {
    pub name: String,
    pub hue: f32,
    pub shape: Shape,
}

pub fn class_styles(num_classes: usize) -> Result<Vec<ClassStyle>> {
    if !(2..=MAX_SCENE_CLASSES).contains(&num_classes) {
        return Err(Error::config(
            "num_classes",
            format!("synthetic scenes support 2..={MAX_SCENE_CLASSES} classes, got {num_classes}"),
        ));
    }
    Ok((0..num_classes)
        .map(|k| {
            let (hue, colour) = HUES[k % HUES.len()];
            let shape = Shape::ALL[(k + k / HUES.len()) % Shape::ALL.len()];
            ClassStyle {
                name: format!("{colour} {}", shape.name()),
                hue,
                shape,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_side: f64,
    pub max_side: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            size: 128,
            min_objects: 1,
            max_objects: 8,
            min_side: 12.0,
            max_side: 30.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 32 {
            return Err(Error::config("scenes.size", "must be at least 32"));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::config("scenes.min_objects", "need 1 <= min_objects <= max_objects"));
        }
        if !(self.min_side >= 4.0 && self.max_side >= self.min_side && self.max_side * 1.5 < self.size as f64) {
            return Err(Error::config("scenes.max_side", "side range must be >= 4 and fit in the image"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub sample: Sample,
    pub seed: u64,
}

/// `n` scenes named `<prefix>-<index>`, each drawn from its own stream so
/// any scene can be regenerated alone.
pub fn generate_scenes(n: usize, num_classes: usize, cfg: &SceneConfig, seed: u64, prefix: &str) -> Result<Vec<SyntheticScene>> {
    cfg.validate()?;
    let styles = class_styles(num_classes)?;
    Ok((0..n)
        .map(|i| {
            let id = format!("{prefix}-{i:04}");
            SyntheticScene {
                sample: render_scene(&id, &styles, cfg, seed),
                seed,
            }
        })
        .collect())
}

fn render_scene(id: &str, styles: &[ClassStyle], cfg: &SceneConfig, seed: u64) -> Sample {
    let mut rng = rng::stream(seed, &["scene".into(), id.into()]);
    let s = cfg.size;
    let ground_hue: f32 = rng.random_range(0.06..0.28);
    let ground_sat: f32 = rng.random_range(0.15..0.35);
    let ground_val: f32 = rng.random_range(0.35..0.55);
    let coarse = value_noise(s, s, 4, 3, 0.5, &mut rng);
    let fine = value_noise(s, s, 32, 2, 0.5, &mut rng);
    let mut image = Image::from_fn(s, s, |x, y| {
        let c = coarse.get(x, y) - 0.5;
        let f = fine.get(x, y) - 0.5;
        hsv_to_rgb([
            (ground_hue + 0.04 * c).rem_euclid(1.0),
            (ground_sat + 0.1 * c).clamp(0.0, 1.0),
            (ground_val + 0.25 * c + 0.12 * f).clamp(0.0, 1.0),
        ])
    });
    let count = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut objects: Vec<GtObject> = Vec::with_capacity(count);
    let jitter = Normal::new(0.0, 0.012f32).expect("finite");
    for _ in 0..count {
        for _attempt in 0..30 {
            let w = rng.random_range(cfg.min_side..=cfg.max_side);
            let h = rng.random_range(cfg.min_side..=cfg.max_side);
            let theta = rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
            let margin = 0.5 * (w * w + h * h).sqrt() + 1.0;
            if 2.0 * margin >= s as f64 {
                continue;
            }
            let cx = rng.random_range(margin..s as f64 - margin);
            let cy = rng.random_range(margin..s as f64 - margin);
            let bbox = OrientedBox::new(cx, cy, w, h, theta).expect("positive sides");
            if objects.iter().any(|o| rotated_iou(&o.bbox, &bbox) > 0.0) {
                continue;
            }
            let class_id = rng.random_range(0..styles.len());
            let style = &styles[class_id];
            let hue = (style.hue + jitter.sample(&mut rng)).rem_euclid(1.0);
            let sat: f32 = rng.random_range(0.6..0.9);
            let val: f32 = rng.random_range(0.6..0.92);
            paint(&mut image, &bbox, style.shape, hsv_to_rgb([hue, sat, val]));
            objects.push(GtObject::new(bbox, class_id));
            break;
        }
    }
    Sample {
        id: id.to_string(),
        image,
        objects,
    }
}

/// Draws the shape with 4×4 supersampled coverage.
fn paint(image: &mut Image, bbox: &OrientedBox, shape: Shape, rgb: [f32; 3]) {
    let hb = bbox.to_horizontal();
    let (sin, cos) = bbox.theta.sin_cos();
    let (a, b) = (bbox.w / 2.0, bbox.h / 2.0);
    let x0 = hb.x0().floor().max(0.0) as usize;
    let y0 = hb.y0().floor().max(0.0) as usize;
    let x1 = (hb.x1().ceil() as usize).min(image.width());
    let y1 = (hb.y1().ceil() as usize).min(image.height());
    const N: usize = 4;
    for y in y0..y1 {
        for x in x0..x1 {
            let mut hits = 0;
            for j in 0..N {
                for i in 0..N {
                    let px = x as f64 + (i as f64 + 0.5) / N as f64 - bbox.cx;
                    let py = y as f64 + (j as f64 + 0.5) / N as f64 - bbox.cy;
                    let u = px * cos + py * sin;
                    let v = -px * sin + py * cos;
                    hits += shape.contains(u, v, a, b) as usize;
                }
            }
            if hits > 0 {
                let cov = hits as f32 / (N * N) as f32;
                let old = image.pixel(x, y);
                image.set_pixel(x, y, [0, 1, 2].map(|c| old[c] * (1.0 - cov) + rgb[c] * cov));
            }
        }
    }
}

pub const CLASSES_FILE: &str = "classes.txt";
pub const IMAGES_DIR: &str = "images";
pub const LABELS_DIR: &str = "labels";

/// Writes `classes.txt`, `images/<id>.png` and `labels/<id>.txt`.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    let images = dir.join(IMAGES_DIR);
    let labels = dir.join(LABELS_DIR);
    for d in [&images, &labels] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let classes = dir.join(CLASSES_FILE);
    let mut names = dataset.class_names.join("\n");
    names.push('\n');
    std::fs::write(&classes, names).map_err(|e| Error::io(&classes, e))?;
    for s in &dataset.samples {
        s.image.save_png(&images.join(format!("{}.png", s.id)))?;
        let p = labels.join(format!("{}.txt", s.id));
        std::fs::write(&p, format_ground_truth(&s.objects)).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Reads a directory written by [`save_dataset`] (or a corrupted copy of
/// one). Every image needs a label file; samples are sorted by id.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let classes = dir.join(CLASSES_FILE);
    let class_names: Vec<String> = std::fs::read_to_string(&classes)
        .map_err(|e| Error::io(&classes, e))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let labels = crate::eval::read_ground_truth_dir(&dir.join(LABELS_DIR))?;
    let images_dir = dir.join(IMAGES_DIR);
    let mut samples = Vec::with_capacity(labels.len());
    for (id, objects) in labels {
        for o in &objects {
            if o.class_id >= class_names.len() {
                return Err(Error::ClassOutOfRange {
                    class_id: o.class_id,
                    num_classes: class_names.len(),
                });
            }
        }
        let path = images_dir.join(format!("{id}.png"));
        let image = Image::load(&path)?;
        samples.push(Sample { id, image, objects });
    }
    Ok(Dataset { class_names, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn styles_are_distinct() {
        let s = class_styles(16).unwrap();
        for i in 0..16 {
            for j in i + 1..16 {
                assert!(s[i].hue != s[j].hue || s[i].shape != s[j].shape, "{i} {j}");
                assert_ne!(s[i].name, s[j].name);
            }
        }
        assert!(class_styles(1).is_err());
        assert!(class_styles(17).is_err());
    }

    #[test]
    fn scenes_are_reproducible_and_valid() {
        let cfg = SceneConfig::default();
        let a = generate_scenes(3, 5, &cfg, 42, "t").unwrap();
        let b = generate_scenes(3, 5, &cfg, 42, "t").unwrap();
        assert_eq!(a, b);
        for sc in &a {
            let n = sc.sample.objects.len();
            assert!((1..=8).contains(&n));
            for o in &sc.sample.objects {
                assert!(o.class_id < 5);
                for p in o.bbox.corners() {
                    assert!(p.x >= 0.0 && p.y >= 0.0 && p.x <= 128.0 && p.y <= 128.0);
                }
            }
        }
        assert_ne!(a[0].sample.image, generate_scenes(1, 5, &cfg, 43, "t").unwrap()[0].sample.image);
    }

    #[test]
    fn shapes_touch_every_side() {
        for shape in Shape::ALL {
            let (a, b) = (5.0, 3.0);
            let n = 400;
            let mut touch = [false; 4];
            for i in 0..=n {
                for j in 0..=n {
                    let u = -a + 2.0 * a * i as f64 / n as f64;
                    let v = -b + 2.0 * b * j as f64 / n as f64;
                    if shape.contains(u, v, a, b) {
                        touch[0] |= i == 0;
                        touch[1] |= i == n;
                        touch[2] |= j == 0;
                        touch[3] |= j == n;
                    }
                }
            }
            assert_eq!(touch, [true; 4], "{shape:?}");
        }
    }

    #[test]
    fn dataset_round_trip() {
        let scenes = generate_scenes(2, 3, &SceneConfig::default(), 1, "d").unwrap();
        let ds = Dataset {
            class_names: class_styles(3).unwrap().into_iter().map(|s| s.name).collect(),
            samples: scenes.into_iter().map(|s| s.sample).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.class_names, ds.class_names);
        assert_eq!(back.samples.len(), 2);
        for (a, b) in back.samples.iter().zip(&ds.samples) {
            assert_eq!(a.objects, b.objects);
            assert_eq!(a.id, b.id);
            for (x, y) in a.image.data().iter().zip(b.image.data()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }
}
