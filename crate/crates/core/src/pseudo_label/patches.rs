use rayon::prelude::*;

use crate::geometry::{clip_to_image, OrientedBox};
use crate::imaging::{Image, CHANNELS};

pub const DEFAULT_PATCH_SIZE: usize = 224;

/// Where a patch came from; zero-shot backends that look embeddings up by
/// key, or that simulate perception from annotations, read this.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchOrigin {
    /// Stable lookup key, `"<image_id>#<index>"` by convention.
    pub key: String,
    pub image_id: String,
    /// The detected box expressed in the un-augmented image frame.
    pub source_box: OrientedBox,
}

/// Square `C × S × S` patch, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub data: Vec<f32>,
    pub origin: Option<PatchOrigin>,
}

impl Patch {
    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.size + y) * self.size + x]
    }

    pub fn with_origin(mut self, origin: PatchOrigin) -> Self {
        self.origin = Some(origin);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub patches: Vec<Patch>,
    /// Input index of each returned patch.
    pub kept: Vec<usize>,
    /// Input indices whose horizontal box fell outside the image.
    pub dropped: Vec<usize>,
}

/// Crops the tight horizontal box of every oriented box, clipped to the
/// image, and resamples it bilinearly to `out_size × out_size`. Aspect ratio
/// is not preserved. Output order follows input order.
pub fn extract_patches(image: &Image, boxes: &[OrientedBox], out_size: usize) -> PatchBatch {
    assert!(out_size >= 1, "patch size must be positive");
    let results: Vec<Option<Patch>> = boxes
        .par_iter()
        .map(|b| {
            if image.is_empty() {
                return None;
            }
            let hb = clip_to_image(&b.to_horizontal(), image.width() as f64, image.height() as f64)?;
            Some(crop_resize(image, hb.x0(), hb.y0(), hb.w, hb.h, out_size))
        })
        .collect();
    let mut batch = PatchBatch {
        patches: Vec::new(),
        kept: Vec::new(),
        dropped: Vec::new(),
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Some(p) => {
                batch.patches.push(p);
                batch.kept.push(i);
            }
            None => batch.dropped.push(i),
        }
    }
    batch
}

fn crop_resize(image: &Image, x0: f64, y0: f64, w: f64, h: f64, size: usize) -> Patch {
    let mut data = vec![0.0f32; CHANNELS * size * size];
    let sx = w / size as f64;
    let sy = h / size as f64;
    for oy in 0..size {
        // continuous coordinate of the output pixel centre, shifted to
        // pixel-index space where pixel k is centred on k
        let fy = y0 + (oy as f64 + 0.5) * sy - 0.5;
        for ox in 0..size {
            let fx = x0 + (ox as f64 + 0.5) * sx - 0.5;
            let px = image.sample_bilinear(fx, fy);
            for c in 0..CHANNELS {
                data[(c * size + oy) * size + ox] = px[c];
            }
        }
    }
    Patch {
        size,
        data,
        origin: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(n: usize) -> Image {
        Image::from_fn(n, n, |x, y| {
            let v = ((x + y) % 2) as f32;
            [v, x as f32 / 10.0, y as f32 / 10.0]
        })
    }

    #[test]
    fn whole_image_identity() {
        let img = checkerboard(6);
        let b = OrientedBox::new(3.0, 3.0, 6.0, 6.0, 0.0).unwrap();
        let batch = extract_patches(&img, &[b], 6);
        let p = &batch.patches[0];
        for y in 0..6 {
            for x in 0..6 {
                for c in 0..3 {
                    assert_eq!(p.at(c, y, x), img.at(x, y, c));
                }
            }
        }
    }

    #[test]
    fn centre_block_by_direct_indexing() {
        let img = checkerboard(4);
        let b = OrientedBox::new(2.0, 2.0, 2.0, 2.0, 0.0).unwrap();
        let p = &extract_patches(&img, &[b], 2).patches[0];
        for y in 0..2 {
            for x in 0..2 {
                for c in 0..3 {
                    assert_eq!(p.at(c, y, x), img.at(x + 1, y + 1, c));
                }
            }
        }
    }

    #[test]
    fn outside_boxes_are_dropped_in_order() {
        let img = checkerboard(8);
        let inside = OrientedBox::new(4.0, 4.0, 2.0, 2.0, 0.3).unwrap();
        let outside = OrientedBox::new(-20.0, 4.0, 2.0, 2.0, 0.0).unwrap();
        let batch = extract_patches(&img, &[outside, inside, outside], 3);
        assert_eq!(batch.kept, vec![1]);
        assert_eq!(batch.dropped, vec![0, 2]);
        assert_eq!(batch.patches.len(), 1);
        assert_eq!(batch.patches[0].data.len(), 27);
        let none = extract_patches(&img, &[outside], 3);
        assert!(none.patches.is_empty());
    }
}
