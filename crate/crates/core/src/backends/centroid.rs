use std::collections::HashMap;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::ZeroShotClassifier;
use crate::error::{Error, Result};
use crate::geometry::{rotated_iou, OrientedBox};
use crate::pseudo_label::{EmbeddingMatrix, Patch, PromptSet};
use crate::rng;

/// Annotated objects per image, used by [`CentroidClassifier`] to decide
/// what a patch "looks like".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TruthOracle {
    objects: HashMap<String, Vec<(OrientedBox, usize)>>,
    /// Minimum rotated IoU for a patch to count as showing an object.
    pub match_iou: f64,
}

impl TruthOracle {
    pub fn new() -> Self {
        TruthOracle {
            objects: HashMap::new(),
            match_iou: 0.5,
        }
    }

    pub fn insert(&mut self, image_id: impl Into<String>, objects: Vec<(OrientedBox, usize)>) {
        self.objects.insert(image_id.into(), objects);
    }

    /// Index and class of the best-overlapping object, if any reaches
    /// `match_iou`. Ties keep the lower index.
    pub fn lookup(&self, image_id: &str, bbox: &OrientedBox) -> Option<(usize, usize)> {
        let objs = self.objects.get(image_id)?;
        let mut best: Option<(usize, usize, f64)> = None;
        for (i, (gt, class)) in objs.iter().enumerate() {
            let iou = rotated_iou(bbox, gt);
            if iou >= self.match_iou && best.is_none_or(|(_, _, b)| iou > b) {
                best = Some((i, *class, iou));
            }
        }
        best.map(|(i, c, _)| (i, c))
    }
}

/// Simulated zero-shot classifier.
///
/// Class centroids are a seeded orthonormal set in `R^D`. A patch showing
/// object `i` of class `k` embeds as `normalize(c_k + σ·g)` where `g` is a
/// standard Gaussian vector drawn from a stream keyed by
/// `(seed, image_id, i)`, so the same object always embeds the same way. A
/// patch showing no object embeds as a random unit vector. Text embeddings
/// are the centroids themselves.
///
/// With `appearance_correlation = ρ > 0` the noise becomes
/// `√ρ·g_a + √(1−ρ)·g`, where `g_a` is keyed by the class and a coarse cell
/// of the patch's mean colour, so objects that look alike tend to be
/// misread alike. The noise stays standard Gaussian per object, so the
/// expected accuracy does not depend on `ρ`.
///
/// A `similarity_scale` s < 1 mixes every image embedding with a shared unit
/// direction orthogonal to all centroids, as `normalize(s·e + √(1−s²)·u)`.
/// Cosines to the text embeddings shrink by a common factor, which softens
/// the zero-shot scores without changing any argmax.
#[derive(Debug, Clone)]
pub struct CentroidClassifier {
    num_classes: usize,
    dim: usize,
    centroids: Vec<f64>,
    pub sigma: f64,
    pub seed: u64,
    pub appearance_correlation: f64,
    /// Quantization levels per channel for the appearance cell.
    pub appearance_levels: usize,
    pub similarity_scale: f64,
    offset: Option<Vec<f64>>,
    truth: Arc<TruthOracle>,
}

impl CentroidClassifier {
    pub fn new(num_classes: usize, dim: usize, sigma: f64, seed: u64, truth: Arc<TruthOracle>) -> Result<Self> {
        if num_classes == 0 || dim < num_classes {
            return Err(Error::config(
                "dim",
                format!("need dim >= number of classes ({num_classes}), got {dim}"),
            ));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config("sigma", format!("must be finite and >= 0, got {sigma}")));
        }
        let (centroids, offset) = if dim > num_classes {
            let mut rows = orthonormal_rows(num_classes + 1, dim, seed);
            let offset = rows.split_off(num_classes * dim);
            (rows, Some(offset))
        } else {
            (orthonormal_rows(num_classes, dim, seed), None)
        };
        Ok(CentroidClassifier {
            num_classes,
            dim,
            centroids,
            sigma,
            seed,
            appearance_correlation: 0.0,
            appearance_levels: 4,
            similarity_scale: 1.0,
            offset,
            truth,
        })
    }

    pub fn with_similarity_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::config("similarity_scale", format!("must lie in (0, 1], got {scale}")));
        }
        if scale < 1.0 && self.offset.is_none() {
            return Err(Error::config("dim", "a similarity scale below 1 needs dim above the number of classes"));
        }
        self.similarity_scale = scale;
        Ok(self)
    }

    fn finish(&self, v: Vec<f64>) -> Vec<f32> {
        let s = self.similarity_scale;
        match &self.offset {
            Some(u) if s < 1.0 => {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let t = (1.0 - s * s).sqrt();
                unit_f32(v.iter().zip(u).map(|(x, u)| s * x / n + t * u).collect())
            }
            _ => unit_f32(v),
        }
    }

    pub fn with_appearance_correlation(mut self, rho: f64, levels: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::config("appearance_correlation", format!("must lie in [0, 1], got {rho}")));
        }
        if levels == 0 {
            return Err(Error::config("appearance_levels", "must be at least 1"));
        }
        self.appearance_correlation = rho;
        self.appearance_levels = levels;
        Ok(self)
    }

    /// Quantized mean colour of the central half of a patch.
    pub fn appearance_cell(&self, patch: &Patch) -> [usize; 3] {
        let s = patch.size;
        let (lo, hi) = (s / 4, (s - s / 4).max(s / 4 + 1));
        let n = ((hi - lo) * (hi - lo)) as f64;
        std::array::from_fn(|c| {
            let mut sum = 0.0;
            for y in lo..hi {
                for x in lo..hi {
                    sum += patch.at(c, y, x) as f64;
                }
            }
            let q = (sum / n * self.appearance_levels as f64).floor();
            q.clamp(0.0, (self.appearance_levels - 1) as f64) as usize
        })
    }

    pub fn centroid(&self, k: usize) -> &[f64] {
        &self.centroids[k * self.dim..(k + 1) * self.dim]
    }

    /// Embedding of object `object_index` of class `class` in `image_id`,
    /// seen with appearance cell `cell`.
    pub fn object_embedding(&self, image_id: &str, object_index: usize, class: usize, cell: [usize; 3]) -> Vec<f32> {
        let mut rng = rng::stream(self.seed, &["centroid".into(), image_id.into(), object_index.into()]);
        let rho = self.appearance_correlation;
        let mut shared = (rho > 0.0).then(|| {
            rng::stream(
                self.seed,
                &["centroid-appearance".into(), class.into(), cell[0].into(), cell[1].into(), cell[2].into()],
            )
        });
        let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
        let v: Vec<f64> = self
            .centroid(class)
            .iter()
            .map(|&c| {
                let g: f64 = StandardNormal.sample(&mut rng);
                let g = match shared.as_mut() {
                    Some(r) => a * Distribution::<f64>::sample(&StandardNormal, r) + b * g,
                    None => g,
                };
                c + self.sigma * g
            })
            .collect();
        self.finish(v)
    }

    fn background_embedding(&self, key: &str) -> Vec<f32> {
        let mut rng = rng::stream(self.seed, &["centroid-background".into(), key.into()]);
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            if v.iter().any(|&x| x != 0.0) {
                return self.finish(v);
            }
        }
    }
}

fn unit_f32(v: Vec<f64>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

/// Gram–Schmidt on seeded Gaussian vectors.
fn orthonormal_rows(k: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, &["centroid-basis".into()]);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            rows.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    rows.concat()
}

impl ZeroShotClassifier for CentroidClassifier {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_images(&self, patches: &[Patch]) -> Result<EmbeddingMatrix> {
        let mut data = Vec::with_capacity(patches.len() * self.dim);
        for p in patches {
            let origin = p
                .origin
                .as_ref()
                .ok_or_else(|| Error::Invalid("centroid classifier needs patch origins".into()))?;
            let row = match self.truth.lookup(&origin.image_id, &origin.source_box) {
                Some((i, class)) => self.object_embedding(&origin.image_id, i, class, self.appearance_cell(p)),
                None => self.background_embedding(&origin.key),
            };
            data.extend(row);
        }
        EmbeddingMatrix::new(patches.len(), self.dim, data, true)
    }

    fn text_embeddings(&self, prompts: &PromptSet) -> Result<EmbeddingMatrix> {
        if prompts.len() != self.num_classes {
            return Err(Error::ClassCount {
                in_file: self.num_classes,
                expected: prompts.len(),
            });
        }
        let data = self.centroids.iter().map(|&v| v as f32).collect();
        EmbeddingMatrix::new(self.num_classes, self.dim, data, true)
    }
}

/// Probability that the nearest centroid (by dot product) of
/// `c_k + σ·g` is `c_k`, for `k` orthonormal centroids:
/// `∫ φ(z) Φ(z + 1/σ)^(k−1) dz`.
pub fn accuracy_for_sigma(sigma: f64, k: usize) -> f64 {
    if k <= 1 || sigma == 0.0 {
        return 1.0;
    }
    let n = Normal::standard();
    let shift = 1.0 / sigma;
    let (lo, hi, steps) = (-12.0, 12.0 + shift.min(40.0), 4000usize);
    let h = (hi - lo) / steps as f64;
    let f = |z: f64| n.pdf(z) * n.cdf(z + shift).powi(k as i32 - 1);
    let mut s = f(lo) + f(hi);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    (s * h / 3.0).clamp(0.0, 1.0)
}

/// The `σ` at which [`accuracy_for_sigma`] equals `target`, by bisection.
pub fn calibrate_sigma(target: f64, k: usize) -> Result<f64> {
    let chance = 1.0 / k as f64;
    if !(target > chance && target <= 1.0) {
        return Err(Error::config(
            "zero_shot_accuracy",
            format!("must lie in ({chance}, 1] for {k} classes, got {target}"),
        ));
    }
    if target == 1.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (1e-6, 1e3);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if accuracy_for_sigma(mid, k) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudo_label::{build_prompts, zero_shot_scores, PatchOrigin, DEFAULT_TEMPLATE};

    fn patch_for(image_id: &str, idx: usize, b: OrientedBox) -> Patch {
        Patch {
            size: 1,
            data: vec![0.0; 3],
            origin: None,
        }
        .with_origin(PatchOrigin {
            key: format!("{image_id}#{idx}"),
            image_id: image_id.into(),
            source_box: b,
        })
    }

    fn setup(n_images: usize, k: usize, sigma: f64) -> (CentroidClassifier, Vec<Patch>, Vec<usize>) {
        let mut truth = TruthOracle::new();
        let mut patches = Vec::new();
        let mut labels = Vec::new();
        let b = OrientedBox::new(20.0, 20.0, 10.0, 6.0, 0.3).unwrap();
        for i in 0..n_images {
            let id = format!("img{i}");
            let class = i % k;
            truth.insert(id.clone(), vec![(b, class)]);
            patches.push(patch_for(&id, 0, b));
            labels.push(class);
        }
        (CentroidClassifier::new(k, 16, sigma, 5, Arc::new(truth)).unwrap(), patches, labels)
    }

    fn accuracy(cls: &CentroidClassifier, patches: &[Patch], labels: &[usize], k: usize) -> f64 {
        let names: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
        let prompts = build_prompts(&names, DEFAULT_TEMPLATE).unwrap();
        let s = zero_shot_scores(
            &cls.embed_images(patches).unwrap(),
            &cls.text_embeddings(&prompts).unwrap(),
            1.0,
        )
        .unwrap();
        let hits = labels.iter().enumerate().filter(|&(i, &l)| s.argmax_row(i) == l).count();
        hits as f64 / labels.len() as f64
    }

    #[test]
    fn centroids_are_orthonormal() {
        let c = orthonormal_rows(5, 8, 1);
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = (0..8).map(|t| c[i * 8 + t] * c[j * 8 + t]).sum();
                assert!((dot - (i == j) as u8 as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_sigma_is_an_oracle() {
        let (cls, patches, labels) = setup(40, 4, 0.0);
        let emb = cls.embed_images(&patches).unwrap();
        for (i, &l) in labels.iter().enumerate() {
            let want: Vec<f32> = cls.centroid(l).iter().map(|&v| v as f32).collect();
            assert_eq!(emb.row(i), &want[..]);
        }
        assert_eq!(accuracy(&cls, &patches, &labels, 4), 1.0);
    }

    #[test]
    fn huge_sigma_is_chance() {
        // Centroid separation is sqrt(2); sigma = 100 is far beyond 10x that.
        let k = 4;
        let (cls, patches, labels) = setup(10_000, k, 100.0);
        let acc = accuracy(&cls, &patches, &labels, k);
        assert!((acc - 0.25).abs() < 0.05, "accuracy {acc}");
    }

    #[test]
    fn calibrated_sigma_hits_target_accuracy() {
        let k = 5;
        let sigma = calibrate_sigma(0.7, k).unwrap();
        assert!((accuracy_for_sigma(sigma, k) - 0.7).abs() < 1e-9);
        let (cls, patches, labels) = setup(5000, k, sigma);
        let acc = accuracy(&cls, &patches, &labels, k);
        assert!((acc - 0.7).abs() < 0.03, "accuracy {acc} at sigma {sigma}");
    }

    #[test]
    fn accuracy_formula_limits() {
        assert_eq!(accuracy_for_sigma(0.0, 6), 1.0);
        assert!((accuracy_for_sigma(1e4, 6) - 1.0 / 6.0).abs() < 1e-3);
        // k = 2: P(g2 - g1 < 1/σ) = Φ(1/(σ√2))
        let s: f64 = 0.8;
        let want = Normal::standard().cdf(1.0 / (s * 2f64.sqrt()));
        assert!((accuracy_for_sigma(s, 2) - want).abs() < 1e-9);
        assert!(calibrate_sigma(0.1, 5).is_err());
    }

    #[test]
    fn background_and_determinism() {
        let (cls, _, _) = setup(1, 3, 0.5);
        let far = OrientedBox::new(90.0, 90.0, 10.0, 6.0, 0.0).unwrap();
        let p = vec![patch_for("img0", 7, far)];
        let a = cls.embed_images(&p).unwrap();
        assert_eq!(a, cls.embed_images(&p).unwrap());
        let n: f32 = a.row(0).iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-5);
        let mut no_origin = p[0].clone();
        no_origin.origin = None;
        assert!(cls.embed_images(&[no_origin]).is_err());
    }

    fn cosines(cls: &CentroidClassifier, patches: &[Patch]) -> Vec<Vec<f64>> {
        let emb = cls.embed_images(patches).unwrap();
        (0..patches.len())
            .map(|i| {
                (0..cls.num_classes)
                    .map(|k| emb.row(i).iter().zip(cls.centroid(k)).map(|(&a, &b)| a as f64 * b).sum())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn similarity_scale_shrinks_cosines_uniformly() {
        let (cls, patches, _) = setup(30, 4, 0.6);
        let scaled = cls.clone().with_similarity_scale(0.2).unwrap();
        let far = OrientedBox::new(90.0, 90.0, 10.0, 6.0, 0.0).unwrap();
        let mut all = patches.clone();
        all.push(patch_for("img0", 9, far));
        for (a, b) in cosines(&cls, &all).iter().zip(cosines(&scaled, &all)) {
            let ratios: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y / x).collect();
            assert!(ratios.iter().all(|r| *r > 0.1 && *r < 0.3), "{ratios:?}");
            assert!(ratios.iter().all(|r| (r - ratios[0]).abs() < 1e-5), "{ratios:?}");
        }
        assert!(cls.clone().with_similarity_scale(0.0).is_err());
        assert!(cls.clone().with_similarity_scale(1.5).is_err());
        let tight = CentroidClassifier::new(4, 4, 0.1, 1, Arc::new(TruthOracle::new())).unwrap();
        assert!(tight.clone().with_similarity_scale(0.5).is_err());
        assert!(tight.with_similarity_scale(1.0).is_ok());
    }

    #[test]
    fn full_appearance_correlation_ties_objects_of_a_cell() {
        let (cls, patches, labels) = setup(12, 3, 0.8);
        let tied = cls.clone().with_appearance_correlation(1.0, 1).unwrap();
        let emb = tied.embed_images(&patches).unwrap();
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                assert_eq!(emb.row(i) == emb.row(j), labels[i] == labels[j], "{i} {j}");
            }
        }
        let free = cls.embed_images(&patches).unwrap();
        assert_ne!(free.row(0), free.row(3));
        assert!(cls.clone().with_appearance_correlation(1.2, 4).is_err());
        assert!(cls.with_appearance_correlation(0.5, 0).is_err());
    }

    #[test]
    fn partial_correlation_keeps_calibrated_accuracy() {
        let k = 4;
        let sigma = calibrate_sigma(0.7, k).unwrap();
        let (cls, patches, labels) = setup(4000, k, sigma);
        let cls = cls.with_appearance_correlation(0.3, 1).unwrap();
        let acc = accuracy(&cls, &patches, &labels, k);
        assert!((acc - 0.7).abs() < 0.1, "accuracy {acc}");
    }

    #[test]
    fn prompt_count_must_match() {
        let (cls, _, _) = setup(1, 3, 0.0);
        let prompts = build_prompts(&["a", "b"], DEFAULT_TEMPLATE).unwrap();
        assert!(matches!(
            cls.text_embeddings(&prompts),
            Err(Error::ClassCount { in_file: 3, expected: 2 })
        ));
    }
}
