use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Detector, Inference, LossBreakdown, Target};
use crate::error::{Error, Result};
use crate::geometry::{rotated_iou, Detection, OrientedBox};
use crate::imaging::{luma, Image};
use crate::pseudo_label::{extract_patches, softmax, Patch};
use crate::rng;
use crate::tensor::{ParamSet, Tensor};

pub const COLOR_BINS: usize = 8;
pub const ORIENTATION_BINS: usize = 4;
/// 3 × 8 colour-histogram bins followed by 4 gradient-orientation bins.
pub const FEATURE_DIM: usize = 3 * COLOR_BINS + ORIENTATION_BINS;
pub const TOY_PATCH_SIZE: usize = 32;

const CLS_W: &str = "cls.weight";
const CLS_B: &str = "cls.bias";
const OBJ_W: &str = "obj.weight";
const OBJ_B: &str = "obj.bias";

/// Histogram features of a patch. Colour bins hold the fraction of pixels
/// per channel value band; orientation bins hold the mean luma-gradient
/// magnitude of pixels whose (unsigned) orientation is nearest 0°, 45°, 90°
/// or 135°.
pub fn patch_features(patch: &Patch) -> [f64; FEATURE_DIM] {
    let s = patch.size;
    let n = (s * s) as f64;
    let mut f = [0.0f64; FEATURE_DIM];
    for c in 0..3 {
        for y in 0..s {
            for x in 0..s {
                let v = patch.at(c, y, x).clamp(0.0, 1.0);
                let bin = ((v * COLOR_BINS as f32) as usize).min(COLOR_BINS - 1);
                f[c * COLOR_BINS + bin] += 1.0;
            }
        }
    }
    for v in f.iter_mut().take(3 * COLOR_BINS) {
        *v /= n;
    }
    let l = |x: usize, y: usize| luma([patch.at(0, y, x), patch.at(1, y, x), patch.at(2, y, x)]) as f64;
    for y in 0..s {
        for x in 0..s {
            let gx = l((x + 1).min(s - 1), y) - l(x.saturating_sub(1), y);
            let gy = l(x, (y + 1).min(s - 1)) - l(x, y.saturating_sub(1));
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let ang = gy.atan2(gx).rem_euclid(PI);
            let bin = ((ang / (PI / 4.0)).round() as usize) % ORIENTATION_BINS;
            f[3 * COLOR_BINS + bin] += mag / n;
        }
    }
    f
}

/// Where the toy detector's candidate boxes come from: jittered copies of
/// annotated boxes plus uniformly placed distractors. Proposal learning is
/// not modelled.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposalConfig {
    pub per_object: usize,
    /// Standard deviation of centre jitter, as a fraction of box size.
    pub center_jitter: f64,
    /// Standard deviation of the log-size jitter.
    pub size_jitter: f64,
    /// Standard deviation of the angle jitter in radians.
    pub angle_jitter: f64,
    pub distractors: usize,
    pub distractor_min_size: f64,
    pub distractor_max_size: f64,
    /// Distractors overlapping an annotated box by more than this IoU are
    /// redrawn, up to 20 times.
    pub distractor_max_iou: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            per_object: 1,
            center_jitter: 0.05,
            size_jitter: 0.05,
            angle_jitter: 0.05,
            distractors: 4,
            distractor_min_size: 10.0,
            distractor_max_size: 28.0,
            distractor_max_iou: 1.0,
        }
    }
}

impl ProposalConfig {
    /// Deterministic proposals for one image, keyed by `(seed, image_id)`.
    pub fn generate(
        &self,
        objects: &[OrientedBox],
        width: usize,
        height: usize,
        seed: u64,
        image_id: &str,
    ) -> Vec<OrientedBox> {
        let mut rng = rng::stream(seed, &["proposals".into(), image_id.into()]);
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let mut out = Vec::with_capacity(objects.len() * self.per_object + self.distractors);
        for b in objects {
            for _ in 0..self.per_object {
                let scale = b.w.min(b.h);
                let cx = b.cx + self.center_jitter * scale * std.sample(&mut rng);
                let cy = b.cy + self.center_jitter * scale * std.sample(&mut rng);
                let w = b.w * (self.size_jitter * std.sample(&mut rng)).exp();
                let h = b.h * (self.size_jitter * std.sample(&mut rng)).exp();
                let t = b.theta + self.angle_jitter * std.sample(&mut rng);
                if let Ok(p) = OrientedBox::new(cx, cy, w, h, t) {
                    out.push(p);
                }
            }
        }
        let (wf, hf) = (width as f64, height as f64);
        for _ in 0..self.distractors {
            let lo = self.distractor_min_size;
            let hi = self.distractor_max_size.max(lo + 1e-9);
            for _attempt in 0..20 {
                let w = rng.random_range(lo..hi);
                let h = rng.random_range(lo..hi);
                let cx = rng.random_range(0.0..wf);
                let cy = rng.random_range(0.0..hf);
                let t = rng.random_range(-PI / 2.0..PI / 2.0);
                let Ok(p) = OrientedBox::new(cx, cy, w, h, t) else { break };
                if self.distractor_max_iou >= 1.0 || objects.iter().all(|o| rotated_iou(&p, o) <= self.distractor_max_iou) {
                    out.push(p);
                    break;
                }
            }
        }
        out
    }
}

/// Linear softmax classifier plus a logistic objectness gate over
/// [`patch_features`].
///
/// For each proposal: crop to `patch_size`, compute features, drop the
/// proposal if `sigmoid(w_obj·f + b_obj) < objectness_threshold`, otherwise
/// emit `softmax(W f + b)` as its class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDetector {
    num_classes: usize,
    pub patch_size: usize,
    pub objectness_threshold: f64,
    cls_w: Vec<f64>,
    cls_b: Vec<f64>,
    obj_w: Vec<f64>,
    obj_b: f64,
}

impl ToyDetector {
    /// All-zero parameters.
    pub fn new(num_classes: usize) -> Self {
        ToyDetector {
            num_classes,
            patch_size: TOY_PATCH_SIZE,
            objectness_threshold: 0.5,
            cls_w: vec![0.0; num_classes * FEATURE_DIM],
            cls_b: vec![0.0; num_classes],
            obj_w: vec![0.0; FEATURE_DIM],
            obj_b: 0.0,
        }
    }

    /// Small Gaussian initial weights.
    pub fn with_random_init(num_classes: usize, seed: u64, scale: f64) -> Self {
        let mut det = Self::new(num_classes);
        let mut rng = rng::stream(seed, &["toy-init".into()]);
        let normal = Normal::new(0.0, scale.max(0.0)).expect("finite scale");
        for w in det.cls_w.iter_mut().chain(det.obj_w.iter_mut()) {
            *w = normal.sample(&mut rng);
        }
        det
    }

    pub fn class_logits(&self, f: &[f64; FEATURE_DIM]) -> Vec<f64> {
        (0..self.num_classes)
            .map(|k| {
                let row = &self.cls_w[k * FEATURE_DIM..(k + 1) * FEATURE_DIM];
                self.cls_b[k] + row.iter().zip(f).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn objectness_logit(&self, f: &[f64; FEATURE_DIM]) -> f64 {
        self.obj_b + self.obj_w.iter().zip(f).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn set_class_weights(&mut self, weights: &[f64], bias: &[f64]) -> Result<()> {
        if weights.len() != self.cls_w.len() || bias.len() != self.cls_b.len() {
            return Err(Error::Shape("class head size mismatch".into()));
        }
        self.cls_w.copy_from_slice(weights);
        self.cls_b.copy_from_slice(bias);
        Ok(())
    }

    pub fn set_objectness(&mut self, weights: &[f64], bias: f64) -> Result<()> {
        if weights.len() != FEATURE_DIM {
            return Err(Error::Shape("objectness head size mismatch".into()));
        }
        self.obj_w.copy_from_slice(weights);
        self.obj_b = bias;
        Ok(())
    }

    /// Class probabilities and objectness for one patch.
    pub fn score_patch(&self, patch: &Patch) -> (Vec<f64>, f64) {
        let f = patch_features(patch);
        (softmax(&self.class_logits(&f)), sigmoid(self.objectness_logit(&f)))
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, computed without overflow.
#[inline]
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl Detector for ToyDetector {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_size(&self) -> usize {
        self.patch_size
    }

    fn infer(&self, image: &Image, proposals: &[OrientedBox]) -> Inference {
        let batch = extract_patches(image, proposals, self.patch_size);
        let mut detections = Vec::with_capacity(batch.kept.len());
        let mut rejected = Vec::new();
        for (patch, &i) in batch.patches.iter().zip(&batch.kept) {
            let (scores, obj) = self.score_patch(patch);
            if obj >= self.objectness_threshold {
                detections.push(Detection::new(proposals[i], scores));
            } else {
                rejected.push((i, obj));
            }
        }
        Inference {
            detections,
            skipped: batch.dropped,
            rejected,
        }
    }

    fn parameters(&self) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(CLS_W, Tensor { shape: vec![self.num_classes, FEATURE_DIM], data: self.cls_w.clone() });
        p.insert(CLS_B, Tensor { shape: vec![self.num_classes], data: self.cls_b.clone() });
        p.insert(OBJ_W, Tensor { shape: vec![FEATURE_DIM], data: self.obj_w.clone() });
        p.insert(OBJ_B, Tensor { shape: vec![1], data: vec![self.obj_b] });
        p
    }

    fn load_parameters(&mut self, params: &ParamSet) -> Result<()> {
        self.parameters().ensure_same_structure(params)?;
        if !params.is_finite() {
            return Err(Error::ParamMismatch("non-finite parameter values".into()));
        }
        self.cls_w.copy_from_slice(&params.get(CLS_W).expect("checked").data);
        self.cls_b.copy_from_slice(&params.get(CLS_B).expect("checked").data);
        self.obj_w.copy_from_slice(&params.get(OBJ_W).expect("checked").data);
        self.obj_b = params.get(OBJ_B).expect("checked").data[0];
        Ok(())
    }

    /// Mean cross-entropy over object targets plus mean objectness BCE over
    /// all targets, with analytic gradients.
    fn loss_and_grad(&self, patches: &[Patch], targets: &[Target]) -> Result<(LossBreakdown, ParamSet)> {
        if patches.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} patches but {} targets",
                patches.len(),
                targets.len()
            )));
        }
        for t in targets {
            if let Target::Object(c) = *t {
                if c >= self.num_classes {
                    return Err(Error::ClassOutOfRange {
                        class_id: c,
                        num_classes: self.num_classes,
                    });
                }
            }
        }
        let k = self.num_classes;
        let n_all = targets.len();
        let n_obj = targets.iter().filter(|t| matches!(t, Target::Object(_))).count();
        let mut g_cls_w = vec![0.0; k * FEATURE_DIM];
        let mut g_cls_b = vec![0.0; k];
        let mut g_obj_w = vec![0.0; FEATURE_DIM];
        let mut g_obj_b = 0.0;
        let mut loss = LossBreakdown::default();
        for (patch, target) in patches.iter().zip(targets) {
            let f = patch_features(patch);
            let z = self.objectness_logit(&f);
            let y = matches!(target, Target::Object(_)) as u8 as f64;
            loss.rpn += bce_with_logit(z, y) / n_all as f64;
            let dz = (sigmoid(z) - y) / n_all as f64;
            for (g, fi) in g_obj_w.iter_mut().zip(&f) {
                *g += dz * fi;
            }
            g_obj_b += dz;
            if let Target::Object(c) = *target {
                let logits = self.class_logits(&f);
                let p = softmax(&logits);
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
                loss.roi += (lse - logits[c]) / n_obj as f64;
                for j in 0..k {
                    let d = (p[j] - (j == c) as u8 as f64) / n_obj as f64;
                    g_cls_b[j] += d;
                    let row = &mut g_cls_w[j * FEATURE_DIM..(j + 1) * FEATURE_DIM];
                    for (g, fi) in row.iter_mut().zip(&f) {
                        *g += d * fi;
                    }
                }
            }
        }
        let mut grads = ParamSet::new();
        grads.insert(CLS_W, Tensor { shape: vec![k, FEATURE_DIM], data: g_cls_w });
        grads.insert(CLS_B, Tensor { shape: vec![k], data: g_cls_b });
        grads.insert(OBJ_W, Tensor { shape: vec![FEATURE_DIM], data: g_obj_w });
        grads.insert(OBJ_B, Tensor { shape: vec![1], data: vec![g_obj_b] });
        Ok((loss, grads))
    }

    fn apply_gradient_step(&mut self, step: &ParamSet, lr: f64) -> Result<()> {
        self.parameters().ensure_same_structure(step)?;
        let upd = |dst: &mut [f64], name: &str| {
            for (d, g) in dst.iter_mut().zip(&step.get(name).expect("checked").data) {
                *d -= lr * g;
            }
        };
        upd(&mut self.cls_w, CLS_W);
        upd(&mut self.cls_b, CLS_B);
        upd(&mut self.obj_w, OBJ_W);
        let mut b = [self.obj_b];
        upd(&mut b, OBJ_B);
        self.obj_b = b[0];
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid_patch(rgb: [f32; 3], size: usize) -> Patch {
        let mut data = Vec::with_capacity(3 * size * size);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, size * size));
        }
        Patch { size, data, origin: None }
    }

    fn scene() -> Image {
        Image::from_fn(64, 64, |x, y| {
            if (20..40).contains(&x) && (20..40).contains(&y) {
                [0.9, 0.1, 0.1]
            } else {
                [0.3, 0.35, 0.3]
            }
        })
    }

    #[test]
    fn features_of_solid_patch() {
        let f = patch_features(&solid_patch([0.05, 0.5, 0.99], 8));
        assert_eq!(f[0], 1.0);
        assert_eq!(f[COLOR_BINS + 4], 1.0);
        assert_eq!(f[2 * COLOR_BINS + 7], 1.0);
        assert_eq!(f[3 * COLOR_BINS..].iter().sum::<f64>(), 0.0);
        assert!((f[..3 * COLOR_BINS].iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn vertical_edge_lands_in_horizontal_gradient_bin() {
        let s = 8;
        let mut p = solid_patch([0.0, 0.0, 0.0], s);
        for c in 0..3 {
            for y in 0..s {
                for x in s / 2..s {
                    p.data[(c * s + y) * s + x] = 1.0;
                }
            }
        }
        let f = patch_features(&p);
        let grad = &f[3 * COLOR_BINS..];
        assert!(grad[0] > 0.0);
        assert_eq!(grad[1] + grad[2] + grad[3], 0.0);
    }

    #[test]
    fn zero_weights_give_uniform_scores() {
        let det = ToyDetector::new(4);
        let img = scene();
        let props = vec![
            OrientedBox::new(30.0, 30.0, 20.0, 20.0, 0.2).unwrap(),
            OrientedBox::new(10.0, 10.0, 8.0, 8.0, 0.0).unwrap(),
        ];
        let out = det.infer(&img, &props);
        assert_eq!(out.detections.len(), 2);
        for d in &out.detections {
            assert!(d.scores.iter().all(|&s| (s - 0.25).abs() < 1e-15));
        }
        assert!(det.infer(&img, &[]).detections.is_empty());
    }

    #[test]
    fn crafted_logit_margin() {
        let mut det = ToyDetector::new(3);
        det.set_class_weights(&vec![0.0; 3 * FEATURE_DIM], &[0.0, 0.0, 10.0]).unwrap();
        let out = det.infer(&scene(), &[OrientedBox::new(30.0, 30.0, 20.0, 20.0, 0.0).unwrap()]);
        // e^10 / (e^10 + 2)
        let want = 10f64.exp() / (10f64.exp() + 2.0);
        assert!((out.detections[0].scores[2] - want).abs() < 1e-12);
        assert!(out.detections[0].scores[2] > 0.99);
    }

    #[test]
    fn zero_area_proposal_is_reported() {
        let det = ToyDetector::new(2);
        let out = det.infer(&scene(), &[OrientedBox::new(-50.0, -50.0, 4.0, 4.0, 0.0).unwrap()]);
        assert!(out.detections.is_empty());
        assert_eq!(out.skipped, vec![0]);
    }

    #[test]
    fn objectness_gate_drops_low_scores() {
        let mut det = ToyDetector::new(2);
        det.set_objectness(&[0.0; FEATURE_DIM], -5.0).unwrap();
        let out = det.infer(&scene(), &[OrientedBox::new(30.0, 30.0, 20.0, 20.0, 0.0).unwrap()]);
        assert!(out.detections.is_empty());
        assert!(out.skipped.is_empty());
    }

    #[test]
    fn certain_correct_prediction_has_zero_ce() {
        let mut det = ToyDetector::new(3);
        det.set_class_weights(&vec![0.0; 3 * FEATURE_DIM], &[0.0, 800.0, 0.0]).unwrap();
        let p = solid_patch([0.5, 0.5, 0.5], 8);
        let (loss, _) = det.loss_and_grad(&[p], &[Target::Object(1)]).unwrap();
        assert_eq!(loss.roi, 0.0);
    }

    #[test]
    fn uniform_prediction_costs_ln_k() {
        let det = ToyDetector::new(5);
        let p = solid_patch([0.2, 0.5, 0.7], 8);
        let (loss, _) = det
            .loss_and_grad(&[p.clone(), p], &[Target::Object(0), Target::Object(3)])
            .unwrap();
        assert!((loss.roi - 5f64.ln()).abs() < 1e-12);
        // sigmoid(0) = 0.5 against target 1
        assert!((loss.rpn - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_errors() {
        let det = ToyDetector::new(2);
        let p = solid_patch([0.2, 0.5, 0.7], 4);
        assert!(matches!(
            det.loss_and_grad(&[p.clone()], &[Target::Object(2)]),
            Err(Error::ClassOutOfRange { class_id: 2, num_classes: 2 })
        ));
        assert!(matches!(det.loss_and_grad(&[p], &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn parameter_round_trip_and_step() {
        let mut det = ToyDetector::with_random_init(3, 11, 0.1);
        let params = det.parameters();
        let mut other = ToyDetector::new(3);
        other.load_parameters(&params).unwrap();
        assert_eq!(other, det);
        let ones = {
            let mut g = params.zeros_like();
            for (_, t) in g.iter_mut() {
                t.data.iter_mut().for_each(|v| *v = 1.0);
            }
            g
        };
        det.apply_gradient_step(&ones, 0.5).unwrap();
        let after = det.parameters();
        for (name, t) in after.iter() {
            for (a, b) in t.data.iter().zip(&params.get(name).unwrap().data) {
                assert!((a - (b - 0.5)).abs() < 1e-15);
            }
        }
        assert!(ToyDetector::new(4).load_parameters(&params).is_err());
    }

    #[test]
    fn proposals_are_deterministic_and_jittered() {
        let cfg = ProposalConfig::default();
        let gt = vec![OrientedBox::new(30.0, 30.0, 20.0, 12.0, 0.4).unwrap()];
        let a = cfg.generate(&gt, 64, 64, 3, "img-1");
        let b = cfg.generate(&gt, 64, 64, 3, "img-1");
        assert_eq!(a, b);
        assert_eq!(a.len(), 1 + cfg.distractors);
        assert!(crate::geometry::rotated_iou(&a[0], &gt[0]) > 0.6);
        assert_ne!(a, cfg.generate(&gt, 64, 64, 3, "img-2"));
    }
}
