use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{OptimizerConfig, PipelineConfig};
use super::report::{RunReport, StepRecord};
use super::Sample;
use crate::augment::augment_pair;
use crate::backends::{Detector, ProposalConfig, Target, ZeroShotClassifier};
use crate::ema::EmaState;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalResult, GtObject};
use crate::geometry::{nms_rotated, rotated_iou, Detection, OrientedBox};
use crate::pseudo_label::{
    build_prompts, cga_refine_detailed, extract_patches, filter_by_confidence, zero_shot_scores, ClassScores,
    Patch, PatchOrigin, PseudoLabel,
};
use crate::rng;
use crate::tensor::ParamSet;

/// SGD with momentum: `v ← μv + g + wd·θ`, `θ ← θ − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    cfg: OptimizerConfig,
    velocity: Option<ParamSet>,
}

impl Sgd {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Sgd { cfg, velocity: None }
    }

    pub fn step<D: Detector + ?Sized>(&mut self, model: &mut D, grads: &ParamSet) -> Result<()> {
        let params = model.parameters();
        params.ensure_same_structure(grads)?;
        let v = self.velocity.get_or_insert_with(|| params.zeros_like());
        for (name, vt) in v.iter_mut() {
            let g = &grads.get(name).expect("same structure").data;
            let p = &params.get(name).expect("same structure").data;
            for ((vi, gi), pi) in vt.data.iter_mut().zip(g).zip(p) {
                *vi = self.cfg.momentum * *vi + gi + self.cfg.weight_decay * pi;
            }
        }
        model.apply_gradient_step(v, self.cfg.lr)
    }
}

/// Proposals for `sample` under `seed`; the same boxes are used for
/// evaluation and for every adaptation epoch.
pub fn sample_proposals(sample: &Sample, proposals: &ProposalConfig, seed: u64) -> Vec<OrientedBox> {
    let boxes: Vec<OrientedBox> = sample.objects.iter().map(|o| o.bbox).collect();
    proposals.generate(&boxes, sample.image.width(), sample.image.height(), seed, &sample.id)
}

/// Detector output for one image after NMS, as single-class labels.
pub fn detect(detector: &(impl Detector + ?Sized), sample: &Sample, cfg: &PipelineConfig) -> Vec<PseudoLabel> {
    let proposals = sample_proposals(sample, &cfg.proposals, cfg.seed);
    let inf = detector.infer(&sample.image, &proposals);
    nms_rotated(&inf.detections, cfg.nms_iou)
        .iter()
        .map(|d| {
            let (class_id, score) = d.top();
            PseudoLabel {
                bbox: d.bbox,
                class_id,
                score,
            }
        })
        .collect()
}

/// Source model applied to the target data as is.
pub fn direct_test(detector: &(impl Detector + ?Sized), samples: &[Sample], cfg: &PipelineConfig) -> Result<EvalResult> {
    let dets: Vec<Vec<PseudoLabel>> = samples.par_iter().map(|s| detect(detector, s, cfg)).collect();
    let gts: Vec<Vec<GtObject>> = samples.iter().map(|s| s.objects.clone()).collect();
    evaluate(&dets, &gts, detector.num_classes(), &cfg.eval)
}

pub fn evaluate_samples(
    detector: &(impl Detector + ?Sized),
    samples: &[Sample],
    cfg: &PipelineConfig,
    eval: &EvalConfig,
) -> Result<EvalResult> {
    let mut c = cfg.clone();
    c.eval = *eval;
    direct_test(detector, samples, &c)
}

/// Supervised recipe for the toy source model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceTrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub proposals: ProposalConfig,
    pub positive_iou: f64,
    pub negative_iou: f64,
}

impl Default for SourceTrainingConfig {
    fn default() -> Self {
        SourceTrainingConfig {
            epochs: 30,
            batch_size: 32,
            optimizer: OptimizerConfig {
                lr: 0.5,
                momentum: 0.9,
                weight_decay: 1e-3,
            },
            proposals: ProposalConfig {
                per_object: 3,
                distractors: 8,
                ..ProposalConfig::default()
            },
            positive_iou: 0.5,
            negative_iou: 0.3,
        }
    }
}

impl SourceTrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("source.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("source.batch_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.negative_iou) || !(self.negative_iou..=1.0).contains(&self.positive_iou) {
            return Err(Error::config("source.positive_iou", "need 0 <= negative_iou <= positive_iou <= 1"));
        }
        self.optimizer.validate("source.optimizer")
    }
}

/// Labels proposals against annotations: `Object` at IoU ≥ `pos`,
/// `Background` below `neg`, ignored in between.
pub fn label_proposals(proposals: &[OrientedBox], objects: &[GtObject], pos: f64, neg: f64) -> Vec<Option<Target>> {
    proposals
        .iter()
        .map(|p| {
            let best = objects
                .iter()
                .map(|o| (rotated_iou(p, &o.bbox), o.class_id))
                .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a });
            if best.0 >= pos {
                Some(Target::Object(best.1))
            } else if best.0 < neg {
                Some(Target::Background)
            } else {
                None
            }
        })
        .collect()
}

/// Supervised training on labelled source scenes. Returns the mean loss
/// of each epoch.
pub fn train_source<D: Detector + ?Sized>(
    detector: &mut D,
    samples: &[Sample],
    cfg: &SourceTrainingConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let per_image: Vec<(Vec<Patch>, Vec<Target>)> = samples
        .par_iter()
        .map(|s| {
            let proposals = sample_proposals(s, &cfg.proposals, seed);
            let labels = label_proposals(&proposals, &s.objects, cfg.positive_iou, cfg.negative_iou);
            let batch = extract_patches(&s.image, &proposals, detector.input_size());
            let mut patches = Vec::new();
            let mut targets = Vec::new();
            for (p, &i) in batch.patches.into_iter().zip(&batch.kept) {
                if let Some(t) = labels[i] {
                    patches.push(p);
                    targets.push(t);
                }
            }
            (patches, targets)
        })
        .collect();
    let (patches, targets): (Vec<Patch>, Vec<Target>) =
        per_image.into_iter().flat_map(|(p, t)| p.into_iter().zip(t)).unzip();
    if patches.is_empty() {
        return Err(Error::Invalid("source scenes produced no training patches".into()));
    }
    let mut opt = Sgd::new(cfg.optimizer.clone());
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(seed, &["source-order".into(), epoch.into()]));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let p: Vec<Patch> = chunk.iter().map(|&i| patches[i].clone()).collect();
            let t: Vec<Target> = chunk.iter().map(|&i| targets[i]).collect();
            let (loss, grads) = detector.loss_and_grad(&p, &t)?;
            if !loss.total().is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: epoch,
                    detail: format!("source training loss {}", loss.total()),
                });
            }
            opt.step(detector, &grads)?;
            total += loss.total();
            batches += 1;
        }
        curve.push(total / batches as f64);
    }
    Ok(curve)
}

/// What the teacher produced for one image in one step.
struct ImageLabels {
    detections: usize,
    cga_rows: usize,
    agreements: usize,
    pseudo: Vec<PseudoLabel>,
    correct: usize,
    patches: Vec<Patch>,
    targets: Vec<Target>,
    negatives: usize,
}

struct Context<'a> {
    cfg: &'a PipelineConfig,
    classifier: Option<(&'a dyn ZeroShotClassifier, crate::pseudo_label::EmbeddingMatrix)>,
    fill: [f32; 3],
    student_patch: usize,
}

fn to_source_frame(b: &OrientedBox, flipped: bool, width: usize) -> OrientedBox {
    if flipped {
        b.mirrored(width as f64)
    } else {
        *b
    }
}

fn label_image<D: Detector>(ctx: &Context<'_>, teacher: &D, sample: &Sample, epoch: usize) -> Result<ImageLabels> {
    let cfg = ctx.cfg;
    let proposals = sample_proposals(sample, &cfg.proposals, cfg.seed);
    let pair = augment_pair(&sample.image, &proposals, &cfg.augment, ctx.fill, cfg.seed, &sample.id, epoch as u64);
    let weak = &pair.weak;
    let width = sample.image.width();
    let inf = teacher.infer(&weak.image, &weak.boxes);
    let mut dets = nms_rotated(&inf.detections, cfg.nms_iou);
    let mut cga_rows = 0;
    let mut agreements = 0;
    if let (Some((classifier, text)), false) = (&ctx.classifier, dets.is_empty()) {
        let boxes: Vec<OrientedBox> = dets.iter().map(|d| d.bbox).collect();
        let batch = extract_patches(&weak.image, &boxes, cfg.classifier_patch_size);
        let patches: Vec<Patch> = batch
            .patches
            .into_iter()
            .zip(&batch.kept)
            .map(|(p, &i)| {
                let index = weak.boxes.iter().position(|b| *b == boxes[i]).unwrap_or(weak.boxes.len() + i);
                p.with_origin(PatchOrigin {
                    key: format!("{}#{index}", sample.id),
                    image_id: sample.id.clone(),
                    source_box: to_source_frame(&boxes[i], weak.flipped, width),
                })
            })
            .collect();
        let kept_dets: Vec<Detection> = batch.kept.iter().map(|&i| dets[i].clone()).collect();
        if !kept_dets.is_empty() {
            let emb = classifier.embed_images(&patches)?;
            let y_c = zero_shot_scores(&emb, text, cfg.temperature)?;
            let y_w = ClassScores::from_detections(&kept_dets)?;
            let refined = cga_refine_detailed(&y_w, &y_c, cfg.lambda)?;
            cga_rows = refined.agreed.len();
            agreements = refined.agreed.iter().filter(|&&a| a).count();
            for (d, i) in dets.iter_mut().zip(0..) {
                if let Some(r) = batch.kept.iter().position(|&k| k == i) {
                    d.scores = refined.scores.row(r).to_vec();
                }
            }
        }
    }
    let pseudo = filter_by_confidence(&dets, cfg.tau);
    let correct = pseudo
        .iter()
        .filter(|p| {
            let b = to_source_frame(&p.bbox, weak.flipped, width);
            let best = sample
                .objects
                .iter()
                .map(|o| (rotated_iou(&b, &o.bbox), o.class_id))
                .fold((0.0, usize::MAX), |a, c| if c.0 > a.0 { c } else { a });
            best.0 >= 0.5 && best.1 == p.class_id
        })
        .count();
    let negatives: Vec<OrientedBox> = inf
        .rejected
        .iter()
        .filter(|&&(_, obj)| obj < cfg.negative_objectness)
        .map(|&(i, _)| weak.boxes[i])
        .filter(|b| inf.detections.iter().all(|d| rotated_iou(b, &d.bbox) < cfg.negative_iou))
        .collect();
    let mut boxes: Vec<OrientedBox> = pseudo.iter().map(|p| p.bbox).collect();
    let mut all_targets: Vec<Target> = pseudo.iter().map(|p| Target::Object(p.class_id)).collect();
    boxes.extend(&negatives);
    all_targets.extend(std::iter::repeat_n(Target::Background, negatives.len()));
    let batch = extract_patches(&pair.strong_image, &boxes, ctx.student_patch);
    let targets = batch.kept.iter().map(|&i| all_targets[i]).collect();
    Ok(ImageLabels {
        detections: dets.len(),
        cga_rows,
        agreements,
        pseudo,
        correct,
        patches: batch.patches,
        targets,
        negatives: negatives.len(),
    })
}

/// Mean colour over a dataset, used to fill cutout regions.
pub fn dataset_mean(samples: &[Sample]) -> [f32; 3] {
    if samples.is_empty() {
        return [0.5; 3];
    }
    let mut acc = [0.0f64; 3];
    for s in samples {
        let m = s.image.mean_rgb();
        for c in 0..3 {
            acc[c] += m[c] as f64;
        }
    }
    acc.map(|v| (v / samples.len() as f64) as f32)
}

/// Result of one adaptation run.
#[derive(Debug, Clone)]
pub struct Adapted<D> {
    pub report: RunReport,
    pub teacher: D,
    pub student: D,
}

/// Mean-teacher adaptation on unlabelled target samples. Annotations in
/// `target` feed only the proposal source and the report's pseudo-label
/// accuracy column; they are never used as training targets.
///
/// CGA runs when `cfg.cga` is set, which needs a classifier.
pub fn self_train<D: Detector + Clone>(
    cfg: &PipelineConfig,
    teacher: D,
    student: D,
    classifier: Option<&dyn ZeroShotClassifier>,
    class_names: &[String],
    target: &[Sample],
) -> Result<Adapted<D>> {
    cfg.validate()?;
    let mut teacher = teacher;
    let mut student = student;
    let teacher_params = teacher.parameters();
    teacher_params.ensure_same_structure(&student.parameters())?;
    if class_names.len() != teacher.num_classes() {
        return Err(Error::ClassCount {
            in_file: class_names.len(),
            expected: teacher.num_classes(),
        });
    }
    for s in target {
        if s.id.is_empty() || s.id.contains(|c: char| c.is_whitespace() || c == ',' || c == '#') {
            return Err(Error::Invalid(format!("sample id {:?} must be non-empty without whitespace, ',' or '#'", s.id)));
        }
    }
    let classifier = if cfg.cga {
        let c = classifier.ok_or_else(|| Error::config("cga", "CGA is enabled but no zero-shot classifier was given"))?;
        let prompts = build_prompts(class_names, &cfg.prompt_template)?;
        Some((c, c.text_embeddings(&prompts)?))
    } else {
        None
    };
    let ctx = Context {
        cfg,
        classifier,
        fill: dataset_mean(target),
        student_patch: student.input_size(),
    };
    let mut ema = EmaState::init(&teacher_params, cfg.alpha)?.with_stride(cfg.ema_stride)?;
    let mut opt = Sgd::new(cfg.optimizer.clone());
    let per_epoch = target.len().div_ceil(cfg.batch_size);
    let total = cfg.max_steps.map_or(cfg.epochs * per_epoch, |m| m.min(cfg.epochs * per_epoch));
    let mut report = RunReport::new(cfg);
    let mut order: Vec<usize> = (0..target.len()).collect();
    let mut step = 0;
    'epochs: for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &["order".into(), epoch.into()]));
        for chunk in order.chunks(cfg.batch_size) {
            if step >= total {
                break 'epochs;
            }
            let labelled: Vec<ImageLabels> = chunk
                .par_iter()
                .map(|&i| label_image(&ctx, &teacher, &target[i], epoch))
                .collect::<Result<_>>()?;
            let mut rec = StepRecord {
                step,
                epoch,
                images: chunk.iter().map(|&i| target[i].id.clone()).collect(),
                detections: labelled.iter().map(|l| l.detections).sum(),
                pseudo_labels: labelled.iter().map(|l| l.pseudo.len()).sum(),
                pseudo_correct: labelled.iter().map(|l| l.correct).sum(),
                cga_rows: labelled.iter().map(|l| l.cga_rows).sum(),
                agreements: labelled.iter().map(|l| l.agreements).sum(),
                negatives: labelled.iter().map(|l| l.negatives).sum(),
                loss: None,
                teacher_updated: false,
            };
            if rec.pseudo_labels > 0 {
                let mut patches = Vec::new();
                let mut targets = Vec::new();
                for l in labelled {
                    patches.extend(l.patches);
                    targets.extend(l.targets);
                }
                let (loss, grads) = student.loss_and_grad(&patches, &targets)?;
                if !loss.total().is_finite() || !grads.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step,
                        detail: format!(
                            "roi {} rpn {} over {} patches; offending gradients: {:?}",
                            loss.roi,
                            loss.rpn,
                            patches.len(),
                            grads.iter().filter(|(_, t)| !t.is_finite()).map(|(n, _)| n.as_str()).collect::<Vec<_>>()
                        ),
                    });
                }
                opt.step(&mut student, &grads)?;
                if ema.on_student_step(&student.parameters())? {
                    teacher.load_parameters(ema.teacher())?;
                    rec.teacher_updated = true;
                }
                rec.loss = Some(loss);
            }
            report.steps.push(rec);
            step += 1;
        }
    }
    Ok(Adapted {
        report,
        teacher,
        student,
    })
}

/// Pseudo-labels the teacher would emit for `sample` at `epoch`, exposed
/// for inspection and tests.
pub fn pseudo_labels_for<D: Detector>(
    cfg: &PipelineConfig,
    teacher: &D,
    classifier: Option<&dyn ZeroShotClassifier>,
    class_names: &[String],
    sample: &Sample,
    epoch: usize,
) -> Result<Vec<PseudoLabel>> {
    let classifier = match (cfg.cga, classifier) {
        (true, Some(c)) => Some((c, c.text_embeddings(&build_prompts(class_names, &cfg.prompt_template)?)?)),
        (true, None) => return Err(Error::config("cga", "CGA is enabled but no zero-shot classifier was given")),
        (false, _) => None,
    };
    let ctx = Context {
        cfg,
        classifier,
        fill: [0.5; 3],
        student_patch: teacher.input_size(),
    };
    Ok(label_image(&ctx, teacher, sample, epoch)?.pseudo)
}
