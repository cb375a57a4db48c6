//! Rotated-box PASCAL VOC evaluation.

mod format;
mod table;

pub use format::{
    format_detections, format_ground_truth, parse_detections, parse_ground_truth, read_detection_dir,
    read_ground_truth_dir, write_detection_dir,
};
pub use table::{corruption_table, corruption_table_rows, CorruptionTable};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotated_iou, OrientedBox};
use crate::pseudo_label::PseudoLabel;

pub const DEFAULT_MATCH_IOU: f64 = 0.5;

/// One annotated object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtObject {
    pub bbox: OrientedBox,
    pub class_id: usize,
    pub difficult: bool,
}

impl GtObject {
    pub fn new(bbox: OrientedBox, class_id: usize) -> Self {
        GtObject {
            bbox,
            class_id,
            difficult: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchFlag {
    Tp,
    Fp,
    /// Matched a difficult object; counts neither way.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApVariant {
    /// Area under the precision envelope at every recall step.
    #[default]
    AllPoints,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

/// Indices of `dets` sorted by score descending, input order on ties.
fn score_order(dets: &[PseudoLabel]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy matcher over one image's objects. Difficult objects are never
/// marked as taken.
struct Matcher<'a> {
    gts: &'a [GtObject],
    taken: Vec<bool>,
    iou_thr: f64,
}

impl<'a> Matcher<'a> {
    fn new(gts: &'a [GtObject], iou_thr: f64) -> Self {
        Matcher {
            gts,
            taken: vec![false; gts.len()],
            iou_thr,
        }
    }

    fn assign(&mut self, det: &PseudoLabel) -> MatchFlag {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in self.gts.iter().enumerate() {
            if g.class_id != det.class_id || self.taken[j] {
                continue;
            }
            let iou = rotated_iou(&det.bbox, &g.bbox);
            if iou >= self.iou_thr && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        match best {
            None => MatchFlag::Fp,
            Some((j, _)) if self.gts[j].difficult => MatchFlag::Ignored,
            Some((j, _)) => {
                self.taken[j] = true;
                MatchFlag::Tp
            }
        }
    }
}

/// Matches one image's detections to its objects. Detections are visited
/// by score descending; each takes the highest-IoU untaken object of its
/// class with IoU ≥ `iou_thr`. Returns `(detection index, flag)` in visit
/// order.
pub fn match_detections(dets: &[PseudoLabel], gts: &[GtObject], iou_thr: f64) -> Vec<(usize, MatchFlag)> {
    let mut m = Matcher::new(gts, iou_thr);
    score_order(dets).into_iter().map(|i| (i, m.assign(&dets[i]))).collect()
}

/// AP from TP flags already sorted by score descending (ignored detections
/// removed). `None` when `num_gt` is zero.
pub fn average_precision(tp_sorted: &[bool], num_gt: usize, variant: ApVariant) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(tp_sorted.len());
    let mut precision = Vec::with_capacity(tp_sorted.len());
    for (i, &hit) in tp_sorted.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    Some(match variant {
        ApVariant::AllPoints => {
            let mut mrec = vec![0.0];
            mrec.extend(&recall);
            mrec.push(1.0);
            let mut mpre = vec![0.0];
            mpre.extend(&precision);
            mpre.push(0.0);
            for i in (0..mpre.len() - 1).rev() {
                mpre[i] = mpre[i].max(mpre[i + 1]);
            }
            (0..mrec.len() - 1)
                .filter(|&i| mrec[i + 1] != mrec[i])
                .map(|i| (mrec[i + 1] - mrec[i]) * mpre[i + 1])
                .sum()
        }
        ApVariant::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let t = t as f64 / 10.0;
                    recall
                        .iter()
                        .zip(&precision)
                        .filter(|(r, _)| **r >= t)
                        .map(|(_, p)| *p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    /// Non-difficult objects.
    pub gt: usize,
    pub det: usize,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Per-class AP; `None` for classes without objects.
    pub ap: Vec<Option<f64>>,
    /// Mean AP over classes with objects; `None` if there are none.
    pub map: Option<f64>,
    pub counts: Vec<ClassCounts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou: f64,
    pub ap_variant: ApVariant,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou: DEFAULT_MATCH_IOU,
            ap_variant: ApVariant::AllPoints,
        }
    }
}

/// Dataset-level evaluation. `dets[i]` and `gts[i]` belong to image `i`.
/// Detections of a class are ranked jointly across images.
pub fn evaluate(
    dets: &[Vec<PseudoLabel>],
    gts: &[Vec<GtObject>],
    num_classes: usize,
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    if dets.len() != gts.len() {
        return Err(Error::Shape(format!(
            "detections for {} images, ground truth for {}",
            dets.len(),
            gts.len()
        )));
    }
    let check = |c: usize| {
        if c >= num_classes {
            Err(Error::ClassOutOfRange {
                class_id: c,
                num_classes,
            })
        } else {
            Ok(())
        }
    };
    for d in dets.iter().flatten() {
        check(d.class_id)?;
    }
    for g in gts.iter().flatten() {
        check(g.class_id)?;
    }
    let mut ap = Vec::with_capacity(num_classes);
    let mut counts = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let mut cls: Vec<(usize, PseudoLabel)> = Vec::new();
        for (img, ds) in dets.iter().enumerate() {
            cls.extend(ds.iter().filter(|d| d.class_id == class).map(|d| (img, *d)));
        }
        cls.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));
        let mut matchers: Vec<Matcher> = gts.iter().map(|g| Matcher::new(g, cfg.iou)).collect();
        let mut c = ClassCounts {
            gt: gts.iter().flatten().filter(|g| g.class_id == class && !g.difficult).count(),
            det: cls.len(),
            ..Default::default()
        };
        let mut flags = Vec::with_capacity(cls.len());
        for (img, d) in &cls {
            match matchers[*img].assign(d) {
                MatchFlag::Tp => {
                    c.tp += 1;
                    flags.push(true);
                }
                MatchFlag::Fp => {
                    c.fp += 1;
                    flags.push(false);
                }
                MatchFlag::Ignored => {}
            }
        }
        ap.push(average_precision(&flags, c.gt, cfg.ap_variant));
        counts.push(c);
    }
    let defined: Vec<f64> = ap.iter().flatten().copied().collect();
    let map = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(EvalResult { ap, map, counts })
}
