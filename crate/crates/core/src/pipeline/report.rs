use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use crate::backends::LossBreakdown;
use crate::eval::EvalResult;

pub const REPORT_HEADER: &str = "sfod-run-report 1";

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub images: Vec<String>,
    /// Teacher detections after NMS.
    pub detections: usize,
    pub pseudo_labels: usize,
    /// Pseudo-labels matching an annotation of the same class at IoU ≥ 0.5.
    pub pseudo_correct: usize,
    /// Rows scored by the zero-shot classifier, and how many agreed.
    pub cga_rows: usize,
    pub agreements: usize,
    pub negatives: usize,
    /// `None` for a skipped step.
    pub loss: Option<LossBreakdown>,
    pub teacher_updated: bool,
}

impl StepRecord {
    pub fn skipped(&self) -> bool {
        self.loss.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config_sha256: String,
    pub steps: Vec<StepRecord>,
    /// Final evaluation per method variant, in insertion order.
    pub evaluations: Vec<(String, EvalResult)>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl RunReport {
    pub fn new(cfg: &PipelineConfig) -> Self {
        RunReport {
            config_sha256: hex::encode(Sha256::digest(cfg.to_toml().as_bytes())),
            steps: Vec::new(),
            evaluations: Vec::new(),
        }
    }

    pub fn skipped_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.skipped()).count()
    }

    pub fn total_pseudo_labels(&self) -> usize {
        self.steps.iter().map(|s| s.pseudo_labels).sum()
    }

    pub fn pseudo_label_accuracy(&self) -> Option<f64> {
        let n = self.total_pseudo_labels();
        (n > 0).then(|| self.steps.iter().map(|s| s.pseudo_correct).sum::<usize>() as f64 / n as f64)
    }

    pub fn agreement_rate(&self) -> Option<f64> {
        let rows: usize = self.steps.iter().map(|s| s.cga_rows).sum();
        (rows > 0).then(|| self.steps.iter().map(|s| s.agreements).sum::<usize>() as f64 / rows as f64)
    }

    pub fn loss_curve(&self) -> Vec<(usize, f64)> {
        self.steps.iter().filter_map(|s| s.loss.map(|l| (s.step, l.total()))).collect()
    }

    /// Monotone step indices and finite losses.
    pub fn is_well_formed(&self) -> bool {
        self.steps.windows(2).all(|w| w[0].step < w[1].step)
            && self
                .steps
                .iter()
                .all(|s| s.loss.is_none_or(|l| l.roi.is_finite() && l.rpn.is_finite()))
    }

    /// One whitespace-separated record per line: `step` records, then
    /// `summary` and `eval` records. Floats use the shortest exact form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{REPORT_HEADER}").unwrap();
        writeln!(out, "config_sha256 {}", self.config_sha256).unwrap();
        writeln!(
            out,
            "columns step epoch images detections pseudo_labels pseudo_correct cga_rows agreements negatives loss_roi loss_rpn loss_total status"
        )
        .unwrap();
        for s in &self.steps {
            let (roi, rpn, total, status) = match s.loss {
                Some(l) => (l.roi.to_string(), l.rpn.to_string(), l.total().to_string(), if s.teacher_updated { "ok" } else { "ok-no-ema" }),
                None => ("NA".into(), "NA".into(), "NA".into(), "skipped"),
            };
            writeln!(
                out,
                "step {} {} {} {} {} {} {} {} {} {roi} {rpn} {total} {status}",
                s.step,
                s.epoch,
                s.images.join(","),
                s.detections,
                s.pseudo_labels,
                s.pseudo_correct,
                s.cga_rows,
                s.agreements,
                s.negatives
            )
            .unwrap();
        }
        writeln!(out, "summary steps {}", self.steps.len()).unwrap();
        writeln!(out, "summary skipped {}", self.skipped_steps()).unwrap();
        writeln!(out, "summary pseudo_labels {}", self.total_pseudo_labels()).unwrap();
        writeln!(out, "summary pseudo_label_accuracy {}", opt(self.pseudo_label_accuracy())).unwrap();
        writeln!(out, "summary agreement_rate {}", opt(self.agreement_rate())).unwrap();
        for (name, r) in &self.evaluations {
            writeln!(out, "eval {name} map {}", opt(r.map)).unwrap();
            for (k, ap) in r.ap.iter().enumerate() {
                writeln!(out, "eval {name} ap {k} {}", opt(*ap)).unwrap();
            }
        }
        out
    }
}
