//! Pseudo-label generation with zero-shot score aggregation.
//!
//! The teacher's post-NMS class scores are compared with a zero-shot
//! classifier's scores on the same boxes. Rows where both agree on the top
//! class keep the teacher's scores untouched; rows where they disagree are
//! replaced by the convex blend `(1 − λ)·teacher + λ·zero_shot`. The refined
//! rows are then thresholded at τ to produce training targets.

mod patches;

pub use patches::{extract_patches, Patch, PatchBatch, PatchOrigin, DEFAULT_PATCH_SIZE};

use crate::error::{Error, Result};
use crate::geometry::{argmax, Detection, OrientedBox};

pub const CLASS_PLACEHOLDER: &str = "[Class]";
pub const DEFAULT_TEMPLATE: &str = "An aerial image of a [Class]";
pub const DEFAULT_TAU: f64 = 0.7;
pub const DEFAULT_TEMPERATURE: f64 = 100.0;

/// One text prompt per class, in class order.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub class_names: Vec<String>,
    pub prompts: Vec<String>,
}

impl PromptSet {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

/// Substitutes each class name into `template` verbatim. No grammatical
/// fixing is done, so "a airport" is produced as written.
pub fn build_prompts<S: AsRef<str>>(class_names: &[S], template: &str) -> Result<PromptSet> {
    if class_names.is_empty() {
        return Err(Error::config("class_names", "at least one class is required"));
    }
    let placeholders = template.matches(CLASS_PLACEHOLDER).count();
    if placeholders != 1 {
        return Err(Error::config(
            "prompt_template",
            format!("template must contain `{CLASS_PLACEHOLDER}` exactly once, found {placeholders}"),
        ));
    }
    let class_names: Vec<String> = class_names.iter().map(|s| s.as_ref().to_string()).collect();
    let prompts = class_names
        .iter()
        .map(|name| template.replacen(CLASS_PLACEHOLDER, name, 1))
        .collect();
    Ok(PromptSet {
        class_names,
        prompts,
    })
}

/// Row-major `N × K` score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ClassScores {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} scores need {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(ClassScores { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged score rows".into()));
        }
        Ok(ClassScores {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_detections(dets: &[Detection]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = dets.iter().map(|d| d.scores.clone()).collect();
        Self::from_rows(&rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn argmax_row(&self, i: usize) -> usize {
        argmax(self.row(i))
    }
}

/// `rows × dim` embedding matrix stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    /// Set when every row is known to have unit L2 norm.
    pub normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>, normalized: bool) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "{rows}x{dim} embeddings need {} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("embedding contains non-finite values".into()));
        }
        Ok(EmbeddingMatrix {
            rows,
            dim,
            data,
            normalized,
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows as unit-norm `f64` vectors.
    fn unit_rows(&self, matrix: &'static str) -> Result<Vec<Vec<f64>>> {
        (0..self.rows)
            .map(|i| {
                let r: Vec<f64> = self.row(i).iter().map(|&v| v as f64).collect();
                if self.normalized {
                    return Ok(r);
                }
                let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::ZeroNormRow { matrix, row: i });
                }
                Ok(r.into_iter().map(|v| v / norm).collect())
            })
            .collect()
    }

    /// L2-normalizes every row in place.
    pub fn normalize(&mut self, matrix: &'static str) -> Result<()> {
        let rows = self.unit_rows(matrix)?;
        self.data = rows.into_iter().flatten().map(|v| v as f32).collect();
        self.normalized = true;
        Ok(())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Row-wise `softmax(temperature · F_v · F_tᵀ)` over unit-normalized
/// embeddings. Rows not flagged as normalized are normalized here; a
/// zero-norm row is an error. `temperature = 1` gives the plain dot-product
/// softmax.
pub fn zero_shot_scores(
    image_emb: &EmbeddingMatrix,
    text_emb: &EmbeddingMatrix,
    temperature: f64,
) -> Result<ClassScores> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::config("temperature", format!("must be positive, got {temperature}")));
    }
    if image_emb.dim != text_emb.dim {
        return Err(Error::Shape(format!(
            "image embeddings have dim {}, text embeddings {}",
            image_emb.dim, text_emb.dim
        )));
    }
    let v = image_emb.unit_rows("image")?;
    let t = text_emb.unit_rows("text")?;
    let k = t.len();
    let mut data = Vec::with_capacity(v.len() * k);
    for vr in &v {
        let logits: Vec<f64> = t
            .iter()
            .map(|tr| temperature * vr.iter().zip(tr).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        data.extend(softmax(&logits));
    }
    ClassScores::new(v.len(), k, data)
}

/// Result of score aggregation, with the per-row agreement mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub scores: ClassScores,
    pub agreed: Vec<bool>,
}

impl Refined {
    pub fn agreement_rate(&self) -> Option<f64> {
        if self.agreed.is_empty() {
            None
        } else {
            Some(self.agreed.iter().filter(|&&a| a).count() as f64 / self.agreed.len() as f64)
        }
    }
}

/// Aggregates teacher scores `y_w` with zero-shot scores `y_c`.
pub fn cga_refine(y_w: &ClassScores, y_c: &ClassScores, lambda: f64) -> Result<ClassScores> {
    cga_refine_detailed(y_w, y_c, lambda).map(|r| r.scores)
}

pub fn cga_refine_detailed(y_w: &ClassScores, y_c: &ClassScores, lambda: f64) -> Result<Refined> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config("lambda", format!("must lie in [0, 1], got {lambda}")));
    }
    if y_w.rows != y_c.rows || y_w.cols != y_c.cols {
        return Err(Error::Shape(format!(
            "teacher scores are {}x{}, zero-shot scores {}x{}",
            y_w.rows, y_w.cols, y_c.rows, y_c.cols
        )));
    }
    let mut data = Vec::with_capacity(y_w.data.len());
    let mut agreed = Vec::with_capacity(y_w.rows);
    for i in 0..y_w.rows {
        let w = y_w.row(i);
        let c = y_c.row(i);
        let same = argmax(w) == argmax(c);
        agreed.push(same);
        if same {
            data.extend_from_slice(w);
        } else {
            data.extend(w.iter().zip(c).map(|(&a, &b)| (1.0 - lambda) * a + lambda * b));
        }
    }
    Ok(Refined {
        scores: ClassScores::new(y_w.rows, y_w.cols, data)?,
        agreed,
    })
}

/// A training target: one box with a single class and its confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub bbox: OrientedBox,
    pub class_id: usize,
    pub score: f64,
}

/// Keeps detections whose top refined score is at least `tau`, sorted by
/// score descending (input order on ties).
pub fn filter_by_confidence(dets: &[Detection], tau: f64) -> Vec<PseudoLabel> {
    let mut out: Vec<PseudoLabel> = dets
        .iter()
        .map(|d| {
            let (class_id, score) = d.top();
            PseudoLabel {
                bbox: d.bbox,
                class_id,
                score,
            }
        })
        .filter(|p| p.score >= tau)
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out
}
