use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::backends::ProposalConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::geometry::DEFAULT_NMS_IOU;
use crate::pseudo_label::{DEFAULT_PATCH_SIZE, DEFAULT_TAU, DEFAULT_TEMPERATURE, DEFAULT_TEMPLATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("{prefix}.lr"), format!("must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("{prefix}.momentum"), "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("{prefix}.weight_decay"), "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub objectness_threshold: f64,
    pub patch_size: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            objectness_threshold: 0.5,
            patch_size: crate::backends::TOY_PATCH_SIZE,
        }
    }
}

/// Zero-shot backend selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierConfig {
    /// Simulated classifier. Give `sigma` directly or a target standalone
    /// `accuracy` to calibrate it from.
    Centroid {
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default)]
        accuracy: Option<f64>,
        #[serde(default = "default_dim")]
        dim: usize,
        /// Share of the embedding noise tied to object appearance.
        #[serde(default)]
        appearance_correlation: f64,
        #[serde(default = "default_levels")]
        appearance_levels: usize,
        /// Factor applied to every image-text cosine; below 1 softens the
        /// zero-shot scores.
        #[serde(default = "default_scale")]
        similarity_scale: f64,
    },
    /// Precomputed `text.emb` and `patches.emb` in `dir`.
    File { dir: PathBuf },
}

fn default_dim() -> usize {
    64
}

fn default_levels() -> usize {
    4
}

fn default_scale() -> f64 {
    1.0
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig::Centroid {
            sigma: None,
            accuracy: Some(0.7),
            dim: default_dim(),
            appearance_correlation: 0.0,
            appearance_levels: default_levels(),
            similarity_scale: default_scale(),
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ClassifierConfig::Centroid {
                sigma,
                accuracy,
                dim,
                appearance_correlation,
                appearance_levels,
                similarity_scale,
            } => {
                if *dim < 2 {
                    return Err(Error::config("classifier.dim", "must be at least 2"));
                }
                if !(0.0..=1.0).contains(appearance_correlation) {
                    return Err(Error::config("classifier.appearance_correlation", "must lie in [0, 1]"));
                }
                if *appearance_levels == 0 {
                    return Err(Error::config("classifier.appearance_levels", "must be at least 1"));
                }
                if !(*similarity_scale > 0.0 && *similarity_scale <= 1.0) {
                    return Err(Error::config("classifier.similarity_scale", "must lie in (0, 1]"));
                }
                match (sigma, accuracy) {
                    (Some(s), None) if *s >= 0.0 && s.is_finite() => Ok(()),
                    (Some(_), None) => Err(Error::config("classifier.sigma", "must be finite and non-negative")),
                    (None, Some(a)) if *a > 0.0 && *a <= 1.0 => Ok(()),
                    (None, Some(_)) => Err(Error::config("classifier.accuracy", "must lie in (0, 1]")),
                    _ => Err(Error::config("classifier.sigma", "set exactly one of sigma and accuracy")),
                }
            }
            ClassifierConfig::File { .. } => Ok(()),
        }
    }
}

/// Everything that determines an adaptation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub tau: f64,
    pub lambda: f64,
    pub cga: bool,
    pub alpha: f64,
    pub ema_stride: u64,
    pub nms_iou: f64,
    pub temperature: f64,
    pub prompt_template: String,
    pub classifier_patch_size: usize,
    /// Proposals overlapping every teacher detection by less than this
    /// IoU become background targets.
    pub negative_iou: f64,
    /// Gated-out proposals become background targets only when the
    /// teacher's objectness is below this.
    pub negative_objectness: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Caps the number of steps; unset means `epochs · ceil(n / batch_size)`.
    pub max_steps: Option<usize>,
    pub optimizer: OptimizerConfig,
    pub detector: DetectorConfig,
    pub proposals: ProposalConfig,
    pub augment: AugmentConfig,
    pub classifier: ClassifierConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            tau: DEFAULT_TAU,
            lambda: 0.2,
            cga: true,
            alpha: crate::ema::DEFAULT_ALPHA,
            ema_stride: 1,
            nms_iou: DEFAULT_NMS_IOU,
            temperature: DEFAULT_TEMPERATURE,
            prompt_template: DEFAULT_TEMPLATE.to_string(),
            classifier_patch_size: DEFAULT_PATCH_SIZE,
            negative_iou: 0.3,
            negative_objectness: 0.1,
            batch_size: 2,
            epochs: 1,
            max_steps: None,
            optimizer: OptimizerConfig::default(),
            detector: DetectorConfig::default(),
            proposals: ProposalConfig::default(),
            augment: AugmentConfig::default(),
            classifier: ClassifierConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn unit(key: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(key, format!("must lie in [0, 1], got {v}")))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        unit("tau", self.tau)?;
        unit("lambda", self.lambda)?;
        unit("alpha", self.alpha)?;
        unit("nms_iou", self.nms_iou)?;
        unit("negative_iou", self.negative_iou)?;
        unit("negative_objectness", self.negative_objectness)?;
        unit("detector.objectness_threshold", self.detector.objectness_threshold)?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature", "must be positive"));
        }
        if self.ema_stride == 0 {
            return Err(Error::config("ema_stride", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.classifier_patch_size == 0 {
            return Err(Error::config("classifier_patch_size", "must be at least 1"));
        }
        if self.detector.patch_size < 3 {
            return Err(Error::config("detector.patch_size", "must be at least 3"));
        }
        if !self.prompt_template.contains(crate::pseudo_label::CLASS_PLACEHOLDER) {
            return Err(Error::config("prompt_template", "must contain [Class]"));
        }
        let p = &self.proposals;
        if !(p.center_jitter >= 0.0 && p.size_jitter >= 0.0 && p.angle_jitter >= 0.0) {
            return Err(Error::config("proposals.center_jitter", "jitter must be non-negative"));
        }
        if !(p.distractor_min_size > 0.0 && p.distractor_max_size >= p.distractor_min_size) {
            return Err(Error::config("proposals.distractor_min_size", "need 0 < min <= max"));
        }
        unit("eval.iou", self.eval.iou)?;
        self.optimizer.validate("optimizer")?;
        self.augment.validate()?;
        self.classifier.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Turns a TOML parse failure into a config error naming the offending key
/// when the parser reports one.
/// Maps a TOML error on `text` to a config error naming the offending
/// dotted key when it can be recovered.
pub fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let msg = e.message().trim().to_string();
    let unknown = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.starts_with("unknown field"))
        .map(String::from);
    let located = e.span().and_then(|span| key_at(text, span.start));
    let key = match (located, unknown) {
        (Some(k), Some(u)) if !k.ends_with(&u) => format!("{k}.{u}"),
        (Some(k), _) => k,
        (None, Some(u)) => u,
        (None, None) => "config".to_string(),
    };
    Error::config(key, msg)
}

/// Dotted key of the assignment or table header on the line holding `pos`.
fn key_at(text: &str, pos: usize) -> Option<String> {
    let mut table = String::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        let start = offset;
        offset += line.len();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if (start..offset).contains(&pos) {
                return Some(table);
            }
            continue;
        }
        if !(start..offset).contains(&pos) {
            continue;
        }
        let (k, _) = t.split_once('=')?;
        let k = k.trim().trim_matches('"');
        return Some(if table.is_empty() { k.to_string() } else { format!("{table}.{k}") });
    }
    None
}
