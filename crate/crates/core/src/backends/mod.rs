//! Model backends.
//!
//! The pipeline talks to detectors and zero-shot classifiers only through
//! the [`Detector`] and [`ZeroShotClassifier`] traits. The concrete
//! implementations here are desk-scale stand-ins: a linear detector over
//! colour/gradient histograms, a centroid-based simulated zero-shot
//! classifier, and a classifier that serves embeddings computed elsewhere
//! and stored in files.

mod centroid;
mod embedding_file;
mod toy;

pub use centroid::{accuracy_for_sigma, calibrate_sigma, CentroidClassifier, TruthOracle};
pub use embedding_file::{
    load_file_embeddings, read_embedding_file, read_embedding_text, write_embedding_file,
    write_embedding_text, EmbeddingFile, FileEmbeddingClassifier, EMBEDDING_MAGIC,
    PATCH_EMBEDDINGS_FILE, TEXT_EMBEDDINGS_FILE,
};
pub use toy::{patch_features, ProposalConfig, ToyDetector, FEATURE_DIM, TOY_PATCH_SIZE};

use crate::error::Result;
use crate::geometry::{Detection, OrientedBox};
use crate::imaging::Image;
use crate::pseudo_label::{EmbeddingMatrix, Patch, PromptSet};
use crate::tensor::ParamSet;

/// Supervision for one training patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Object(usize),
    Background,
}

/// Loss split into its classification (RoI head) and objectness
/// (proposal network) terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub roi: f64,
    pub rpn: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.roi + self.rpn
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Inference {
    pub detections: Vec<Detection>,
    /// Proposals whose crop had zero area inside the image.
    pub skipped: Vec<usize>,
    /// Proposals dropped by the objectness gate, with their objectness.
    pub rejected: Vec<(usize, f64)>,
}

/// A detector whose inference is a pure function of its parameters and
/// input. `apply_gradient_step` is the only mutating call.
pub trait Detector: Send + Sync {
    fn num_classes(&self) -> usize;

    /// Side of the square patches `loss_and_grad` expects.
    fn input_size(&self) -> usize;

    fn infer(&self, image: &Image, proposals: &[OrientedBox]) -> Inference;

    fn parameters(&self) -> ParamSet;

    fn load_parameters(&mut self, params: &ParamSet) -> Result<()>;

    fn loss_and_grad(&self, patches: &[Patch], targets: &[Target]) -> Result<(LossBreakdown, ParamSet)>;

    /// `θ ← θ − lr · step` for every named tensor.
    fn apply_gradient_step(&mut self, step: &ParamSet, lr: f64) -> Result<()>;
}

/// Image/text embedding provider for zero-shot scoring.
pub trait ZeroShotClassifier: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_images(&self, patches: &[Patch]) -> Result<EmbeddingMatrix>;

    fn text_embeddings(&self, prompts: &PromptSet) -> Result<EmbeddingMatrix>;
}
