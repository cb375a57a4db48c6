mod config;
mod experiment;
mod report;
mod scenes;
mod train;

pub use config::{toml_error, ClassifierConfig, DetectorConfig, OptimizerConfig, PipelineConfig};
pub use experiment::{
    build_classifier, corrupt_samples, lambda_sweep, lambda_sweep_seeds, prepare, run_experiment_matrix, run_method,
    run_seed, source_detector, ExperimentConfig, MatrixResult, Method, MethodOutcome, Prepared, SeedResult, Splits, DESK_EXPERIMENT_TOML,
};
pub use report::{RunReport, StepRecord, REPORT_HEADER};
pub use scenes::{
    class_styles, generate_scenes, load_dataset, save_dataset, ClassStyle, SceneConfig, Shape, SyntheticScene,
    CLASSES_FILE, IMAGES_DIR, LABELS_DIR, MAX_SCENE_CLASSES,
};
pub use train::{
    dataset_mean, detect, direct_test, evaluate_samples, label_proposals, pseudo_labels_for, sample_proposals,
    self_train, train_source, Adapted, Sgd, SourceTrainingConfig,
};

use crate::eval::GtObject;
use crate::imaging::Image;

/// One target image. `objects` drive the proposal source and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub objects: Vec<GtObject>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}
