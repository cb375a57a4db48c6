use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{toml_error, ClassifierConfig, PipelineConfig};
use super::report::RunReport;
use super::scenes::{class_styles, generate_scenes, SceneConfig};
use super::train::{direct_test, self_train, train_source, SourceTrainingConfig};
use super::Sample;
use crate::backends::{calibrate_sigma, load_file_embeddings, CentroidClassifier, ToyDetector, TruthOracle, ZeroShotClassifier};
use crate::corrupt::{corrupt_image, CorruptionKind, CorruptionSpec};
use crate::error::{Error, Result};
use crate::eval::{corruption_table_rows, CorruptionTable, EvalResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Direct,
    SelfTrain,
    Cga,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Direct, Method::SelfTrain, Method::Cga];

    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::SelfTrain => "self_train",
            Method::Cga => "cga",
        }
    }

    /// Row label in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Direct => "Direct-test",
            Method::SelfTrain => "Self-training",
            Method::Cga => "CGA",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::config("methods", "no methods given"));
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("methods", format!("unknown method `{s}`; expected direct, self_train or cga")))
    }
}

/// Unlabelled adaptation images and held-out evaluation images for one
/// corruption kind.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Zero-shot backend described by `cfg`. The centroid backend reads the
/// annotations of `samples` to simulate perception.
pub fn build_classifier(
    cfg: &ClassifierConfig,
    class_names: &[String],
    samples: &[Sample],
    seed: u64,
) -> Result<Box<dyn ZeroShotClassifier>> {
    cfg.validate()?;
    match cfg {
        ClassifierConfig::Centroid {
            sigma,
            accuracy,
            dim,
            appearance_correlation,
            appearance_levels,
            similarity_scale,
        } => {
            let k = class_names.len();
            let sigma = match (sigma, accuracy) {
                (Some(s), _) => *s,
                (None, Some(a)) => calibrate_sigma(*a, k)?,
                (None, None) => unreachable!("validated"),
            };
            let mut truth = TruthOracle::new();
            for s in samples {
                truth.insert(s.id.clone(), s.objects.iter().map(|o| (o.bbox, o.class_id)).collect());
            }
            Ok(Box::new(
                CentroidClassifier::new(k, *dim, sigma, seed, Arc::new(truth))?
                    .with_appearance_correlation(*appearance_correlation, *appearance_levels)?
                    .with_similarity_scale(*similarity_scale)?,
            ))
        }
        ClassifierConfig::File { dir } => Ok(Box::new(load_file_embeddings(dir, class_names)?)),
    }
}

/// One adaptation run scored on `test`.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub eval: EvalResult,
    pub report: Option<RunReport>,
}

/// Runs `method` starting from `source`.
pub fn run_method(
    method: Method,
    cfg: &PipelineConfig,
    source: &ToyDetector,
    class_names: &[String],
    splits: &Splits,
) -> Result<MethodOutcome> {
    if method == Method::Direct {
        return Ok(MethodOutcome {
            eval: direct_test(source, &splits.test, cfg)?,
            report: None,
        });
    }
    let mut c = cfg.clone();
    c.cga = method == Method::Cga;
    let classifier = if c.cga {
        Some(build_classifier(&c.classifier, class_names, &splits.train, c.seed)?)
    } else {
        None
    };
    let adapted = self_train(&c, source.clone(), source.clone(), classifier.as_deref(), class_names, &splits.train)?;
    let eval = direct_test(&adapted.teacher, &splits.test, &c)?;
    let mut report = adapted.report;
    report.evaluations.push((method.name().to_string(), eval.clone()));
    Ok(MethodOutcome {
        eval,
        report: Some(report),
    })
}

/// Results of every (method, kind) pair.
#[derive(Debug, Clone)]
pub struct MatrixResult {
    pub methods: Vec<Method>,
    pub kinds: Vec<CorruptionKind>,
    pub cells: BTreeMap<(Method, CorruptionKind), MethodOutcome>,
}

impl MatrixResult {
    pub fn map(&self, method: Method, kind: CorruptionKind) -> Option<f64> {
        self.cells.get(&(method, kind)).and_then(|o| o.eval.map)
    }

    /// Mean mAP of `method` over kinds with a defined mAP.
    pub fn mean_map(&self, method: Method) -> Option<f64> {
        let v: Vec<f64> = self.kinds.iter().filter_map(|&k| self.map(method, k)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn table(&self) -> Result<CorruptionTable> {
        let rows: Vec<(String, BTreeMap<String, Option<f64>>)> = self
            .methods
            .iter()
            .map(|&m| {
                (
                    m.label().to_string(),
                    self.kinds.iter().map(|&k| (k.name().to_string(), self.map(m, k))).collect(),
                )
            })
            .collect();
        corruption_table_rows(&rows)
    }
}

/// Adapts on each kind's train split and evaluates on its test split.
/// Cells run concurrently; results do not depend on scheduling.
pub fn run_experiment_matrix(
    methods: &[Method],
    kinds: &[CorruptionKind],
    cfg: &PipelineConfig,
    source: &ToyDetector,
    class_names: &[String],
    splits: &BTreeMap<CorruptionKind, Splits>,
) -> Result<MatrixResult> {
    cfg.validate()?;
    if methods.is_empty() || kinds.is_empty() {
        return Err(Error::config("methods", "need at least one method and one corruption kind"));
    }
    for &k in kinds {
        let s = splits.get(&k).ok_or_else(|| Error::MissingSplit {
            kind: k.name().into(),
            split: "train".into(),
        })?;
        if s.test.is_empty() {
            return Err(Error::MissingSplit {
                kind: k.name().into(),
                split: "test".into(),
            });
        }
        if s.train.is_empty() && methods.iter().any(|&m| m != Method::Direct) {
            return Err(Error::MissingSplit {
                kind: k.name().into(),
                split: "train".into(),
            });
        }
    }
    let jobs: Vec<(Method, CorruptionKind)> = methods.iter().flat_map(|&m| kinds.iter().map(move |&k| (m, k))).collect();
    let outcomes: Vec<MethodOutcome> = jobs
        .par_iter()
        .map(|&(m, k)| run_method(m, cfg, source, class_names, &splits[&k]))
        .collect::<Result<_>>()?;
    Ok(MatrixResult {
        methods: methods.to_vec(),
        kinds: kinds.to_vec(),
        cells: jobs.into_iter().zip(outcomes).collect(),
    })
}

/// CGA adaptation at each λ with otherwise identical settings.
pub fn lambda_sweep(
    cfg: &PipelineConfig,
    lambdas: &[f64],
    source: &ToyDetector,
    class_names: &[String],
    splits: &Splits,
) -> Result<Vec<(f64, EvalResult)>> {
    if lambdas.len() < 2 {
        return Err(Error::config("lambdas", "a sweep needs at least two values"));
    }
    for &l in lambdas {
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::config("lambdas", format!("{l} lies outside [0, 1]")));
        }
    }
    lambdas
        .par_iter()
        .map(|&l| {
            let mut c = cfg.clone();
            c.lambda = l;
            Ok((l, run_method(Method::Cga, &c, source, class_names, splits)?.eval))
        })
        .collect()
}

/// Desk-scale stand-in for the full benchmark: synthetic source scenes, a
/// toy detector trained on them, and corrupted target splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub num_classes: usize,
    pub scenes: SceneConfig,
    pub source_scenes: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub kinds: Vec<String>,
    pub severity: u8,
    pub seeds: Vec<u64>,
    pub lambdas: Vec<f64>,
    pub source: SourceTrainingConfig,
    pub pipeline: PipelineConfig,
}

pub const DESK_EXPERIMENT_TOML: &str = include_str!("../../data/desk_experiment.toml");

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            num_classes: 6,
            scenes: SceneConfig::default(),
            source_scenes: 200,
            train_scenes: 200,
            test_scenes: 100,
            kinds: vec!["fog".into(), "contrast".into(), "frost".into()],
            severity: crate::corrupt::DEFAULT_SEVERITY,
            seeds: vec![0, 1, 2, 3, 4],
            lambdas: vec![0.0, 0.2, 0.5, 0.8, 1.0],
            source: SourceTrainingConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// The tuned desk-scale setup shipped with the crate.
    pub fn desk() -> Self {
        ExperimentConfig::from_toml(DESK_EXPERIMENT_TOML).expect("built-in experiment config is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn corruption_kinds(&self) -> Result<Vec<CorruptionKind>> {
        self.kinds.iter().map(|k| k.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        class_styles(self.num_classes)?;
        self.scenes.validate()?;
        self.source.validate()?;
        self.pipeline.validate().map_err(|e| match e {
            Error::Config { key, message } => Error::config(format!("pipeline.{key}"), message),
            e => e,
        })?;
        if self.source_scenes == 0 || self.train_scenes == 0 || self.test_scenes == 0 {
            return Err(Error::config("train_scenes", "scene counts must be positive"));
        }
        self.corruption_kinds()?;
        if !(1..=5).contains(&self.severity) {
            return Err(Error::config("severity", "must lie in 1..=5"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if self.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::config("lambdas", "values must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        class_styles(self.num_classes).expect("validated").into_iter().map(|s| s.name).collect()
    }
}

/// Everything derived from one seed of an [`ExperimentConfig`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub class_names: Vec<String>,
    pub source: ToyDetector,
    pub source_loss: Vec<f64>,
    pub clean: Splits,
    pub corrupted: BTreeMap<CorruptionKind, Splits>,
    /// Pipeline settings with the seed applied.
    pub pipeline: PipelineConfig,
}

pub fn corrupt_samples(samples: &[Sample], kind: CorruptionKind, severity: u8, seed: u64) -> Result<Vec<Sample>> {
    let spec = CorruptionSpec::new(kind, severity, seed)?;
    samples
        .par_iter()
        .map(|s| {
            Ok(Sample {
                id: s.id.clone(),
                image: corrupt_image(&s.image, &spec, &s.id)?,
                objects: s.objects.clone(),
            })
        })
        .collect()
}

/// Trains a detector on clean synthetic source scenes; returns it with the
/// per-epoch mean loss.
pub fn source_detector(cfg: &ExperimentConfig, seed: u64) -> Result<(ToyDetector, Vec<f64>)> {
    cfg.validate()?;
    let scenes: Vec<Sample> = generate_scenes(cfg.source_scenes, cfg.num_classes, &cfg.scenes, seed, "src")?
        .into_iter()
        .map(|s| s.sample)
        .collect();
    let mut source = ToyDetector::new(cfg.num_classes);
    source.patch_size = cfg.pipeline.detector.patch_size;
    source.objectness_threshold = cfg.pipeline.detector.objectness_threshold;
    let loss = train_source(&mut source, &scenes, &cfg.source, seed)?;
    Ok((source, loss))
}

/// Generates scenes, trains the source detector and corrupts the target
/// splits for one seed.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    cfg.validate()?;
    let k = cfg.num_classes;
    let scenes = |n, prefix| -> Result<Vec<Sample>> {
        Ok(generate_scenes(n, k, &cfg.scenes, seed, prefix)?.into_iter().map(|s| s.sample).collect())
    };
    let (source, source_loss) = source_detector(cfg, seed)?;
    let clean = Splits {
        train: scenes(cfg.train_scenes, "train")?,
        test: scenes(cfg.test_scenes, "test")?,
    };
    let mut corrupted = BTreeMap::new();
    for kind in cfg.corruption_kinds()? {
        corrupted.insert(
            kind,
            Splits {
                train: corrupt_samples(&clean.train, kind, cfg.severity, seed)?,
                test: corrupt_samples(&clean.test, kind, cfg.severity, seed)?,
            },
        );
    }
    let mut pipeline = cfg.pipeline.clone();
    pipeline.seed = seed;
    Ok(Prepared {
        seed,
        class_names: cfg.class_names(),
        source,
        source_loss,
        clean,
        corrupted,
        pipeline,
    })
}

/// Matrix results for one seed plus the clean-domain baseline.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub clean_direct: EvalResult,
    pub matrix: MatrixResult,
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64, methods: &[Method]) -> Result<SeedResult> {
    let p = prepare(cfg, seed)?;
    let kinds = cfg.corruption_kinds()?;
    let clean_direct = direct_test(&p.source, &p.clean.test, &p.pipeline)?;
    let matrix = run_experiment_matrix(methods, &kinds, &p.pipeline, &p.source, &p.class_names, &p.corrupted)?;
    Ok(SeedResult {
        seed,
        clean_direct,
        matrix,
    })
}

/// Mean of the per-seed λ sweeps, averaged over kinds within a seed.
pub fn lambda_sweep_seeds(cfg: &ExperimentConfig, lambdas: &[f64]) -> Result<Vec<(f64, f64)>> {
    let kinds = cfg.corruption_kinds()?;
    let per_seed: Vec<Vec<f64>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let p = prepare(cfg, seed)?;
            let mut sums = vec![0.0; lambdas.len()];
            for k in &kinds {
                for (i, (_, r)) in lambda_sweep(&p.pipeline, lambdas, &p.source, &p.class_names, &p.corrupted[k])?
                    .into_iter()
                    .enumerate()
                {
                    sums[i] += r.map.unwrap_or(0.0) / kinds.len() as f64;
                }
            }
            Ok(sums)
        })
        .collect::<Result<_>>()?;
    Ok(lambdas
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, per_seed.iter().map(|v| v[i]).sum::<f64>() / per_seed.len() as f64))
        .collect())
}

