use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sfod_core::backends::{
    read_embedding_file, read_embedding_text, write_embedding_file, write_embedding_text, Detector, EmbeddingFile,
    ToyDetector, EMBEDDING_MAGIC,
};
use sfod_core::corrupt::{generate_dataset, CorruptionKind, EntryStatus, SeverityTable};
use sfod_core::eval::{corruption_table_rows, evaluate, read_detection_dir, read_ground_truth_dir, EvalResult};
use sfod_core::pipeline::{
    build_classifier, direct_test, generate_scenes, lambda_sweep_seeds, load_dataset, prepare, run_seed, save_dataset,
    self_train, source_detector, toml_error, Dataset, ExperimentConfig, Method, Sample, Splits,
};
use sfod_core::tensor::ParamSet;
use sfod_core::{Error, Result};

use crate::{Command, Common, EmbedAction};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config";
pub const REPORT_FILE: &str = "report.txt";
pub const SOURCE_PARAMS_FILE: &str = "source.params";
pub const TEACHER_PARAMS_FILE: &str = "teacher.params";
pub const STUDENT_PARAMS_FILE: &str = "student.params";
pub const SWEEP_FILE: &str = "sweep.tsv";
pub const TABLE_FILE: &str = "table.txt";
pub const TABLE_TSV_FILE: &str = "table.tsv";
pub const SEEDS_FILE: &str = "seeds.tsv";
pub const EVAL_FILE: &str = "eval.txt";

/// Everything a run depends on. Written to `resolved_config` in the output
/// directory and accepted back by `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prefix: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    src: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    table: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dets: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gt: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    classes: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    methods: Option<String>,
    experiment: ExperimentConfig,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { key, message } => Error::config(format!("{prefix}.{key}"), message),
        e => e,
    }
}

/// A resolved run file (with an `[experiment]` table) or a bare experiment
/// config.
fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig {
            experiment: ExperimentConfig::desk(),
            ..Default::default()
        });
    };
    let text = read_text(path)?;
    let table: toml::Table = text.parse().map_err(|e| toml_error(&text, &e))?;
    if table.contains_key("experiment") {
        let run: RunConfig = toml::from_str(&text).map_err(|e| toml_error(&text, &e))?;
        run.experiment.validate().map_err(|e| prefixed("experiment", e))?;
        Ok(run)
    } else {
        Ok(RunConfig {
            experiment: ExperimentConfig::from_toml(&text)?,
            ..Default::default()
        })
    }
}

fn require<T: Clone>(value: &Option<T>, key: &str) -> Result<T> {
    value.clone().ok_or_else(|| Error::config(key, format!("missing; pass --{key}")))
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let out = require(&common.out, "out")?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

fn finish_config(run: &mut RunConfig, command: &str, common: &Common) -> Result<()> {
    run.command = Some(command.to_string());
    if let Some(seed) = common.seed {
        run.experiment.seeds = vec![seed];
        run.experiment.pipeline.seed = seed;
    }
    run.experiment.validate()
}

fn save_resolved(out: &Path, run: &RunConfig) -> Result<()> {
    let text = toml::to_string(run).map_err(|e| Error::Invalid(format!("cannot serialize config: {e}")))?;
    write(&out.join(RESOLVED_CONFIG_FILE), text)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

fn parse_lambdas(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|_| Error::config("lambdas", format!("`{p}` is not a number"))))
        .collect()
}

fn read_class_names(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn run(common: &Common, command: Command) -> Result<()> {
    let mut run = load_config(common.config.as_deref())?;
    match command {
        Command::Corrupt {
            src,
            kinds,
            severity,
            table,
        } => {
            run.src = src.or(run.src);
            run.table = table.or(run.table);
            if let Some(k) = kinds {
                run.experiment.kinds = CorruptionKind::parse_list(&k)?.iter().map(|k| k.name().to_string()).collect();
            }
            if let Some(s) = severity {
                run.experiment.severity = s;
            }
            finish_config(&mut run, "corrupt", common)?;
            corrupt(common, &run)
        }
        Command::Scenes { count, classes, prefix } => {
            run.count = count.or(run.count).or(Some(100));
            run.prefix = prefix.or(run.prefix).or(Some("scene".into()));
            if let Some(k) = classes {
                run.experiment.num_classes = k;
            }
            finish_config(&mut run, "scenes", common)?;
            scenes(common, &run)
        }
        Command::Adapt {
            lambda,
            no_cga,
            kind,
            target,
            source,
        } => {
            run.target = target.or(run.target);
            run.source = source.or(run.source);
            if let Some(l) = lambda {
                run.experiment.pipeline.lambda = l;
            }
            if no_cga {
                run.experiment.pipeline.cga = false;
            }
            if let Some(k) = kind {
                run.experiment.kinds = vec![k.parse::<CorruptionKind>()?.name().to_string()];
            }
            run.experiment.kinds.truncate(1);
            run.experiment.seeds.truncate(1);
            if let Some(&s) = run.experiment.seeds.first() {
                run.experiment.pipeline.seed = s;
            }
            finish_config(&mut run, "adapt", common)?;
            adapt(common, &run)
        }
        Command::Eval { dets, gt, classes, iou } => {
            run.dets = dets.or(run.dets);
            run.gt = gt.or(run.gt);
            run.classes = classes.or(run.classes);
            if let Some(t) = iou {
                run.experiment.pipeline.eval.iou = t;
            }
            finish_config(&mut run, "eval", common)?;
            eval(common, &run)
        }
        Command::Sweep { lambdas } => {
            if let Some(l) = lambdas {
                run.experiment.lambdas = parse_lambdas(&l)?;
            }
            if run.experiment.lambdas.len() < 2 {
                return Err(Error::config("lambdas", "a sweep needs at least two values"));
            }
            finish_config(&mut run, "sweep", common)?;
            sweep(common, &run)
        }
        Command::Matrix { kinds, methods } => {
            if let Some(k) = kinds {
                run.experiment.kinds = CorruptionKind::parse_list(&k)?.iter().map(|k| k.name().to_string()).collect();
            }
            run.methods = methods.or(run.methods).or(Some("direct,self_train,cga".into()));
            Method::parse_list(run.methods.as_deref().unwrap_or_default())?;
            finish_config(&mut run, "matrix", common)?;
            matrix(common, &run)
        }
        Command::EmbedIo { action } => embed_io(action),
    }
}

fn corrupt(common: &Common, run: &RunConfig) -> Result<()> {
    let src = require(&run.src, "src")?;
    let out = out_dir(common)?;
    let table = match &run.table {
        Some(p) => SeverityTable::from_toml(&read_text(p)?)?,
        None => SeverityTable::builtin(),
    };
    let e = &run.experiment;
    save_resolved(&out, run)?;
    let manifest = generate_dataset(&src, &out, &e.corruption_kinds()?, e.severity, e.seeds[0], &table)?;
    let failed = manifest.failures().count();
    let written = manifest.entries.iter().filter(|m| m.status == EntryStatus::Ok).count();
    let copied = manifest.entries.iter().filter(|m| m.status == EntryStatus::Copied).count();
    println!("corrupted {written} copied {copied} failed {failed}");
    if failed > 0 {
        return Err(Error::Invalid(format!("{failed} files failed; see the manifest in {}", out.display())));
    }
    Ok(())
}

fn scenes(common: &Common, run: &RunConfig) -> Result<()> {
    let out = out_dir(common)?;
    let e = &run.experiment;
    let count = require(&run.count, "count")?;
    let prefix = require(&run.prefix, "prefix")?;
    save_resolved(&out, run)?;
    let samples: Vec<Sample> = generate_scenes(count, e.num_classes, &e.scenes, e.seeds[0], &prefix)?
        .into_iter()
        .map(|s| s.sample)
        .collect();
    save_dataset(
        &out,
        &Dataset {
            class_names: e.class_names(),
            samples,
        },
    )?;
    println!("wrote {count} scenes");
    Ok(())
}

fn adapt(common: &Common, run: &RunConfig) -> Result<()> {
    let out = out_dir(common)?;
    let e = &run.experiment;
    let seed = e.seeds[0];
    save_resolved(&out, run)?;
    let load_source = |source: &mut ToyDetector| -> Result<()> {
        if let Some(p) = &run.source {
            source.load_parameters(&ParamSet::load(p)?)?;
        }
        Ok(())
    };
    let (class_names, source, splits, pipeline) = match &run.target {
        None => {
            let p = prepare(e, seed)?;
            let kind = e.corruption_kinds()?[0];
            let mut source = p.source;
            load_source(&mut source)?;
            let splits = p.corrupted.into_values().next().ok_or_else(|| Error::MissingSplit {
                kind: kind.name().into(),
                split: "train".into(),
            })?;
            (p.class_names, source, splits, p.pipeline)
        }
        Some(dir) => {
            let data = load_dataset(dir)?;
            if data.class_names.len() != e.num_classes {
                return Err(Error::config(
                    "experiment.num_classes",
                    format!("target has {} classes, config has {}", data.class_names.len(), e.num_classes),
                ));
            }
            let mut source = if run.source.is_some() {
                let mut d = ToyDetector::new(e.num_classes);
                d.patch_size = e.pipeline.detector.patch_size;
                d.objectness_threshold = e.pipeline.detector.objectness_threshold;
                d
            } else {
                source_detector(e, seed)?.0
            };
            load_source(&mut source)?;
            let splits = Splits {
                train: data.samples.clone(),
                test: data.samples,
            };
            (data.class_names, source, splits, e.pipeline.clone())
        }
    };
    let classifier = if pipeline.cga {
        Some(build_classifier(&pipeline.classifier, &class_names, &splits.train, seed)?)
    } else {
        None
    };
    let before = direct_test(&source, &splits.test, &pipeline)?;
    let adapted = self_train(
        &pipeline,
        source.clone(),
        source.clone(),
        classifier.as_deref(),
        &class_names,
        &splits.train,
    )?;
    let after = direct_test(&adapted.teacher, &splits.test, &pipeline)?;
    let mut report = adapted.report;
    report.evaluations.push(("source".into(), before.clone()));
    report.evaluations.push(("adapted".into(), after.clone()));
    write(&out.join(REPORT_FILE), report.to_text())?;
    source.parameters().save(&out.join(SOURCE_PARAMS_FILE))?;
    adapted.teacher.parameters().save(&out.join(TEACHER_PARAMS_FILE))?;
    adapted.student.parameters().save(&out.join(STUDENT_PARAMS_FILE))?;
    println!(
        "steps {} pseudo_labels {} source_map {} adapted_map {}",
        report.steps.len(),
        report.total_pseudo_labels(),
        fmt_opt(before.map),
        fmt_opt(after.map)
    );
    Ok(())
}

fn eval_text(class_names: &[String], r: &EvalResult) -> String {
    let mut s = String::from("class\tap\tgt\tdet\ttp\tfp\n");
    for ((name, ap), c) in class_names.iter().zip(&r.ap).zip(&r.counts) {
        let _ = writeln!(s, "{name}\t{}\t{}\t{}\t{}\t{}", fmt_opt(*ap), c.gt, c.det, c.tp, c.fp);
    }
    let _ = writeln!(s, "mAP\t{}", fmt_opt(r.map));
    s
}

fn eval(common: &Common, run: &RunConfig) -> Result<()> {
    let dets_dir = require(&run.dets, "dets")?;
    let gt_dir = require(&run.gt, "gt")?;
    let gts = read_ground_truth_dir(&gt_dir)?;
    let mut dets = read_detection_dir(&dets_dir)?;
    if let Some(id) = dets.keys().find(|id| !gts.contains_key(*id)) {
        return Err(Error::Invalid(format!("detections for `{id}` have no ground-truth file")));
    }
    let class_names = match &run.classes {
        Some(p) => read_class_names(p)?,
        None => run.experiment.class_names(),
    };
    let (d, g): (Vec<_>, Vec<_>) = gts.into_iter().map(|(id, g)| (dets.remove(&id).unwrap_or_default(), g)).unzip();
    let result = evaluate(&d, &g, class_names.len(), &run.experiment.pipeline.eval)?;
    let text = eval_text(&class_names, &result);
    if common.out.is_some() {
        let out = out_dir(common)?;
        save_resolved(&out, run)?;
        write(&out.join(EVAL_FILE), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn sweep(common: &Common, run: &RunConfig) -> Result<()> {
    let out = out_dir(common)?;
    save_resolved(&out, run)?;
    let e = &run.experiment;
    let rows = lambda_sweep_seeds(e, &e.lambdas)?;
    let mut text = String::from("lambda\tmean_map\n");
    for (l, m) in rows {
        let _ = writeln!(text, "{l}\t{m:.6}");
    }
    write(&out.join(SWEEP_FILE), &text)?;
    print!("{text}");
    Ok(())
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn matrix(common: &Common, run: &RunConfig) -> Result<()> {
    let out = out_dir(common)?;
    save_resolved(&out, run)?;
    let e = &run.experiment;
    let methods = Method::parse_list(run.methods.as_deref().unwrap_or_default())?;
    let kinds = e.corruption_kinds()?;
    let mut per_seed = String::from("seed\tmethod\tkind\tmap\n");
    let mut cells: BTreeMap<(Method, CorruptionKind), Vec<f64>> = BTreeMap::new();
    let mut clean = Vec::new();
    for &seed in &e.seeds {
        let r = run_seed(e, seed, &methods)?;
        clean.extend(r.clean_direct.map);
        let _ = writeln!(per_seed, "{seed}\tclean_direct\tclean\t{}", fmt_opt(r.clean_direct.map));
        for &m in &methods {
            for &k in &kinds {
                let v = r.matrix.map(m, k);
                let _ = writeln!(per_seed, "{seed}\t{}\t{}\t{}", m.name(), k.name(), fmt_opt(v));
                cells.entry((m, k)).or_default().extend(v);
            }
        }
    }
    let rows: Vec<(String, BTreeMap<String, Option<f64>>)> = methods
        .iter()
        .map(|&m| {
            (
                m.label().to_string(),
                kinds.iter().map(|&k| (k.name().to_string(), cells.get(&(m, k)).and_then(|v| mean(v)))).collect(),
            )
        })
        .collect();
    let table = corruption_table_rows(&rows)?;
    write(&out.join(TABLE_FILE), table.text())?;
    write(&out.join(TABLE_TSV_FILE), table.tsv())?;
    write(&out.join(SEEDS_FILE), &per_seed)?;
    print!("{}", table.text());
    println!("clean direct-test mAP {}", fmt_opt(mean(&clean)));
    Ok(())
}

fn read_any_embedding(path: &Path) -> Result<EmbeddingFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(EMBEDDING_MAGIC) {
        read_embedding_file(path)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::format("embedding file", "neither binary nor text"))?;
        read_embedding_text(&text)
    }
}

fn embed_io(action: EmbedAction) -> Result<()> {
    match action {
        EmbedAction::Validate { file, classes } => {
            let f = read_any_embedding(&file)?;
            let m = &f.matrix;
            if m.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::format("embedding file", "non-finite value"));
            }
            if let Some(keys) = &f.keys {
                let mut seen = std::collections::HashSet::new();
                if let Some(k) = keys.iter().find(|k| !seen.insert(k.as_str())) {
                    return Err(Error::format("embedding file", format!("duplicate key `{k}`")));
                }
            }
            if let Some(p) = classes {
                let names = read_class_names(&p)?;
                if names.len() != m.rows {
                    return Err(Error::ClassCount {
                        in_file: m.rows,
                        expected: names.len(),
                    });
                }
                if f.keys.as_ref().is_some_and(|k| *k != names) {
                    return Err(Error::format("embedding file", "keys differ from the class list"));
                }
            }
            println!(
                "rows {} dim {} normalized {} keyed {}",
                m.rows,
                m.dim,
                m.normalized as u8,
                f.keys.is_some() as u8
            );
            Ok(())
        }
        EmbedAction::Convert { input, output } => {
            let f = read_any_embedding(&input)?;
            if output.extension().is_some_and(|e| e == "txt") {
                write(&output, write_embedding_text(&f)?)
            } else {
                write_embedding_file(&output, &f)
            }
        }
    }
}
