use std::sync::OnceLock;

use proptest::prelude::*;
use sfod_core::backends::{Detector, Target, ToyDetector};
use sfod_core::corrupt::CorruptionKind;
use sfod_core::pipeline::{
    build_classifier, direct_test, generate_scenes, lambda_sweep, pseudo_labels_for, run_experiment_matrix,
    self_train, ClassifierConfig, ExperimentConfig, Method, PipelineConfig, Prepared, Sample, SceneConfig, Sgd,
    Splits,
};
use sfod_core::pseudo_label::{
    build_prompts, extract_patches, zero_shot_scores, PatchOrigin, PseudoLabel, DEFAULT_TEMPLATE,
};
use sfod_core::Error;

const SMALL: &str = r#"
num_classes = 3
source_scenes = 40
train_scenes = 12
test_scenes = 12
kinds = ["fog"]
seeds = [0]

[scenes]
size = 64
max_objects = 3
min_side = 10
max_side = 18

[source]
epochs = 20
batch_size = 16

[pipeline]
epochs = 2
batch_size = 4
classifier_patch_size = 16
"#;

fn prepared() -> &'static Prepared {
    static P: OnceLock<Prepared> = OnceLock::new();
    P.get_or_init(|| {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        sfod_core::pipeline::prepare(&cfg, 0).unwrap()
    })
}

fn fog() -> &'static Splits {
    &prepared().corrupted[&CorruptionKind::Fog]
}

fn oracle() -> ClassifierConfig {
    ClassifierConfig::Centroid {
        sigma: Some(0.0),
        accuracy: None,
        dim: 16,
        appearance_correlation: 0.0,
        appearance_levels: 4,
        similarity_scale: 1.0,
    }
}

fn labels(cfg: &PipelineConfig, teacher: &ToyDetector, classifier: Option<&ClassifierConfig>) -> Vec<Vec<PseudoLabel>> {
    let p = prepared();
    let zs = classifier.map(|c| build_classifier(c, &p.class_names, &fog().train, 0).unwrap());
    fog()
        .train
        .iter()
        .map(|s| pseudo_labels_for(cfg, teacher, zs.as_deref(), &p.class_names, s, 0).unwrap())
        .collect()
}

/// Pseudo-label accuracy of a frozen teacher over one epoch.
fn frozen_accuracy(
    cfg: &PipelineConfig,
    teacher: &ToyDetector,
    classifier: Option<&ClassifierConfig>,
    samples: &[Sample],
) -> f64 {
    let p = prepared();
    let mut cfg = cfg.clone();
    cfg.alpha = 1.0;
    cfg.epochs = 1;
    let zs = classifier.map(|c| build_classifier(c, &p.class_names, samples, 0).unwrap());
    let out = self_train(&cfg, teacher.clone(), teacher.clone(), zs.as_deref(), &p.class_names, samples).unwrap();
    assert_eq!(out.teacher.parameters(), teacher.parameters());
    out.report.pseudo_label_accuracy().expect("some pseudo-labels")
}

#[test]
fn zero_noise_oracle_is_exact_on_scenes() {
    let k = 6;
    let samples: Vec<Sample> = generate_scenes(100, k, &SceneConfig::default(), 3, "o")
        .unwrap()
        .into_iter()
        .map(|s| s.sample)
        .collect();
    let names: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
    let cls = build_classifier(&oracle(), &names, &samples, 1).unwrap();
    let text = cls.text_embeddings(&build_prompts(&names, DEFAULT_TEMPLATE).unwrap()).unwrap();
    let mut n = 0;
    for s in &samples {
        let boxes: Vec<_> = s.objects.iter().map(|o| o.bbox).collect();
        let batch = extract_patches(&s.image, &boxes, 8);
        let patches: Vec<_> = batch
            .patches
            .into_iter()
            .zip(&batch.kept)
            .map(|(p, &i)| {
                p.with_origin(PatchOrigin {
                    key: format!("{}#{i}", s.id),
                    image_id: s.id.clone(),
                    source_box: boxes[i],
                })
            })
            .collect();
        let scores = zero_shot_scores(&cls.embed_images(&patches).unwrap(), &text, 100.0).unwrap();
        for (row, &i) in batch.kept.iter().enumerate() {
            assert_eq!(scores.argmax_row(row), s.objects[i].class_id);
            n += 1;
        }
    }
    assert!(n > 100);
}

#[test]
fn alpha_one_keeps_the_teacher() {
    let p = prepared();
    let mut cfg = p.pipeline.clone();
    cfg.alpha = 1.0;
    cfg.cga = false;
    let out = self_train(&cfg, p.source.clone(), p.source.clone(), None, &p.class_names, &fog().train).unwrap();
    assert!(out.report.total_pseudo_labels() > 0);
    assert_eq!(out.teacher.parameters(), p.source.parameters());
    assert_ne!(out.student.parameters(), p.source.parameters());
}

#[test]
fn lambda_zero_matches_disabled_cga() {
    let p = prepared();
    let mut with = p.pipeline.clone();
    with.cga = true;
    with.lambda = 0.0;
    let mut without = with.clone();
    without.cga = false;
    let a = labels(&with, &p.source, Some(&oracle()));
    let b = labels(&without, &p.source, None);
    assert_eq!(a, b);
    assert!(a.iter().map(Vec::len).sum::<usize>() > 0);
}

fn swap_classes(d: &ToyDetector, a: usize, b: usize) -> ToyDetector {
    let mut params = d.parameters();
    let w = params.get_mut("cls.weight").unwrap();
    let f = w.shape[1];
    for j in 0..f {
        w.data.swap(a * f + j, b * f + j);
    }
    params.get_mut("cls.bias").unwrap().data.swap(a, b);
    let mut out = d.clone();
    out.load_parameters(&params).unwrap();
    out
}

#[test]
fn oracle_aggregation_repairs_a_mislabeling_teacher() {
    let p = prepared();
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let samples: Vec<Sample> = generate_scenes(40, 3, &cfg.scenes, 9, "m")
        .unwrap()
        .into_iter()
        .map(|s| s.sample)
        .collect();
    let teacher = swap_classes(&p.source, 0, 1);
    let mut cfg = p.pipeline.clone();
    cfg.tau = 0.5;
    cfg.cga = false;
    let plain = frozen_accuracy(&cfg, &teacher, None, &samples);
    cfg.cga = true;
    cfg.lambda = 0.5;
    let guided = frozen_accuracy(&cfg, &teacher, Some(&oracle()), &samples);
    assert!(guided > plain, "guided {guided} plain {plain}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pseudo_label_count_is_non_increasing_in_tau(t1 in 0.05f64..1.0, t2 in 0.05f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let p = prepared();
        let mut cfg = p.pipeline.clone();
        cfg.cga = false;
        cfg.tau = lo;
        let n_lo: usize = labels(&cfg, &p.source, None).iter().map(Vec::len).sum();
        cfg.tau = hi;
        let n_hi: usize = labels(&cfg, &p.source, None).iter().map(Vec::len).sum();
        prop_assert!(n_hi <= n_lo);
    }
}

#[test]
fn reports_and_parameters_are_deterministic() {
    let p = prepared();
    let mut cfg = p.pipeline.clone();
    cfg.cga = true;
    let run = || {
        let zs = build_classifier(&cfg.classifier, &p.class_names, &fog().train, cfg.seed).unwrap();
        self_train(&cfg, p.source.clone(), p.source.clone(), Some(zs.as_ref()), &p.class_names, &fog().train).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.report.to_text(), b.report.to_text());
    assert_eq!(a.teacher.parameters().to_bytes(), b.teacher.parameters().to_bytes());
    assert!(a.report.is_well_formed());
    let rows: usize = a.report.steps.iter().map(|s| s.cga_rows).sum();
    let agree: usize = a.report.steps.iter().map(|s| s.agreements).sum();
    assert!(rows > 0 && agree <= rows);
}

#[test]
fn student_loss_decreases_on_a_fixed_batch() {
    let p = prepared();
    let mut patches = Vec::new();
    let mut targets = Vec::new();
    for s in fog().train.iter().take(4) {
        let boxes: Vec<_> = s.objects.iter().map(|o| o.bbox).collect();
        let batch = extract_patches(&s.image, &boxes, 16);
        for (patch, &i) in batch.patches.into_iter().zip(&batch.kept) {
            patches.push(patch);
            targets.push(Target::Object(s.objects[i].class_id));
        }
        let corner = sfod_core::geometry::OrientedBox::new(6.0, 6.0, 10.0, 10.0, 0.0).unwrap();
        patches.extend(extract_patches(&s.image, &[corner], 16).patches);
        targets.push(Target::Background);
    }
    let mut student = ToyDetector::new(p.class_names.len());
    student.patch_size = 16;
    let mut opt = Sgd::new(p.pipeline.optimizer.clone());
    let mut losses = Vec::new();
    for _ in 0..50 {
        let (loss, grads) = student.loss_and_grad(&patches, &targets).unwrap();
        losses.push(loss.total());
        opt.step(&mut student, &grads).unwrap();
    }
    assert!(losses[49] < losses[0], "{} -> {}", losses[0], losses[49]);
}

#[test]
fn empty_inputs() {
    let p = prepared();
    assert_eq!(direct_test(&p.source, &[], &p.pipeline).unwrap().map, None);
    let mut cfg = p.pipeline.clone();
    cfg.cga = false;
    let out = self_train(&cfg, p.source.clone(), p.source.clone(), None, &p.class_names, &[]).unwrap();
    assert!(out.report.steps.is_empty());
    assert_eq!(out.teacher.parameters(), p.source.parameters());
}

#[test]
fn matrix_reports_the_missing_kind() {
    let p = prepared();
    let err = run_experiment_matrix(
        &[Method::Direct],
        &[CorruptionKind::Fog, CorruptionKind::Frost],
        &p.pipeline,
        &p.source,
        &p.class_names,
        &p.corrupted,
    )
    .unwrap_err();
    match err {
        Error::MissingSplit { kind, .. } => assert_eq!(kind, "frost"),
        e => panic!("{e}"),
    }
}

#[test]
fn single_cell_matrix_gives_a_one_by_one_table() {
    let p = prepared();
    let r = run_experiment_matrix(
        &[Method::Direct],
        &[CorruptionKind::Fog],
        &p.pipeline,
        &p.source,
        &p.class_names,
        &p.corrupted,
    )
    .unwrap();
    let t = r.table().unwrap();
    assert_eq!(t.kinds, [CorruptionKind::Fog]);
    assert_eq!(t.rows.len(), 1);
    assert_eq!(t.rows[0].values.len(), 1);
    assert_eq!(t.rows[0].mean, t.rows[0].values[0]);
    let direct = direct_test(&p.source, &fog().test, &p.pipeline).unwrap();
    assert_eq!(r.map(Method::Direct, CorruptionKind::Fog), direct.map);
}

#[test]
fn corruption_lowers_direct_test_accuracy() {
    let p = prepared();
    let clean = direct_test(&p.source, &p.clean.test, &p.pipeline).unwrap().map.unwrap();
    let foggy = direct_test(&p.source, &fog().test, &p.pipeline).unwrap().map.unwrap();
    assert!(clean > 0.5, "clean mAP {clean}");
    assert!(foggy < clean, "fog {foggy} clean {clean}");
}

#[test]
fn sweep_needs_two_values_in_range() {
    let p = prepared();
    let run = |ls: &[f64]| lambda_sweep(&p.pipeline, ls, &p.source, &p.class_names, fog());
    assert!(matches!(run(&[0.5]), Err(Error::Config { .. })));
    assert!(matches!(run(&[0.0, 1.5]), Err(Error::Config { .. })));
}

#[test]
fn sample_ids_must_be_keyable() {
    let p = prepared();
    let mut cfg = p.pipeline.clone();
    cfg.cga = false;
    let mut bad = fog().train[..1].to_vec();
    bad[0].id = "has space".into();
    assert!(self_train(&cfg, p.source.clone(), p.source.clone(), None, &p.class_names, &bad).is_err());
    let wrong_classes = vec!["a".to_string()];
    assert!(matches!(
        self_train(&cfg, p.source.clone(), p.source.clone(), None, &wrong_classes, &fog().train),
        Err(Error::ClassCount { .. })
    ));
}
