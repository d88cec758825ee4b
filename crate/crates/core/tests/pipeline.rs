use hybridboost::data::{resize_bilinear, synth_dataset, write_feature_file, SynthKind};
use hybridboost::fusion::FeatureMatrix;
use hybridboost::hog::{hog_features, HogConfig};
use hybridboost::pipeline::{emit_artifacts, run_experiment, split_of, ChainMode, DataSource, ExperimentConfig, Phase};
use hybridboost::Error;

fn hog_only(phase: Phase, kind: SynthKind, n: usize, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::synth(phase, kind, n, seed);
    c.image_size = 32;
    c.source.synth.as_mut().unwrap().image_size = 32;
    c.use_deep = false;
    c
}

fn tiny_cnn(c: &mut ExperimentConfig) {
    c.cnn.conv_channels = vec![2; 6];
    c.cnn.fc1_width = 8;
    c.train.epochs = 1;
}

#[test]
fn detect_artifacts_are_complete() {
    let cfg = hog_only(Phase::Detect, SynthKind::Detect2, 20, 3);
    let out = run_experiment(&cfg).unwrap();
    let body = &out.report.body;
    assert_eq!(body.class_names, ["normal", "tumor"]);
    assert_eq!(body.positive_class.as_deref(), Some("tumor"));
    assert_eq!(body.split.train + body.split.validation + body.split.test, 40);
    let names: Vec<&str> = body.methods.iter().map(|m| m.name.as_str()).collect();
    assert_eq!(
        names,
        ["svm-rbf@fused", "mlp@fused", "adaboost@fused", "ensemble@fused"]
    );
    for m in &body.methods {
        for v in [m.metrics.accuracy, m.metrics.recall, m.metrics.precision, m.metrics.f1] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!((-1.0..=1.0).contains(&m.metrics.mcc));
    }

    let dir = tempfile::tempdir().unwrap();
    emit_artifacts(&out, dir.path()).unwrap();
    for f in ["report.json", "summary.csv", "roc.csv", "pr.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    for f in body.files.scatter.iter().chain(&body.files.models) {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("method,acc,rec,pre,f1,mcc,auc_roc,auc_pr"));
    assert_eq!(lines.count(), body.methods.len());
    let scatter = std::fs::read_to_string(dir.path().join("scatter_raw.csv")).unwrap();
    assert_eq!(scatter.lines().count(), body.split.test + 1);

    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["body_sha256"], out.report.body_sha256.as_str());
    assert!(report["body"]["paper_reference"]["rows"].is_array());
}

#[test]
fn identical_configs_hash_identically() {
    let mut cfg = hog_only(Phase::Detect, SynthKind::Detect2, 12, 9);
    cfg.image_size = 64;
    cfg.source.synth.as_mut().unwrap().image_size = 64;
    cfg.use_deep = true;
    tiny_cnn(&mut cfg);
    let a = run_experiment(&cfg).unwrap();
    cfg.output_dir = Some("elsewhere".into());
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.report.body_sha256, b.report.body_sha256);
    assert_eq!(a.models, b.models);
    assert!(a.models.iter().any(|(n, _)| n == "models/cnn.brnr"));
    cfg.seed = 10;
    let c = run_experiment(&cfg).unwrap();
    assert_ne!(a.report.body_sha256, c.report.body_sha256);
}

fn feature_files(dir: &std::path::Path, poison: Option<&[usize]>) -> Vec<std::path::PathBuf> {
    let ds = synth_dataset(SynthKind::Detect2, 15, 32, 4).unwrap();
    let hog = hog_features(&ds.images, &ds.labels, &HogConfig::default()).unwrap();
    let rows: Vec<Vec<f64>> = ds
        .images
        .iter()
        .map(|im| resize_bilinear(im, 8, 8).unwrap().pixels().to_vec())
        .collect();
    let pix = FeatureMatrix::from_rows(&rows, ds.labels.clone(), "pix").unwrap();
    let mut paths = Vec::new();
    for (name, mut x) in [("hog", hog), ("pix", pix)] {
        if let Some(rows) = poison {
            let mut v = x.values().to_vec();
            for &r in rows {
                v[r * x.dim()..(r + 1) * x.dim()].iter_mut().for_each(|e| *e = 1e6);
            }
            x = FeatureMatrix::new(x.n(), x.dim(), v, x.labels().to_vec(), name).unwrap();
        }
        let p = dir.join(format!("{name}.dbfs"));
        write_feature_file(&x, &p).unwrap();
        paths.push(p);
    }
    paths
}

#[test]
fn poisoned_test_rows_do_not_reach_training() {
    let dir = tempfile::tempdir().unwrap();
    let source = DataSource {
        feature_files: Some(feature_files(dir.path(), None)),
        ..DataSource::default()
    };
    let mut cfg = ExperimentConfig::new(Phase::Detect, source, 21);
    cfg.class_names = Some(vec!["normal".into(), "tumor".into()]);
    let clean = run_experiment(&cfg).unwrap();
    assert!(clean.report.body.split.test > 0);

    // poison every row that is not used for fitting and retrain
    let poisoned_dir = tempfile::tempdir().unwrap();
    let all: Vec<usize> = (0..30).collect();
    let mut poisoned = cfg.clone();
    poisoned.source.feature_files = Some(feature_files(poisoned_dir.path(), Some(&[])));
    assert_eq!(run_experiment(&poisoned).unwrap().models, clean.models);

    let fit = split_of(&cfg).unwrap().fit_rows();
    assert_eq!(fit.len() + clean.report.body.split.test, 30);
    let test: Vec<usize> = all.into_iter().filter(|r| !fit.contains(r)).collect();
    poisoned.source.feature_files = Some(feature_files(poisoned_dir.path(), Some(&test)));
    let dirty = run_experiment(&poisoned).unwrap();
    assert_eq!(dirty.models, clean.models, "training must only see fit rows");
}

#[test]
fn classify_rejects_two_class_data() {
    let cfg = hog_only(Phase::Classify, SynthKind::Detect2, 10, 1);
    assert!(matches!(run_experiment(&cfg), Err(Error::Data(_))));
}

#[test]
fn classify_reports_ablations_with_macro_metrics() {
    let mut cfg = hog_only(Phase::Classify, SynthKind::Classify3, 12, 2);
    cfg.image_size = 64;
    cfg.source.synth.as_mut().unwrap().image_size = 64;
    cfg.use_deep = true;
    tiny_cnn(&mut cfg);
    let out = run_experiment(&cfg).unwrap();
    let body = &out.report.body;
    let names: Vec<&str> = body.methods.iter().map(|m| m.name.as_str()).collect();
    assert_eq!(names, ["svm-poly2@fused", "svm-poly2@deep", "svm-poly2@hog"]);
    for m in &body.methods {
        assert_eq!(m.per_class.as_ref().unwrap().len(), 3);
    }
    assert!(body.positive_class.is_none());
    assert_eq!(out.roc.len() % 3, 0);
}

#[test]
fn chained_mode_keeps_phases_apart() {
    let mut cfg = ExperimentConfig::synth(Phase::Classify, SynthKind::Analysis4, 10, 5);
    tiny_cnn(&mut cfg);
    cfg.chain = ChainMode::Chained;
    cfg.single_space_members = false;
    let out = run_experiment(&cfg).unwrap();
    let body = &out.report.body;
    let chain = body.chain.as_ref().unwrap();
    assert!(chain.forwarded <= chain.detect_test_rows);
    assert!(chain.forwarded_normals <= chain.forwarded);
    assert_eq!(body.split.test, chain.forwarded - chain.forwarded_normals);
    assert!(!chain.classification_training_classes.iter().any(|c| c == "normal"));
    assert!(body.method("detect:ensemble@fused").is_some());
    assert!(body.method("svm-poly2@fused").is_some());
    assert!(out.models.iter().any(|(n, _)| n == "models/cnn-detect.brnr"));
    assert!(out.models.iter().any(|(n, _)| n == "models/cnn-classify.brnr"));
}
