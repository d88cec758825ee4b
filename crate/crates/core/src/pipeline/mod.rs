//! Config-driven orchestration of both phases.
//!
//! A run is pure: [`run_experiment`] returns a [`RunOutcome`] holding the
//! report, curves, scatter data and serialized models, and
//! [`emit_artifacts`] writes them into a run directory. The report body is
//! hashed; wall-clock timings live outside it so identical configs give
//! identical hashes.

pub mod config;

pub use config::{ChainMode, DataSource, ExperimentConfig, Phase, SynthSpec};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::{
    classifier_predict, encode_model, train_classifier, ClassifierConfig, ClassifierModel, EnsembleModel,
};
use crate::data::{
    load_image_dir, read_feature_file, resize_bilinear, stratified_split, synth_dataset, Dataset, SplitIndices,
};
use crate::error::{Error, Result};
use crate::fusion::{concat_features, pca_top_k_with, FeatureMatrix, NormalizerStats, PcaOptions};
use crate::hog::hog_features;
use crate::metrics::{
    binary_metrics, confusion_counts, multiclass_metrics, ranking_curves, write_curves_csv, CurveKind, CurveSeries,
    MetricMode, MetricReport,
};
use crate::renet::{build_model, extract_deep_features, train, TrainHistory};

pub const NORMAL_CLASS: &str = "normal";
pub const FUSED_SPACE: &str = "fused";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    /// `<classifier>@<space>`, with a `detect:` prefix for the first stage of
    /// a chained run.
    pub name: String,
    pub space: String,
    /// member, ensemble, single-space, fused or ablation.
    pub role: String,
    /// Binary metrics, or macro averages for more than two classes.
    pub metrics: MetricReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<Vec<MetricReport>>,
    /// Macro one-vs-rest average for more than two classes.
    pub auc_roc: Option<f64>,
    pub auc_pr: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceSummary {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnSummary {
    pub stage: String,
    pub param_count: usize,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub detect_test_rows: usize,
    /// Test rows predicted tumor and passed on.
    pub forwarded: usize,
    /// Forwarded rows whose ground truth is normal; they cannot be scored
    /// by the tumor classifier and are excluded from its metrics.
    pub forwarded_normals: usize,
    /// Tumor test rows the detector called normal.
    pub missed_tumors: usize,
    pub classification_training_rows: usize,
    pub classification_training_classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperRow {
    pub method: String,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub mcc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperReference {
    pub note: String,
    pub rows: Vec<PaperRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactFiles {
    pub summary: String,
    pub roc: String,
    pub pr: String,
    pub scatter: Vec<String>,
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub library_version: String,
    pub phase: Phase,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub class_names: Vec<String>,
    pub positive_class: Option<String>,
    pub split: SplitSummary,
    pub feature_spaces: Vec<SpaceSummary>,
    pub normalization: String,
    pub metric_mode: MetricMode,
    pub cnn: Vec<CnnSummary>,
    pub methods: Vec<MethodReport>,
    pub chain: Option<ChainSummary>,
    pub files: ArtifactFiles,
    pub paper_reference: PaperReference,
    pub converged: bool,
    pub notes: Vec<String>,
    pub warnings: Vec<String>,
}

impl ReportBody {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("report body serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub body: ReportBody,
    pub body_sha256: String,
    pub meta: RunMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSpace {
    pub space: String,
    /// `(pc1, pc2, label)` per test row.
    pub rows: Vec<(f64, f64, usize)>,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub roc: Vec<(String, CurveSeries)>,
    pub pr: Vec<(String, CurveSeries)>,
    pub scatter: Vec<ScatterSpace>,
    /// File name (relative to the run directory) and bytes.
    pub models: Vec<(String, Vec<u8>)>,
}

#[derive(Default)]
struct Ctx {
    methods: Vec<MethodReport>,
    roc: Vec<(String, CurveSeries)>,
    pr: Vec<(String, CurveSeries)>,
    models: Vec<(String, Vec<u8>)>,
    cnn: Vec<CnnSummary>,
    warnings: Vec<String>,
    timings: BTreeMap<String, f64>,
}

impl Ctx {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f(self);
        *self.timings.entry(stage.to_string()).or_default() += t.elapsed().as_secs_f64();
        out
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }
}

enum Source {
    Images(Dataset),
    Features(Vec<FeatureMatrix>, Vec<String>),
}

fn load_source(cfg: &ExperimentConfig) -> Result<Source> {
    let s = &cfg.source;
    if let Some(sy) = &s.synth {
        return Ok(Source::Images(synth_dataset(
            sy.kind,
            sy.n_per_class,
            sy.image_size,
            sy.seed.unwrap_or(cfg.seed),
        )?));
    }
    if let Some(dir) = &s.image_dir {
        return Ok(Source::Images(load_image_dir(dir)?.resized(cfg.image_size)?));
    }
    let files = s.feature_files.as_ref().expect("validated source");
    let spaces = files.iter().map(|p| read_feature_file(p)).collect::<Result<Vec<_>>>()?;
    // fails with the offending part named if rows or labels disagree
    concat_features(&spaces)?;
    let k = spaces[0].num_classes();
    let names = match &cfg.class_names {
        Some(n) if n.len() >= k => n.clone(),
        Some(n) => {
            return Err(Error::data(format!(
                "{} class names given but labels reach {}",
                n.len(),
                k - 1
            )));
        }
        None => (0..k).map(|c| format!("class{c}")).collect(),
    };
    Ok(Source::Features(spaces, names))
}

/// Rows kept, their new labels, and the new class names for a phase.
struct LabelView {
    rows: Vec<usize>,
    labels: Vec<usize>,
    names: Vec<String>,
}

fn phase_view(labels: &[usize], names: &[String], phase: Phase) -> Result<LabelView> {
    let normal = names.iter().position(|n| n == NORMAL_CLASS);
    match phase {
        Phase::Detect => {
            let (labels, names) = match (names.len(), normal) {
                (2, None) => (labels.to_vec(), names.to_vec()),
                (_, Some(i)) if names.len() >= 2 => {
                    let other = if names.len() == 2 {
                        names[1 - i].clone()
                    } else {
                        "tumor".to_string()
                    };
                    (
                        labels.iter().map(|&l| (l != i) as usize).collect(),
                        vec![NORMAL_CLASS.to_string(), other],
                    )
                }
                _ => {
                    return Err(Error::data(format!(
                        "detection needs two classes or a '{NORMAL_CLASS}' class, found {names:?}"
                    )))
                }
            };
            Ok(LabelView {
                rows: (0..labels.len()).collect(),
                labels,
                names,
            })
        }
        Phase::Classify => {
            let keep: Vec<usize> = (0..labels.len()).filter(|&r| Some(labels[r]) != normal).collect();
            let remap = |l: usize| match normal {
                Some(i) if l > i => l - 1,
                _ => l,
            };
            let names: Vec<String> = names.iter().filter(|n| n.as_str() != NORMAL_CLASS).cloned().collect();
            if names.len() < 3 {
                return Err(Error::data(format!(
                    "classification needs at least 3 tumor classes, found {names:?}"
                )));
            }
            Ok(LabelView {
                labels: keep.iter().map(|&r| remap(labels[r])).collect(),
                rows: keep,
                names,
            })
        }
    }
}

fn view_dataset(ds: &Dataset, v: &LabelView) -> Result<Dataset> {
    let sub = ds.subset(&v.rows);
    Dataset::new(sub.images, v.labels.clone(), v.names.clone())
}

fn view_features(x: &FeatureMatrix, rows: &[usize], labels: &[usize]) -> Result<FeatureMatrix> {
    let sub = x.select(rows);
    FeatureMatrix::new(
        sub.n(),
        sub.dim(),
        sub.values().to_vec(),
        labels.to_vec(),
        sub.source_tag.clone(),
    )
}

/// Normalized feature spaces over all rows of one stage.
struct Prepared {
    names: Vec<String>,
    labels: Vec<usize>,
    split: SplitIndices,
    spaces: Vec<FeatureMatrix>,
    raw: Option<FeatureMatrix>,
}

impl Prepared {
    fn fused(&self) -> Result<FeatureMatrix> {
        Ok(concat_features(&self.spaces)?.with_tag(FUSED_SPACE))
    }
}

fn normalize_blocks(spaces: Vec<FeatureMatrix>, fit_rows: &[usize]) -> Result<Vec<FeatureMatrix>> {
    spaces
        .into_iter()
        .map(|s| NormalizerStats::fit(&s.select(fit_rows))?.apply(&s))
        .collect()
}

fn mix(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn prepare_images(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    split: SplitIndices,
    stage: &str,
    ctx: &mut Ctx,
) -> Result<Prepared> {
    let mut spaces = Vec::new();
    if cfg.use_deep {
        let cnn_cfg = crate::renet::BrainReNetConfig {
            num_classes: ds.num_classes(),
            ..cfg.cnn.clone()
        };
        let tc = crate::renet::TrainConfig {
            shuffle_seed: mix(cfg.train.shuffle_seed, cfg.seed),
            ..cfg.train.clone()
        };
        let (model, history) = ctx.time("cnn_train", |_| {
            let model = build_model(&cnn_cfg, cfg.seed)?;
            train(
                &model,
                &ds.subset(&split.train),
                &ds.subset(&split.validation),
                &tc,
                mix(cfg.seed, 1),
            )
        })?;
        let file = if stage.is_empty() {
            "models/cnn.brnr".to_string()
        } else {
            format!("models/cnn-{stage}.brnr")
        };
        ctx.models.push((file, crate::renet::encode_model(&model)?));
        ctx.cnn.push(CnnSummary {
            stage: if stage.is_empty() { "main".into() } else { stage.into() },
            param_count: cnn_cfg.param_count()?,
            history,
        });
        let deep = ctx.time("deep_features", |_| {
            extract_deep_features(&model, &ds.images, &ds.labels)
        })?;
        spaces.push(deep.with_tag("deep"));
    }
    if cfg.use_hog {
        let hog = ctx.time("hog", |_| hog_features(&ds.images, &ds.labels, &cfg.hog))?;
        spaces.push(hog.with_tag("hog"));
    }
    let fit_rows = split.fit_rows();
    let spaces = normalize_blocks(spaces, &fit_rows)?;
    let side = cfg.scatter_pixels.max(1);
    let raw_rows = ds
        .images
        .iter()
        .map(|im| Ok(resize_bilinear(im, side, side)?.pixels().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let raw = FeatureMatrix::from_rows(&raw_rows, ds.labels.clone(), "raw")?;
    let raw = normalize_blocks(vec![raw], &fit_rows)?.pop();
    Ok(Prepared {
        names: ds.class_names.clone(),
        labels: ds.labels.clone(),
        split,
        spaces,
        raw,
    })
}

#[allow(clippy::too_many_arguments)]
fn assess(
    name: &str,
    space: &str,
    role: &str,
    model: &ClassifierModel,
    test: &FeatureMatrix,
    names: &[String],
    mode: MetricMode,
    ctx: &mut Ctx,
) -> Result<Vec<usize>> {
    let classes = names.len();
    let pred = classifier_predict(model, test)?;
    let truth = test.labels();
    let (metrics, per_class) = if classes == 2 {
        (binary_metrics(&confusion_counts(truth, &pred.labels, 1)?, mode)?, None)
    } else {
        let m = multiclass_metrics(truth, &pred.labels, classes, mode)?;
        (m.macro_avg, Some(m.per_class))
    };
    let targets: Vec<usize> = if classes == 2 { vec![1] } else { (0..classes).collect() };
    let mut aucs = [Vec::new(), Vec::new()];
    for &c in &targets {
        let positives: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        let scores = pred.column(c);
        let series = if classes == 2 {
            name.to_string()
        } else {
            format!("{name}/{}", names[c])
        };
        for (k, kind) in [CurveKind::Roc, CurveKind::Pr].into_iter().enumerate() {
            match ranking_curves(&scores, &positives, kind) {
                Ok(curve) => {
                    aucs[k].push(curve.auc);
                    let dst = if k == 0 { &mut ctx.roc } else { &mut ctx.pr };
                    dst.push((series.clone(), curve));
                }
                Err(Error::Degenerate(msg)) => {
                    if k == 0 {
                        ctx.warn(format!("{series}: no curve ({msg})"));
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    let mean = |v: &Vec<f64>| (v.len() == targets.len()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let converged = model.converged();
    if !converged {
        ctx.warn(format!(
            "{name}: SVM solver stopped at its iteration cap before meeting the KKT tolerance"
        ));
    }
    ctx.methods.push(MethodReport {
        name: name.to_string(),
        space: space.to_string(),
        role: role.to_string(),
        metrics,
        per_class,
        auc_roc: mean(&aucs[0]),
        auc_pr: mean(&aucs[1]),
        converged,
    });
    Ok(pred.labels)
}

fn model_file(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("models/{safe}.clsf")
}

#[allow(clippy::too_many_arguments)]
fn fit_and_assess(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    x: &FeatureMatrix,
    clf: &ClassifierConfig,
    name: &str,
    role: &str,
    seed: u64,
    ctx: &mut Ctx,
) -> Result<(ClassifierModel, Vec<usize>)> {
    let fit = x.select(&prep.split.fit_rows());
    let test = x.select(&prep.split.test);
    let model = ctx.time("classifiers", |_| train_classifier(&fit, prep.names.len(), clf, seed))?;
    ctx.models.push((model_file(name), encode_model(&model)));
    let labels = assess(
        name,
        &x.source_tag,
        role,
        &model,
        &test,
        &prep.names,
        cfg.metric_mode,
        ctx,
    )?;
    Ok((model, labels))
}

/// Members on the fused space plus their vote; returns the ensemble's test labels.
fn detect_stage(cfg: &ExperimentConfig, prep: &Prepared, prefix: &str, ctx: &mut Ctx) -> Result<Vec<usize>> {
    let fused = prep.fused()?;
    let mut members = Vec::new();
    for (i, clf) in cfg.members.iter().enumerate() {
        let name = format!("{prefix}{}@{FUSED_SPACE}", clf.name());
        let (m, _) = fit_and_assess(
            cfg,
            prep,
            &fused,
            clf,
            &name,
            "member",
            mix(cfg.seed, 100 + i as u64),
            ctx,
        )?;
        members.push(m);
    }
    let ensemble = ClassifierModel::Ensemble(EnsembleModel {
        classes: prep.names.len(),
        members,
    });
    let name = format!("{prefix}ensemble@{FUSED_SPACE}");
    ctx.models.push((model_file(&name), encode_model(&ensemble)));
    let test = fused.select(&prep.split.test);
    let labels = assess(
        &name,
        FUSED_SPACE,
        "ensemble",
        &ensemble,
        &test,
        &prep.names,
        cfg.metric_mode,
        ctx,
    )?;
    if cfg.single_space_members && prep.spaces.len() > 1 {
        for space in &prep.spaces {
            for (i, clf) in cfg.members.iter().enumerate() {
                let name = format!("{prefix}{}@{}", clf.name(), space.source_tag);
                fit_and_assess(
                    cfg,
                    prep,
                    space,
                    clf,
                    &name,
                    "single-space",
                    mix(cfg.seed, 100 + i as u64),
                    ctx,
                )?;
            }
        }
    }
    Ok(labels)
}

fn classify_stage(cfg: &ExperimentConfig, prep: &Prepared, ctx: &mut Ctx) -> Result<()> {
    let clf = ClassifierConfig::Svm(cfg.classify_svm);
    let fused = prep.fused()?;
    let seed = mix(cfg.seed, 200);
    fit_and_assess(
        cfg,
        prep,
        &fused,
        &clf,
        &format!("{}@{FUSED_SPACE}", clf.name()),
        "fused",
        seed,
        ctx,
    )?;
    if prep.spaces.len() > 1 {
        for space in &prep.spaces {
            let name = format!("{}@{}", clf.name(), space.source_tag);
            fit_and_assess(cfg, prep, space, &clf, &name, "ablation", seed, ctx)?;
        }
    }
    Ok(())
}

fn scatter(prep: &Prepared, ctx: &mut Ctx) -> Result<Vec<ScatterSpace>> {
    let mut spaces: Vec<FeatureMatrix> = prep.raw.iter().cloned().collect();
    spaces.extend(prep.spaces.iter().cloned());
    if prep.spaces.len() > 1 {
        spaces.push(prep.fused()?);
    }
    let opts = PcaOptions {
        tol: 1e-7,
        max_iter: 20_000,
    };
    let mut out = Vec::new();
    for s in spaces {
        let test = s.select(&prep.split.test);
        match pca_top_k_with(&test, 2, opts) {
            Ok(p) => out.push(ScatterSpace {
                space: s.source_tag.clone(),
                rows: p
                    .projections
                    .iter()
                    .zip(test.labels())
                    .map(|(r, &l)| (r[0], r[1], l))
                    .collect(),
                explained_variance: p.explained_variance,
                total_variance: p.total_variance,
            }),
            Err(e @ (Error::Convergence { .. } | Error::Config(_))) => {
                ctx.warn(format!("no scatter for space '{}': {e}", s.source_tag));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn split_for(cfg: &ExperimentConfig, labels: &[usize], names: &[String], salt: u64) -> Result<SplitIndices> {
    stratified_split(
        labels,
        names,
        cfg.train_fraction(),
        cfg.validation_fraction,
        mix(cfg.seed, salt),
    )
}

fn prepare(cfg: &ExperimentConfig, source: &Source, phase: Phase, stage: &str, ctx: &mut Ctx) -> Result<Prepared> {
    match source {
        Source::Images(ds) => {
            let v = phase_view(&ds.labels, &ds.class_names, phase)?;
            let ds = view_dataset(ds, &v)?;
            let split = split_for(cfg, &ds.labels, &ds.class_names, 7)?;
            prepare_images(cfg, &ds, split, stage, ctx)
        }
        Source::Features(spaces, names) => {
            let v = phase_view(spaces[0].labels(), names, phase)?;
            let split = split_for(cfg, &v.labels, &v.names, 7)?;
            let spaces = spaces
                .iter()
                .map(|s| view_features(s, &v.rows, &v.labels))
                .collect::<Result<Vec<_>>>()?;
            Ok(Prepared {
                names: v.names,
                labels: v.labels,
                spaces: normalize_blocks(spaces, &split.fit_rows())?,
                split,
                raw: None,
            })
        }
    }
}

/// Train/validation/test rows of a non-chained run, indexed after the
/// phase's label view (classification drops normal rows first).
pub fn split_of(cfg: &ExperimentConfig) -> Result<SplitIndices> {
    cfg.validate()?;
    let (labels, names) = match load_source(cfg)? {
        Source::Images(ds) => (ds.labels, ds.class_names),
        Source::Features(spaces, names) => (spaces[0].labels().to_vec(), names),
    };
    let v = phase_view(&labels, &names, cfg.phase)?;
    split_for(cfg, &v.labels, &v.names, 7)
}

/// Detection then classification on the rows the detector calls tumor.
fn run_chained(cfg: &ExperimentConfig, ds: &Dataset, ctx: &mut Ctx) -> Result<(Prepared, ChainSummary)> {
    let normal = ds.class_names.iter().position(|n| n == NORMAL_CLASS).ok_or_else(|| {
        Error::data(format!(
            "chained mode needs a '{NORMAL_CLASS}' class, found {:?}",
            ds.class_names
        ))
    })?;
    // one split over the full label set, shared by both stages
    let split = split_for(cfg, &ds.labels, &ds.class_names, 7)?;

    let dv = phase_view(&ds.labels, &ds.class_names, Phase::Detect)?;
    let dds = view_dataset(ds, &dv)?;
    let dprep = prepare_images(cfg, &dds, split.clone(), "detect", ctx)?;
    let detected = detect_stage(cfg, &dprep, "detect:", ctx)?;

    let cv = phase_view(&ds.labels, &ds.class_names, Phase::Classify)?;
    let position: BTreeMap<usize, usize> = cv.rows.iter().enumerate().map(|(k, &r)| (r, k)).collect();
    let tumor = |rows: &[usize]| -> Vec<usize> { rows.iter().filter_map(|r| position.get(r).copied()).collect() };
    let mut forwarded = 0;
    let mut forwarded_normals = 0;
    let mut missed = 0;
    let mut test = Vec::new();
    for (&row, &pred) in split.test.iter().zip(&detected) {
        let is_tumor = ds.labels[row] != normal;
        match (pred == 1, is_tumor) {
            (true, true) => {
                forwarded += 1;
                test.push(position[&row]);
            }
            (true, false) => {
                forwarded += 1;
                forwarded_normals += 1;
            }
            (false, true) => missed += 1,
            (false, false) => {}
        }
    }
    let csplit = SplitIndices {
        train: tumor(&split.train),
        validation: tumor(&split.validation),
        test,
    };
    let cds = view_dataset(ds, &cv)?;
    let summary = ChainSummary {
        detect_test_rows: split.test.len(),
        forwarded,
        forwarded_normals,
        missed_tumors: missed,
        classification_training_rows: csplit.train.len() + csplit.validation.len(),
        classification_training_classes: {
            let mut seen: Vec<usize> = csplit.fit_rows().iter().map(|&r| cds.labels[r]).collect();
            seen.sort_unstable();
            seen.dedup();
            seen.into_iter().map(|l| cds.class_names[l].clone()).collect()
        },
    };
    if csplit.test.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let cprep = prepare_images(cfg, &cds, csplit, "classify", ctx)?;
    classify_stage(cfg, &cprep, ctx)?;
    Ok((cprep, summary))
}

fn paper_reference(phase: Phase) -> PaperReference {
    let rows = match phase {
        Phase::Detect => vec![PaperRow {
            method: "DBFS-EC".into(),
            accuracy: 0.9956,
            recall: 0.9899,
            precision: 0.9991,
            f1: 0.9945,
            mcc: Some(0.9892),
        }],
        Phase::Classify => vec![PaperRow {
            method: "HFF-BTC".into(),
            accuracy: 0.9920,
            recall: 0.9906,
            precision: 0.9913,
            f1: 0.9909,
            mcc: None,
        }],
    };
    PaperReference {
        note: "Published results on clinical MRI corpora with pretrained extractors; context only, not reproducible \
               with this toolkit's data and never used as a pass criterion."
            .into(),
        rows,
    }
}

fn notes(cfg: &ExperimentConfig, images: bool) -> Vec<String> {
    let mut out = vec![
        "Each feature block is z-scored with mean and population std fitted on training+validation rows; \
         blocks are then concatenated."
            .to_string(),
    ];
    if images && cfg.use_deep {
        if cfg.train.weight_decay != 0.4 {
            out.push(format!(
                "CNN weight decay {} (the published setting is 0.4, which stalls training at lr 0.001); \
                 decay applies to conv and dense weights only.",
                cfg.train.weight_decay
            ));
        }
        if let Some(a) = &cfg.train.augment {
            if a.shear != (-0.5, 0.5) {
                out.push(format!(
                    "Shear range {:?} used as printed in the augmentation table; its asymmetry may be a typo for +/-0.5.",
                    a.shear
                ));
            }
        }
    }
    out
}

fn config_echo(cfg: &ExperimentConfig) -> Result<(serde_json::Value, String)> {
    let echo = ExperimentConfig {
        output_dir: None,
        ..cfg.clone()
    };
    let value = serde_json::to_value(&echo)?;
    let hash = hex::encode(Sha256::digest(serde_json::to_vec(&value)?));
    Ok((value, hash))
}

pub fn run_detect(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    if cfg.phase != Phase::Detect {
        return Err(Error::config("run_detect needs phase 'detect'"));
    }
    run_experiment(cfg)
}

pub fn run_classify(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    if cfg.phase != Phase::Classify {
        return Err(Error::config("run_classify needs phase 'classify'"));
    }
    run_experiment(cfg)
}

/// Run the configured phase.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut ctx = Ctx::default();
    let source = ctx.time("load", |_| load_source(cfg))?;
    let images = matches!(source, Source::Images(_));
    let (prep, chain) = match (cfg.phase, cfg.chain, &source) {
        (Phase::Classify, ChainMode::Chained, Source::Images(ds)) => {
            let (p, s) = run_chained(cfg, ds, &mut ctx)?;
            (p, Some(s))
        }
        (Phase::Detect, _, _) => {
            let p = prepare(cfg, &source, Phase::Detect, "", &mut ctx)?;
            detect_stage(cfg, &p, "", &mut ctx)?;
            (p, None)
        }
        (Phase::Classify, _, _) => {
            let p = prepare(cfg, &source, Phase::Classify, "", &mut ctx)?;
            classify_stage(cfg, &p, &mut ctx)?;
            (p, None)
        }
    };
    let scatter = ctx.time("scatter", |c| scatter(&prep, c))?;

    let mut spaces: Vec<SpaceSummary> = prep
        .spaces
        .iter()
        .map(|s| SpaceSummary {
            name: s.source_tag.clone(),
            dim: s.dim(),
        })
        .collect();
    spaces.push(SpaceSummary {
        name: FUSED_SPACE.into(),
        dim: prep.spaces.iter().map(FeatureMatrix::dim).sum(),
    });
    let (config, config_sha256) = config_echo(cfg)?;
    let converged = ctx.methods.iter().all(|m| m.converged);
    let body = ReportBody {
        library_version: env!("CARGO_PKG_VERSION").into(),
        phase: cfg.phase,
        config,
        config_sha256,
        positive_class: (prep.names.len() == 2).then(|| prep.names[1].clone()),
        class_names: prep.names.clone(),
        split: SplitSummary {
            train: prep.split.train.len(),
            validation: prep.split.validation.len(),
            test: prep.split.test.len(),
        },
        feature_spaces: spaces,
        normalization: "z-score per feature block".into(),
        metric_mode: cfg.metric_mode,
        cnn: std::mem::take(&mut ctx.cnn),
        methods: std::mem::take(&mut ctx.methods),
        chain,
        files: ArtifactFiles {
            summary: "summary.csv".into(),
            roc: "roc.csv".into(),
            pr: "pr.csv".into(),
            scatter: scatter.iter().map(|s| format!("scatter_{}.csv", s.space)).collect(),
            models: ctx.models.iter().map(|(n, _)| n.clone()).collect(),
        },
        paper_reference: paper_reference(cfg.phase),
        converged,
        notes: notes(cfg, images),
        warnings: std::mem::take(&mut ctx.warnings),
    };
    debug_assert_eq!(prep.labels.len(), prep.spaces.first().map_or(0, FeatureMatrix::n));
    ctx.timings.insert("total".into(), start.elapsed().as_secs_f64());
    let body_sha256 = body.sha256();
    Ok(RunOutcome {
        report: RunReport {
            body,
            body_sha256,
            meta: RunMeta {
                timings: ctx.timings,
                parallel: crate::par::is_parallel(),
            },
        },
        roc: ctx.roc,
        pr: ctx.pr,
        scatter,
        models: ctx.models,
    })
}

pub const SUMMARY_HEADER: &str = "method,acc,rec,pre,f1,mcc,auc_roc,auc_pr";

pub fn summary_csv(body: &ReportBody) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for m in &body.methods {
        let r = &m.metrics;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.name,
            r.accuracy,
            r.recall,
            r.precision,
            r.f1,
            r.mcc,
            opt(m.auc_roc),
            opt(m.auc_pr)
        )
        .unwrap();
    }
    out
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write the report, summary, curves, scatter data and models under `dir`.
/// Returns the paths written.
pub fn emit_artifacts(outcome: &RunOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let body = &outcome.report.body;
    let mut written = Vec::new();
    let report = dir.join("report.json");
    write(&report, &serde_json::to_vec_pretty(&outcome.report)?)?;
    written.push(report);
    let summary = dir.join(&body.files.summary);
    write(&summary, summary_csv(body).as_bytes())?;
    written.push(summary);
    for (file, kind, curves) in [
        (&body.files.roc, CurveKind::Roc, &outcome.roc),
        (&body.files.pr, CurveKind::Pr, &outcome.pr),
    ] {
        let p = dir.join(file);
        write_curves_csv(&p, kind, curves)?;
        written.push(p);
    }
    for s in &outcome.scatter {
        let mut csv = String::from("pc1,pc2,label\n");
        for (a, b, l) in &s.rows {
            writeln!(csv, "{a},{b},{l}").unwrap();
        }
        let p = dir.join(format!("scatter_{}.csv", s.space));
        write(&p, csv.as_bytes())?;
        written.push(p);
        let side = serde_json::json!({
            "space": s.space,
            "rows": s.rows.len(),
            "explained_variance": s.explained_variance,
            "total_variance": s.total_variance,
            "class_names": body.class_names,
        });
        let p = dir.join(format!("scatter_{}.json", s.space));
        write(&p, &serde_json::to_vec_pretty(&side)?)?;
        written.push(p);
    }
    for (name, bytes) in &outcome.models {
        let p = dir.join(name);
        write(&p, bytes)?;
        written.push(p);
    }
    Ok(written)
}
