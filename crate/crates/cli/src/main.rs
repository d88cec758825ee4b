//! Command-line front end.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 convergence
//! warning with `--strict`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hybridboost::classifiers::{self, classifier_predict};
use hybridboost::data::{
    load_image_dir, read_feature_file, stratified_split, synth_dataset, write_feature_file, SynthKind,
};
use hybridboost::fusion::{concat_features, pca_top_k, NormalizerStats};
use hybridboost::hog::hog_features;
use hybridboost::metrics::{
    binary_metrics, confusion_counts, multiclass_metrics, ranking_curves, write_curves_csv, CurveKind, MetricMode,
};
use hybridboost::pipeline::{emit_artifacts, run_experiment, DataSource, ExperimentConfig, Phase, SynthSpec};
use hybridboost::renet::{self, build_model, extract_deep_features, train};
use hybridboost::{par, Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "hybridboost",
    version,
    about = "CNN + HOG feature fusion with ensemble voting"
)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Score precision and MCC with the nonstandard audit variants.
    #[arg(long, global = true)]
    paper_literal_metrics: bool,
    #[arg(long, global = true, env = "HYBRIDBOOST_THREADS")]
    threads: Option<usize>,
    /// Treat solver non-convergence as a failure (exit 4).
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Detect2,
    Classify3,
    Analysis4,
}

impl From<Kind> for SynthKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Detect2 => SynthKind::Detect2,
            Kind::Classify3 => SynthKind::Classify3,
            Kind::Analysis4 => SynthKind::Analysis4,
        }
    }
}

#[derive(Args)]
struct SourceArgs {
    /// Image directory with one subdirectory per class.
    #[arg(long, conflicts_with = "synth")]
    data: Option<PathBuf>,
    /// Generate a synthetic corpus instead.
    #[arg(long)]
    synth: Option<Kind>,
    #[arg(long, default_value_t = 100)]
    n_per_class: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic image corpus.
    Synth {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 100)]
        n_per_class: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Train the CNN on an image directory.
    TrainCnn {
        #[arg(long)]
        data: PathBuf,
    },
    /// Deep features from a trained CNN.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// HOG features of an image directory.
    Hog {
        #[arg(long)]
        data: PathBuf,
    },
    /// Concatenate feature files.
    Fuse {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        /// Z-score each block over all rows first (exploration only: the
        /// pipeline fits normalization on training rows).
        #[arg(long)]
        normalize: bool,
    },
    /// Detection phase.
    Detect(SourceArgs),
    /// Classification phase.
    Classify(SourceArgs),
    /// Score a saved classifier on a feature file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Positive class for binary models.
        #[arg(long, default_value_t = 1)]
        positive: usize,
    },
    /// PCA top-2 projection of a feature file.
    Scatter {
        #[arg(long)]
        features: PathBuf,
    },
}

/// Failure that still yields a report.
struct Strict;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            return fail(&cli.out, &Error::config("--threads must be positive"));
        }
        par::set_threads(n);
    }
    match run(&cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(Strict)) => {
            eprintln!("error: a solver did not converge (--strict)");
            ExitCode::from(4)
        }
        Err(e) => fail(&cli.out, &e),
    }
}

fn fail(out: &Path, e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    let report = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
    if std::fs::create_dir_all(out).is_ok() {
        let _ = std::fs::write(out.join("report.json"), serde_json::to_vec_pretty(&report).unwrap());
    }
    ExitCode::from(e.exit_code() as u8)
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(v)?).map_err(|e| Error::io(path, e))
}

fn mode(cli: &Cli) -> MetricMode {
    if cli.paper_literal_metrics {
        MetricMode::PaperLiteral
    } else {
        MetricMode::Standard
    }
}

/// Config from `--config`, or built from flags; `--seed` wins either way.
fn experiment(cli: &Cli, phase: Phase, src: Option<&SourceArgs>) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
            if let (Some(seed), Some(obj)) = (cli.seed, v.as_object_mut()) {
                obj.insert("seed".into(), json!(seed));
            }
            if let Some(obj) = v.as_object_mut() {
                obj.entry("phase").or_insert(json!(phase));
            }
            ExperimentConfig::from_json(&v.to_string())?
        }
        None => {
            let seed = cli
                .seed
                .ok_or_else(|| Error::config("a seed is required: pass --seed or a --config with one"))?;
            let source = match src {
                Some(SourceArgs { data: Some(dir), .. }) => DataSource {
                    image_dir: Some(dir.clone()),
                    ..DataSource::default()
                },
                Some(SourceArgs {
                    synth: Some(kind),
                    n_per_class,
                    ..
                }) => DataSource {
                    synth: Some(SynthSpec {
                        kind: (*kind).into(),
                        n_per_class: *n_per_class,
                        image_size: 64,
                        seed: None,
                    }),
                    ..DataSource::default()
                },
                _ => DataSource::default(),
            };
            ExperimentConfig::new(phase, source, seed)
        }
    };
    if cfg.phase != phase {
        return Err(Error::config(format!(
            "config phase {:?} does not match the subcommand",
            cfg.phase
        )));
    }
    if cli.paper_literal_metrics {
        cfg.metric_mode = MetricMode::PaperLiteral;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Model sections of a config for the single-step subcommands, which take
/// their data from flags, so the source and phase are not checked.
/// Deterministic steps pass `needs_seed = false` and get seed 0 when none is given.
fn sections(cli: &Cli, needs_seed: bool) -> Result<ExperimentConfig> {
    let fallback = if needs_seed { None } else { Some(0) };
    let cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
            if let Some(obj) = v.as_object_mut() {
                obj.entry("phase").or_insert(json!(Phase::Classify));
                obj.entry("source").or_insert(json!({}));
                if let Some(seed) = cli.seed {
                    obj.insert("seed".into(), json!(seed));
                } else if let Some(seed) = fallback {
                    obj.entry("seed").or_insert(json!(seed));
                }
            }
            serde_json::from_value::<ExperimentConfig>(v).map_err(|e| Error::config(format!("invalid config: {e}")))?
        }
        None => {
            let seed = cli
                .seed
                .or(fallback)
                .ok_or_else(|| Error::config("a seed is required: pass --seed or a --config with one"))?;
            ExperimentConfig::new(Phase::Classify, DataSource::default(), seed)
        }
    };
    cfg.cnn.validate()?;
    cfg.train.validate()?;
    cfg.hog.descriptor_len(cfg.image_size, cfg.image_size)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Option<Strict>> {
    let out = &cli.out;
    match &cli.command {
        Command::Synth {
            kind,
            n_per_class,
            size,
        } => {
            let seed = cli.seed.ok_or_else(|| Error::config("synth needs --seed"))?;
            let ds = synth_dataset((*kind).into(), *n_per_class, *size, seed)?;
            mkdir(out)?;
            ds.save_dir(out)?;
            println!("wrote {} images to {}", ds.len(), out.display());
        }
        Command::TrainCnn { data } => {
            let cfg = sections(cli, true)?;
            let ds = load_image_dir(data)?.resized(cfg.cnn.input_height)?;
            let split = stratified_split(
                &ds.labels,
                &ds.class_names,
                cfg.train_fraction(),
                cfg.validation_fraction,
                cfg.seed,
            )?;
            let cnn = renet::BrainReNetConfig {
                num_classes: ds.num_classes(),
                ..cfg.cnn.clone()
            };
            let model = build_model(&cnn, cfg.seed)?;
            let (model, history) = train(
                &model,
                &ds.subset(&split.train),
                &ds.subset(&split.validation),
                &cfg.train,
                cfg.seed,
            )?;
            mkdir(out)?;
            renet::save_model(&model, &out.join("cnn.brnr"))?;
            write_json(&out.join("history.json"), &serde_json::to_value(&history)?)?;
            println!("best epoch {:?} of {}", history.best_epoch, history.train_loss.len());
        }
        Command::Extract { model, data } => {
            let model = renet::load_model(model)?;
            let ds = load_image_dir(data)?.resized(model.config.input_height)?;
            let x = extract_deep_features(&model, &ds.images, &ds.labels)?;
            mkdir(out)?;
            write_feature_file(&x, &out.join("deep.dbfs"))?;
            println!("{} rows x {} features", x.n(), x.dim());
        }
        Command::Hog { data } => {
            let hog = sections(cli, false)?.hog;
            let ds = load_image_dir(data)?;
            let x = hog_features(&ds.images, &ds.labels, &hog)?;
            mkdir(out)?;
            write_feature_file(&x, &out.join("hog.dbfs"))?;
            println!("{} rows x {} features", x.n(), x.dim());
        }
        Command::Fuse { inputs, normalize } => {
            let mut parts = inputs
                .iter()
                .map(|p| read_feature_file(p))
                .collect::<Result<Vec<_>>>()?;
            if *normalize {
                parts = parts
                    .into_iter()
                    .map(|p| NormalizerStats::fit(&p)?.apply(&p))
                    .collect::<Result<_>>()?;
            }
            let x = concat_features(&parts)?;
            mkdir(out)?;
            write_feature_file(&x, &out.join("fused.dbfs"))?;
            println!("{} rows x {} features", x.n(), x.dim());
        }
        Command::Detect(src) | Command::Classify(src) => {
            let phase = if matches!(cli.command, Command::Detect(_)) {
                Phase::Detect
            } else {
                Phase::Classify
            };
            let cfg = experiment(cli, phase, Some(src))?;
            let outcome = run_experiment(&cfg)?;
            let dir = cfg.output_dir.clone().unwrap_or_else(|| out.clone());
            emit_artifacts(&outcome, &dir)?;
            print!("{}", hybridboost::pipeline::summary_csv(&outcome.report.body));
            for w in &outcome.report.body.warnings {
                eprintln!("warning: {w}");
            }
            if cli.strict && !outcome.report.body.converged {
                return Ok(Some(Strict));
            }
        }
        Command::Eval {
            model,
            features,
            positive,
        } => {
            let model = classifiers::load_model(model)?;
            let x = read_feature_file(features)?;
            let pred = classifier_predict(&model, &x)?;
            let k = model.classes();
            let mut report = if k == 2 {
                let counts = confusion_counts(x.labels(), &pred.labels, *positive)?;
                serde_json::to_value(binary_metrics(&counts, mode(cli))?)?
            } else {
                serde_json::to_value(multiclass_metrics(x.labels(), &pred.labels, k, mode(cli))?)?
            };
            let targets: Vec<usize> = if k == 2 { vec![*positive] } else { (0..k).collect() };
            let mut curves = [Vec::new(), Vec::new()];
            for c in targets {
                let pos: Vec<bool> = x.labels().iter().map(|&l| l == c).collect();
                for (i, kind) in [CurveKind::Roc, CurveKind::Pr].into_iter().enumerate() {
                    match ranking_curves(&pred.column(c), &pos, kind) {
                        Ok(s) => curves[i].push((format!("class{c}"), s)),
                        Err(Error::Degenerate(m)) => log::warn!("class {c}: {m}"),
                        Err(e) => return Err(e),
                    }
                }
            }
            mkdir(out)?;
            report["auc_roc"] = json!(curves[0].iter().map(|(n, s)| (n.clone(), s.auc)).collect::<Vec<_>>());
            report["auc_pr"] = json!(curves[1].iter().map(|(n, s)| (n.clone(), s.auc)).collect::<Vec<_>>());
            write_curves_csv(&out.join("roc.csv"), CurveKind::Roc, &curves[0])?;
            write_curves_csv(&out.join("pr.csv"), CurveKind::Pr, &curves[1])?;
            write_json(&out.join("eval.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if cli.strict && !model.converged() {
                return Ok(Some(Strict));
            }
        }
        Command::Scatter { features } => {
            let x = read_feature_file(features)?;
            let p = pca_top_k(&x, 2)?;
            let mut csv = String::from("pc1,pc2,label\n");
            for (r, l) in p.projections.iter().zip(x.labels()) {
                csv.push_str(&format!("{},{},{}\n", r[0], r[1], l));
            }
            mkdir(out)?;
            let path = out.join(format!("scatter_{}.csv", x.source_tag));
            std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
            println!("explained variance {:?} of {}", p.explained_variance, p.total_variance);
        }
    }
    Ok(None)
}
