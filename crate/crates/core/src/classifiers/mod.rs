//! Classical classifiers and the voting ensemble.
//!
//! Trained models serialize to a small binary format:
//!
//! ```text
//! "CLSF" | u32 version (1) | u32 kind | payload
//! ```
//!
//! Kinds are 1 = SVM, 2 = MLP, 3 = AdaBoost, 4 = ensemble. All integers and
//! reals are little-endian; reals are f64 so round trips are bit-exact.

pub mod adaboost;
pub mod ensemble;
pub mod kernel;
pub mod mlp;
pub mod svm;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adaboost::{
    adaboost_m1_trace, adaboost_m1_train, adaboost_train, AdaBoostConfig, AdaBoostModel, BoostTrace, BoostedStumps,
    Stump,
};
pub use ensemble::{ensemble_vote, min_max_scale};
pub use kernel::{kernel_matrix, KernelSpec};
pub use mlp::{mlp_train, mlp_train_classes, MlpConfig, MlpModel};
pub use svm::{kkt_violation, one_vs_rest, svm_decision, svm_train_binary, MulticlassSvm, SvmConfig, SvmModel};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::fusion::FeatureMatrix;
use crate::tensor::DenseParams;

const MAGIC: &[u8; 4] = b"CLSF";
pub const MODEL_VERSION: u32 = 1;

/// Which classifier to train, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClassifierConfig {
    Svm(SvmConfig),
    Mlp(MlpConfig),
    AdaBoost(AdaBoostConfig),
}

impl ClassifierConfig {
    pub fn name(&self) -> String {
        match self {
            ClassifierConfig::Svm(c) => format!("svm-{}", c.kernel.describe()),
            ClassifierConfig::Mlp(_) => "mlp".into(),
            ClassifierConfig::AdaBoost(_) => "adaboost".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub classes: usize,
    pub members: Vec<ClassifierModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierModel {
    Svm(MulticlassSvm),
    Mlp(MlpModel),
    AdaBoost(AdaBoostModel),
    Ensemble(EnsembleModel),
}

/// Labels plus an `n x classes` score table.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
}

impl Prediction {
    /// Score column `class`, e.g. the positive-class ranking score.
    pub fn column(&self, class: usize) -> Vec<f64> {
        self.scores.iter().map(|r| r[class]).collect()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl ClassifierModel {
    pub fn classes(&self) -> usize {
        match self {
            ClassifierModel::Svm(m) => m.classes,
            ClassifierModel::Mlp(m) => m.classes(),
            ClassifierModel::AdaBoost(m) => m.classes,
            ClassifierModel::Ensemble(m) => m.classes,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ClassifierModel::Svm(m) => m.dim(),
            ClassifierModel::Mlp(m) => m.dim(),
            ClassifierModel::AdaBoost(m) => m.dim(),
            ClassifierModel::Ensemble(m) => m.members[0].dim(),
        }
    }

    /// False if any SVM solver stopped at its iteration cap.
    pub fn converged(&self) -> bool {
        match self {
            ClassifierModel::Svm(m) => m.converged(),
            ClassifierModel::Ensemble(e) => e.members.iter().all(ClassifierModel::converged),
            _ => true,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ClassifierModel::Svm(_) => "svm",
            ClassifierModel::Mlp(_) => "mlp",
            ClassifierModel::AdaBoost(_) => "adaboost",
            ClassifierModel::Ensemble(_) => "ensemble",
        }
    }
}

/// Train one classifier on `x` with labels in `[0, classes)`.
pub fn train_classifier(
    x: &FeatureMatrix,
    classes: usize,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<ClassifierModel> {
    if let Some(&bad) = x.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::Label {
            label: bad as i64,
            classes,
        });
    }
    Ok(match config {
        ClassifierConfig::Svm(c) => {
            let m = one_vs_rest(x, c)?;
            if m.classes != classes {
                return Err(Error::Degenerate(format!(
                    "class {} has no training samples",
                    classes - 1
                )));
            }
            ClassifierModel::Svm(m)
        }
        ClassifierConfig::Mlp(c) => ClassifierModel::Mlp(mlp_train_classes(x, classes, c, seed)?),
        ClassifierConfig::AdaBoost(c) => ClassifierModel::AdaBoost(adaboost_train(x, classes, c)?),
    })
}

/// Labels and scores from `model`. Scores are SVM decision values, MLP class
/// probabilities, AdaBoost stump margins, or the ensemble's mean scaled score.
pub fn classifier_predict(model: &ClassifierModel, x: &FeatureMatrix) -> Result<Prediction> {
    if x.dim() != model.dim() {
        return Err(Error::dim(format!(
            "{} model expects {} features, input has {}",
            model.kind_name(),
            model.dim(),
            x.dim()
        )));
    }
    if x.n() == 0 {
        return Ok(Prediction {
            labels: Vec::new(),
            scores: Vec::new(),
        });
    }
    let scores = match model {
        ClassifierModel::Svm(m) => m.scores(x)?,
        ClassifierModel::Mlp(m) => m.predict_proba(x)?,
        ClassifierModel::AdaBoost(m) => m.scores(x)?,
        ClassifierModel::Ensemble(e) => {
            let preds = e
                .members
                .iter()
                .map(|m| classifier_predict(m, x))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<Vec<usize>> = preds.iter().map(|p| p.labels.clone()).collect();
            let scaled: Vec<Vec<Vec<f64>>> = preds.iter().map(|p| min_max_scale(&p.scores)).collect();
            let (labels, scores) = ensemble_vote(&labels, &scaled, e.classes)?;
            return Ok(Prediction { labels, scores });
        }
    };
    Ok(Prediction {
        labels: scores.iter().map(|r| argmax(r)).collect(),
        scores,
    })
}

fn write_kernel(w: &mut Writer, k: &KernelSpec) {
    let (tag, degree, gamma, coef0) = match *k {
        KernelSpec::Linear => (0, 0, 0.0, 0.0),
        KernelSpec::Polynomial { degree, gamma, coef0 } => (1, degree, gamma.unwrap_or(0.0), coef0),
        KernelSpec::Rbf { gamma } => (2, 0, gamma.unwrap_or(0.0), 0.0),
    };
    w.u32(tag);
    w.u32(degree);
    w.f64(gamma);
    w.f64(coef0);
}

fn read_kernel(r: &mut Reader) -> Result<KernelSpec> {
    let at = r.pos;
    let (tag, degree, gamma, coef0) = (r.u32()?, r.u32()?, r.f64()?, r.f64()?);
    let g = (gamma > 0.0).then_some(gamma);
    Ok(match tag {
        0 => KernelSpec::Linear,
        1 => KernelSpec::Polynomial {
            degree,
            gamma: g,
            coef0,
        },
        2 => KernelSpec::Rbf { gamma: g },
        _ => {
            return Err(Error::Format {
                offset: at,
                message: format!("unknown kernel tag {tag}"),
            })
        }
    })
}

fn write_dense(w: &mut Writer, d: &DenseParams) {
    w.u64(d.out_dim as u64);
    w.u64(d.in_dim as u64);
    w.f64s(&d.weights);
    w.f64s(&d.bias);
}

fn read_dense(r: &mut Reader) -> Result<DenseParams> {
    let (out_dim, in_dim) = (r.usize()?, r.usize()?);
    let (weights, bias) = (r.f64s()?, r.f64s()?);
    DenseParams::new(out_dim, in_dim, weights, bias).map_err(|e| Error::Corruption(e.to_string()))
}

fn kind_code(m: &ClassifierModel) -> u32 {
    match m {
        ClassifierModel::Svm(_) => 1,
        ClassifierModel::Mlp(_) => 2,
        ClassifierModel::AdaBoost(_) => 3,
        ClassifierModel::Ensemble(_) => 4,
    }
}

fn write_model(w: &mut Writer, model: &ClassifierModel) {
    w.u32(kind_code(model));
    match model {
        ClassifierModel::Svm(m) => {
            w.u64(m.classes as u64);
            w.u64(m.machines.len() as u64);
            for s in &m.machines {
                write_kernel(w, &s.kernel);
                w.f64(s.c);
                w.u64(s.dim as u64);
                w.u64(s.support_indices.len() as u64);
                s.support_indices.iter().for_each(|&i| w.u64(i as u64));
                w.f64s(&s.support_vectors);
                w.f64s(&s.dual_coef);
                w.f64(s.bias);
                w.u32(s.converged as u32);
                w.f64(s.gap);
                w.u64(s.iterations as u64);
            }
        }
        ClassifierModel::Mlp(m) => {
            write_dense(w, &m.hidden);
            write_dense(w, &m.output);
        }
        ClassifierModel::AdaBoost(m) => {
            w.u64(m.classes as u64);
            w.u64(m.machines.len() as u64);
            for b in &m.machines {
                w.u64(b.dim as u64);
                w.u64(b.stumps.len() as u64);
                for s in &b.stumps {
                    w.u64(s.feature as u64);
                    w.f64(s.threshold);
                    w.f64(s.polarity);
                    w.f64(s.alpha);
                }
            }
        }
        ClassifierModel::Ensemble(e) => {
            w.u64(e.classes as u64);
            w.u64(e.members.len() as u64);
            e.members.iter().for_each(|m| write_model(w, m));
        }
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corruption(msg.into())
}

fn read_model(r: &mut Reader) -> Result<ClassifierModel> {
    let at = r.pos;
    let kind = r.u32()?;
    Ok(match kind {
        1 => {
            let classes = r.usize()?;
            let count = r.usize()?;
            if classes < 2 || count != classes {
                return Err(corrupt(format!("SVM with {classes} classes declares {count} machines")));
            }
            let mut machines = Vec::with_capacity(count);
            for _ in 0..count {
                let kernel = read_kernel(r)?;
                let c = r.f64()?;
                let dim = r.usize()?;
                let nsv = r.usize()?;
                let support_indices = (0..nsv).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
                let support_vectors = r.f64s()?;
                let dual_coef = r.f64s()?;
                if support_vectors.len() != nsv * dim || dual_coef.len() != nsv {
                    return Err(corrupt(format!(
                        "SVM declares {nsv} support vectors of dim {dim} but stores {} values and {} coefficients",
                        support_vectors.len(),
                        dual_coef.len()
                    )));
                }
                machines.push(SvmModel {
                    kernel,
                    c,
                    dim,
                    support_indices,
                    support_vectors,
                    dual_coef,
                    bias: r.f64()?,
                    converged: r.u32()? != 0,
                    gap: r.f64()?,
                    iterations: r.usize()?,
                });
            }
            if machines.iter().any(|m| m.dim != machines[0].dim) {
                return Err(corrupt("SVM machines disagree on input dimension"));
            }
            ClassifierModel::Svm(MulticlassSvm { classes, machines })
        }
        2 => {
            let hidden = read_dense(r)?;
            let output = read_dense(r)?;
            if output.in_dim != hidden.out_dim {
                return Err(corrupt("MLP layer sizes do not chain"));
            }
            ClassifierModel::Mlp(MlpModel { hidden, output })
        }
        3 => {
            let classes = r.usize()?;
            let count = r.usize()?;
            let expected = if classes == 2 { 1 } else { classes };
            if classes < 2 || count != expected {
                return Err(corrupt(format!(
                    "AdaBoost with {classes} classes declares {count} machines"
                )));
            }
            let mut machines = Vec::with_capacity(count);
            for _ in 0..count {
                let dim = r.usize()?;
                let rounds = r.usize()?;
                let mut stumps = Vec::with_capacity(rounds.min(1 << 16));
                for _ in 0..rounds {
                    let feature = r.usize()?;
                    if feature >= dim {
                        return Err(corrupt(format!("stump feature {feature} out of range for dim {dim}")));
                    }
                    stumps.push(Stump {
                        feature,
                        threshold: r.f64()?,
                        polarity: r.f64()?,
                        alpha: r.f64()?,
                    });
                }
                machines.push(BoostedStumps { dim, stumps });
            }
            ClassifierModel::AdaBoost(AdaBoostModel { classes, machines })
        }
        4 => {
            let classes = r.usize()?;
            let count = r.usize()?;
            if count == 0 {
                return Err(corrupt("ensemble with no members"));
            }
            let members = (0..count).map(|_| read_model(r)).collect::<Result<Vec<_>>>()?;
            if members
                .iter()
                .any(|m| m.classes() != classes || m.dim() != members[0].dim())
            {
                return Err(corrupt("ensemble members disagree on classes or dimension"));
            }
            ClassifierModel::Ensemble(EnsembleModel { classes, members })
        }
        _ => {
            return Err(Error::Format {
                offset: at,
                message: format!("unknown classifier kind {kind}"),
            })
        }
    })
}

pub fn encode_model(model: &ClassifierModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(MODEL_VERSION);
    write_model(&mut w, model);
    w.buf
}

pub fn decode_model(bytes: &[u8]) -> Result<ClassifierModel> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4).map_err(|_| Error::Format {
        offset: 0,
        message: "file too short for CLSF header".into(),
    })?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "missing CLSF magic".into(),
        });
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let model = read_model(&mut r)?;
    r.finish()?;
    Ok(model)
}

pub fn save_model(model: &ClassifierModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ClassifierModel> {
    decode_model(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
