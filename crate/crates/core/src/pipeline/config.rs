use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::{AdaBoostConfig, ClassifierConfig, KernelSpec, MlpConfig, SvmConfig};
use crate::data::{SynthKind, DEFAULT_VALIDATION_FRACTION};
use crate::error::{Error, Result};
use crate::hog::HogConfig;
use crate::metrics::MetricMode;
use crate::renet::{BrainReNetConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Detect,
    Classify,
}

impl Phase {
    pub fn default_train_fraction(self) -> f64 {
        match self {
            Phase::Detect => 0.6,
            Phase::Classify => 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n_per_class: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    /// Generator seed; the experiment seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_image_size() -> usize {
    64
}

/// Where the samples come from. Exactly one field must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    /// `root/<class>/*.pgm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_dir: Option<PathBuf>,
    /// Row-aligned precomputed feature files, one per feature space.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_files: Option<Vec<PathBuf>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainMode {
    /// Each phase trains and evaluates on its own ground-truth labels.
    #[default]
    Independent,
    /// Detection first; classification sees only predicted-tumor test rows.
    Chained,
}

fn default_members() -> Vec<ClassifierConfig> {
    vec![
        ClassifierConfig::Svm(SvmConfig {
            kernel: KernelSpec::rbf(),
            ..SvmConfig::default()
        }),
        ClassifierConfig::Mlp(MlpConfig::default()),
        ClassifierConfig::AdaBoost(AdaBoostConfig::default()),
    ]
}

fn default_classify_svm() -> SvmConfig {
    SvmConfig {
        kernel: KernelSpec::polynomial(2),
        ..SvmConfig::default()
    }
}

fn yes() -> bool {
    true
}

fn default_validation() -> f64 {
    DEFAULT_VALIDATION_FRACTION
}

fn default_scatter_size() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub phase: Phase,
    pub source: DataSource,
    pub seed: u64,
    /// Images are resized to `image_size x image_size`.
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    /// Share of each class used for training; phase default when absent.
    #[serde(default)]
    pub train_fraction: Option<f64>,
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    /// Class names for feature-file sources.
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
    #[serde(default)]
    pub cnn: BrainReNetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "yes")]
    pub use_deep: bool,
    #[serde(default = "yes")]
    pub use_hog: bool,
    #[serde(default)]
    pub hog: HogConfig,
    /// Ensemble members for the detection phase.
    #[serde(default = "default_members")]
    pub members: Vec<ClassifierConfig>,
    /// Also train every member on each single feature space.
    #[serde(default = "yes")]
    pub single_space_members: bool,
    /// SVM of the classification phase.
    #[serde(default = "default_classify_svm")]
    pub classify_svm: SvmConfig,
    #[serde(default)]
    pub chain: ChainMode,
    #[serde(default)]
    pub metric_mode: MetricMode,
    /// Side of the downsampled pixel space used as the raw scatter baseline.
    #[serde(default = "default_scatter_size")]
    pub scatter_pixels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// A config with every default filled in.
    pub fn new(phase: Phase, source: DataSource, seed: u64) -> Self {
        let mut v = serde_json::json!({ "phase": phase, "source": source, "seed": seed });
        v.as_object_mut().unwrap().retain(|_, x| !x.is_null());
        serde_json::from_value(v).expect("defaults deserialize")
    }

    pub fn synth(phase: Phase, kind: SynthKind, n_per_class: usize, seed: u64) -> Self {
        let source = DataSource {
            synth: Some(SynthSpec {
                kind,
                n_per_class,
                image_size: default_image_size(),
                seed: None,
            }),
            ..DataSource::default()
        };
        Self::new(phase, source, seed)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn train_fraction(&self) -> f64 {
        self.train_fraction.unwrap_or(self.phase.default_train_fraction())
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.source;
        let set = [s.synth.is_some(), s.image_dir.is_some(), s.feature_files.is_some()]
            .iter()
            .filter(|&&b| b)
            .count();
        if set != 1 {
            return Err(Error::config(format!(
                "exactly one data source (synth, image_dir, feature_files) is required, {set} given"
            )));
        }
        if let Some(files) = &s.feature_files {
            if files.is_empty() {
                return Err(Error::config("feature_files is empty"));
            }
            if self.chain == ChainMode::Chained {
                return Err(Error::config("chained mode needs an image source"));
            }
        }
        if let Some(sy) = &s.synth {
            if sy.image_size != self.image_size {
                return Err(Error::config(format!(
                    "synth image_size {} differs from image_size {}",
                    sy.image_size, self.image_size
                )));
            }
        }
        let f = self.train_fraction();
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::config(format!("train fraction {f} must lie in (0, 1)")));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config(format!(
                "validation fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        if s.feature_files.is_none() && !self.use_deep && !self.use_hog {
            return Err(Error::config("use_deep and use_hog are both off: no feature space"));
        }
        if self.phase == Phase::Detect && self.members.is_empty() {
            return Err(Error::config("detection needs at least one ensemble member"));
        }
        if self.chain == ChainMode::Chained && self.phase != Phase::Classify {
            return Err(Error::config("chained mode is a classification-phase option"));
        }
        if self.use_deep && (self.cnn.input_height != self.image_size || self.cnn.input_width != self.image_size) {
            return Err(Error::config(format!(
                "cnn input {}x{} differs from image_size {}",
                self.cnn.input_height, self.cnn.input_width, self.image_size
            )));
        }
        self.train.validate()?;
        self.hog.descriptor_len(self.image_size, self.image_size)?;
        Ok(())
    }
}
