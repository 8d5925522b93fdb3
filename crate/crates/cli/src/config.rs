//! Run configuration: flat TOML with a version key, plus one table per dataset.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dpa_core::dataset::DataSource;
use dpa_core::ensemble::PipelineConfig;
use dpa_core::learners::{FeatureMapConfig, FeatureMapKind, LearnerConfig, LearnerKind};
use dpa_core::partitioning::{DuplicatePolicy, Strategy};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

/// Everything a run depends on besides the input files. Thread count is
/// deliberately absent: it never changes results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub train: DataSource,
    #[serde(default)]
    pub test: Option<DataSource>,
    /// Inferred from the training labels when absent.
    #[serde(default)]
    pub num_classes: Option<u32>,

    pub strategy: Strategy,
    pub k: usize,
    #[serde(default)]
    pub duplicates: DuplicatePolicy,

    #[serde(default = "default_learner")]
    pub learner: LearnerKind,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default = "default_input_scale")]
    pub input_scale: f64,

    #[serde(default = "default_feature_map")]
    pub feature_map: FeatureMapKind,
    #[serde(default)]
    pub feature_dim: usize,
    #[serde(default)]
    pub feature_seed: u64,
    #[serde(default = "default_feature_max_iters")]
    pub feature_max_iters: usize,

    /// Histogram-equalize every image before anything else.
    #[serde(default)]
    pub equalize: bool,

    /// Largest radius on the certified-accuracy curve; `k / 2` when absent.
    #[serde(default)]
    pub rho_max: Option<u32>,
    pub output_dir: PathBuf,
    #[serde(default = "default_cap")]
    pub enumeration_cap: u64,
}

fn default_learner() -> LearnerKind {
    LearnerConfig::default().kind
}
fn default_epochs() -> usize {
    LearnerConfig::default().epochs
}
fn default_learning_rate() -> f64 {
    LearnerConfig::default().learning_rate
}
fn default_l2() -> f64 {
    LearnerConfig::default().l2
}
fn default_input_scale() -> f64 {
    LearnerConfig::default().input_scale
}
fn default_feature_map() -> FeatureMapKind {
    FeatureMapKind::Identity
}
fn default_feature_max_iters() -> usize {
    FeatureMapConfig::default().max_iters
}
fn default_cap() -> u64 {
    dpa_core::verification::DEFAULT_ENUMERATION_CAP as u64
}

fn field(name: &str, msg: impl std::fmt::Display) -> anyhow::Error {
    anyhow::anyhow!("config field `{name}`: {msg}")
}

impl RunConfig {
    /// Parses and validates `path`. Relative data and output paths are taken
    /// relative to the directory holding the config file.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(field("version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version)));
        }
        if self.k == 0 {
            return Err(field("k", "must be at least 1"));
        }
        if self.num_classes == Some(0) {
            return Err(field("num_classes", "must be at least 1"));
        }
        if self.learner == LearnerKind::LogisticRegression {
            if self.epochs == 0 {
                return Err(field("epochs", "must be at least 1"));
            }
            if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
                return Err(field("learning_rate", "must be positive"));
            }
            if !(self.l2.is_finite() && self.l2 >= 0.0) {
                return Err(field("l2", "must be non-negative"));
            }
            if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
                return Err(field("input_scale", "must be positive"));
            }
        }
        if self.feature_map != FeatureMapKind::Identity && self.feature_dim == 0 {
            return Err(field("feature_dim", format!("must be positive for the {} map", self.feature_map)));
        }
        if self.enumeration_cap == 0 {
            return Err(field("enumeration_cap", "must be at least 1"));
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for source in std::iter::once(&mut self.train).chain(self.test.as_mut()) {
            match source {
                DataSource::Idx { images, labels } => {
                    fix(images);
                    fix(labels);
                }
                DataSource::Csv { path, .. } | DataSource::Container { path } => fix(path),
                DataSource::Cifar { batches } => batches.iter_mut().for_each(fix),
            }
        }
        fix(&mut self.output_dir);
    }

    pub fn test_source(&self) -> anyhow::Result<&DataSource> {
        match &self.test {
            Some(t) => Ok(t),
            None => bail!("config field `test`: required by this command"),
        }
    }

    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            kind: self.learner,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            l2: self.l2,
            input_scale: self.input_scale,
        }
    }

    pub fn feature_map_config(&self) -> FeatureMapConfig {
        FeatureMapConfig {
            kind: self.feature_map,
            out_dim: if self.feature_map == FeatureMapKind::Identity { 0 } else { self.feature_dim },
            seed: self.feature_seed,
            max_iters: self.feature_max_iters,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            strategy: self.strategy,
            k: self.k,
            learner: self.learner_config(),
            feature_map: self.feature_map_config(),
            duplicates: self.duplicates,
        }
    }
}
