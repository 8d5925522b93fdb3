//! Deterministic base classifiers and the unsupervised feature-map stage.
//!
//! Every learner trains on its partition in canonical order, and any
//! randomness comes from a ChaCha8 stream seeded by the partition index, so a
//! model is a pure function of (partition as a set, feature map, config).

pub mod feature_map;
pub mod kmeans;
pub mod logistic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{ContentHash, LabeledSample, Sample};
use crate::error::{Error, Result};

pub use feature_map::{fit_feature_map, FeatureMap, FeatureMapConfig, FeatureMapKind};
pub use logistic::{LogisticModel, SgdSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    NearestCentroid,
    LogisticRegression,
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest-centroid" => Ok(LearnerKind::NearestCentroid),
            "logistic-regression" => Ok(LearnerKind::LogisticRegression),
            other => Err(Error::InvalidArgument(format!("unknown learner {other:?}"))),
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LearnerKind::NearestCentroid => "nearest-centroid",
            LearnerKind::LogisticRegression => "logistic-regression",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Multiplies mapped features before the logistic model sees them.
    pub input_scale: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            kind: LearnerKind::NearestCentroid,
            epochs: 20,
            learning_rate: 0.1,
            l2: 1e-4,
            input_scale: 1.0 / 255.0,
        }
    }
}

impl LearnerConfig {
    pub fn nearest_centroid() -> Self {
        Self::default()
    }

    pub fn logistic() -> Self {
        LearnerConfig {
            kind: LearnerKind::LogisticRegression,
            ..Self::default()
        }
    }

    pub fn content_hash(&self) -> ContentHash {
        ContentHash::of(&serde_json::to_vec(self).expect("learner config serializes"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelWeights {
    /// Fallback for an empty partition.
    Constant { class: u32 },
    NearestCentroid {
        /// Classes present in the partition, ascending, with their mean features.
        classes: Vec<u32>,
        centroids: Vec<Vec<f64>>,
    },
    Logistic {
        model: LogisticModel,
        input_scale: f64,
    },
}

/// One trained member of the ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseModel {
    pub weights: ModelWeights,
    /// Hash of the feature map the weights were fitted against.
    pub feature_map_ref: ContentHash,
    pub seed: u64,
    pub partition_index: usize,
}

impl BaseModel {
    /// Classifies an already-mapped feature vector.
    pub fn predict_features(&self, features: &[f64]) -> u32 {
        match &self.weights {
            ModelWeights::Constant { class } => *class,
            ModelWeights::NearestCentroid { classes, centroids } => {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, c) in centroids.iter().enumerate() {
                    let d: f64 = c
                        .iter()
                        .zip(features)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                classes[best]
            }
            ModelWeights::Logistic { model, input_scale } => {
                let x: Vec<f64> = features.iter().map(|v| v * input_scale).collect();
                model.predict(&x)
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.weights, ModelWeights::Constant { .. })
    }
}

/// Trains one base classifier on a partition.
///
/// The partition is canonical-sorted first. An empty partition yields the
/// constant model predicting class 0.
pub fn train_base(
    partition: &[LabeledSample],
    config: &LearnerConfig,
    fmap: &FeatureMap,
    num_classes: u32,
    seed: u64,
    partition_index: usize,
) -> Result<BaseModel> {
    let mut items: Vec<&LabeledSample> = partition.iter().collect();
    items.sort_unstable();
    let feature_map_ref = fmap.content_hash();
    if items.is_empty() {
        return Ok(BaseModel {
            weights: ModelWeights::Constant { class: 0 },
            feature_map_ref,
            seed,
            partition_index,
        });
    }
    let mut xs = Vec::with_capacity(items.len());
    for t in &items {
        if t.label >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {} outside [0, {num_classes})",
                t.label
            )));
        }
        xs.push(fmap.transform(&t.sample)?);
    }
    let ys: Vec<u32> = items.iter().map(|t| t.label).collect();
    let weights = match config.kind {
        LearnerKind::NearestCentroid => nearest_centroid(&xs, &ys, fmap.out_dim()),
        LearnerKind::LogisticRegression => {
            let schedule = SgdSchedule {
                epochs: config.epochs,
                learning_rate: config.learning_rate,
                l2: config.l2,
            };
            let scaled: Vec<Vec<f64>> = xs
                .iter()
                .map(|x| x.iter().map(|v| v * config.input_scale).collect())
                .collect();
            ModelWeights::Logistic {
                model: logistic::train(
                    &scaled,
                    &ys,
                    num_classes as usize,
                    fmap.out_dim(),
                    &schedule,
                    seed,
                ),
                input_scale: config.input_scale,
            }
        }
    };
    Ok(BaseModel {
        weights,
        feature_map_ref,
        seed,
        partition_index,
    })
}

fn nearest_centroid(xs: &[Vec<f64>], ys: &[u32], dim: usize) -> ModelWeights {
    let mut classes: Vec<u32> = ys.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut sums = vec![vec![0.0; dim]; classes.len()];
    let mut counts = vec![0usize; classes.len()];
    for (x, y) in xs.iter().zip(ys) {
        let slot = classes.binary_search(y).expect("class collected above");
        counts[slot] += 1;
        for (s, v) in sums[slot].iter_mut().zip(x) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        let n = n as f64;
        s.iter_mut().for_each(|v| *v /= n);
    }
    ModelWeights::NearestCentroid {
        classes,
        centroids: sums,
    }
}

/// Maps `x` through `fmap` and classifies it.
pub fn predict(model: &BaseModel, fmap: &FeatureMap, x: &Sample) -> Result<u32> {
    Ok(model.predict_features(&fmap.transform(x)?))
}
