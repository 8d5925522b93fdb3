//! The partition ensemble: training, voting, certification and reporting.

mod certificate;
mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{canonical_sort, ContentHash, Dataset, LabeledSample, Sample};
use crate::error::{Error, Result};
use crate::learners::{
    fit_feature_map, train_base, BaseModel, FeatureMap, FeatureMapConfig, FeatureMapKind,
    LearnerConfig,
};
use crate::partitioning::{partition, DuplicatePolicy, PartitionPlan, Strategy};

pub use certificate::{aggregate, certify, Certificate};
pub use report::{
    from_json_lines, median_certified_robustness, to_json_lines, CertificateRecord,
    CertifiedCurve, CurvePoint, MedianRobustness, Summary, Threat,
};

/// Everything needed to go from a training set to an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub strategy: Strategy,
    pub k: usize,
    pub learner: LearnerConfig,
    pub feature_map: FeatureMapConfig,
    pub duplicates: DuplicatePolicy,
}

impl PipelineConfig {
    pub fn new(strategy: Strategy, k: usize, learner: LearnerConfig) -> Self {
        PipelineConfig {
            strategy,
            k,
            learner,
            feature_map: FeatureMapConfig::identity(),
            duplicates: DuplicatePolicy::Reject,
        }
    }

    pub fn with_feature_map(mut self, fmap: FeatureMapConfig) -> Self {
        self.feature_map = fmap;
        self
    }
}

/// Where a non-identity feature map is fitted.
///
/// Semi-supervised strategies share one map fitted on every unlabeled sample.
/// Under DPA a map fitted on the whole training set would let one poisoned
/// item reach every base model, so DPA maps are fitted per partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapScope {
    Shared,
    PerPartition,
}

pub fn map_scope(strategy: Strategy, fmap: &FeatureMapConfig) -> MapScope {
    if strategy.is_semi_supervised() || fmap.kind == FeatureMapKind::Identity {
        MapScope::Shared
    } else {
        MapScope::PerPartition
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_hash: ContentHash,
    pub plan_hash: ContentHash,
    pub learner_hash: ContentHash,
    pub feature_map_config_hash: ContentHash,
}

/// `k` trained base models plus the maps they read features through.
#[derive(Clone, Debug)]
pub struct Ensemble {
    models: Vec<BaseModel>,
    plan: PartitionPlan,
    shared_map: FeatureMap,
    /// One map per partition under [`MapScope::PerPartition`], else empty.
    local_maps: Vec<FeatureMap>,
    num_classes: u32,
    provenance: Provenance,
}

/// Fits the map shared by all members: on all unlabeled samples for the
/// semi-supervised strategies, the identity otherwise.
pub fn fit_shared_map(d: &Dataset, plan: &PartitionPlan, fmap: &FeatureMapConfig) -> Result<FeatureMap> {
    match map_scope(plan.strategy(), fmap) {
        MapScope::Shared => fit_feature_map(d.items().iter().map(|t| &t.sample), d.dim(), fmap),
        MapScope::PerPartition => Ok(FeatureMap::Identity { dim: d.dim() }),
    }
}

/// Trains member `i` from the canonical item list. Returns the model and,
/// under per-partition scope, the map it was fitted with.
pub fn train_member(
    sorted: &[LabeledSample],
    members: &[usize],
    i: usize,
    num_classes: u32,
    dim: usize,
    strategy: Strategy,
    learner: &LearnerConfig,
    fmap: &FeatureMapConfig,
    shared_map: &FeatureMap,
) -> Result<(BaseModel, Option<FeatureMap>)> {
    let part: Vec<LabeledSample> = members.iter().map(|&j| sorted[j].clone()).collect();
    let seed = i as u64;
    match map_scope(strategy, fmap) {
        MapScope::Shared => Ok((train_base(&part, learner, shared_map, num_classes, seed, i)?, None)),
        MapScope::PerPartition => {
            let local = if part.is_empty() {
                FeatureMap::Identity { dim }
            } else {
                let mut cfg = fmap.clone();
                if cfg.kind == FeatureMapKind::Pca {
                    cfg.out_dim = cfg.out_dim.min(dim);
                }
                if cfg.kind == FeatureMapKind::KmeansBag {
                    cfg.out_dim = cfg.out_dim.min(part.len());
                }
                fit_feature_map(part.iter().map(|t| &t.sample), dim, &cfg)?
            };
            let model = train_base(&part, learner, &local, num_classes, seed, i)?;
            Ok((model, Some(local)))
        }
    }
}

/// Trains all `k` members, in parallel. Member `i` uses seed `i`; results do
/// not depend on the scheduling.
pub fn train_ensemble(
    d: &Dataset,
    plan: &PartitionPlan,
    learner: &LearnerConfig,
    fmap: &FeatureMapConfig,
) -> Result<Ensemble> {
    plan.check_dataset(d)?;
    let shared_map = fit_shared_map(d, plan, fmap)?;
    let sorted = canonical_sort(d);
    let parts = plan.partitions();
    let trained: Vec<(BaseModel, Option<FeatureMap>)> = parts
        .par_iter()
        .enumerate()
        .map(|(i, members)| {
            train_member(
                &sorted,
                members,
                i,
                d.num_classes(),
                d.dim(),
                plan.strategy(),
                learner,
                fmap,
                &shared_map,
            )
        })
        .collect::<Result<_>>()?;
    let (models, locals): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    let local_maps: Vec<FeatureMap> = locals.into_iter().flatten().collect();
    Ensemble::from_parts(
        models,
        plan.clone(),
        shared_map,
        local_maps,
        d.num_classes(),
        provenance(d.content_hash(), plan, learner, fmap),
    )
}

pub fn provenance(
    dataset_hash: ContentHash,
    plan: &PartitionPlan,
    learner: &LearnerConfig,
    fmap: &FeatureMapConfig,
) -> Provenance {
    Provenance {
        dataset_hash,
        plan_hash: plan.plan_hash(),
        learner_hash: learner.content_hash(),
        feature_map_config_hash: ContentHash::of(
            &serde_json::to_vec(fmap).expect("feature map config serializes"),
        ),
    }
}

/// Partitions `d` per `config` and trains the ensemble.
pub fn run_pipeline(d: &Dataset, config: &PipelineConfig) -> Result<Ensemble> {
    let plan = partition(d, config.strategy, config.k, config.duplicates)?;
    train_ensemble(d, &plan, &config.learner, &config.feature_map)
}

impl Ensemble {
    pub fn from_parts(
        models: Vec<BaseModel>,
        plan: PartitionPlan,
        shared_map: FeatureMap,
        local_maps: Vec<FeatureMap>,
        num_classes: u32,
        provenance: Provenance,
    ) -> Result<Self> {
        if models.len() != plan.k() {
            return Err(Error::InvalidArgument(format!(
                "{} models for a plan with k = {}",
                models.len(),
                plan.k()
            )));
        }
        if let Some((i, _)) = models.iter().enumerate().find(|(i, m)| m.partition_index != *i) {
            return Err(Error::InvalidArgument(format!("model slot {i} holds the wrong partition")));
        }
        if !local_maps.is_empty() && local_maps.len() != plan.k() {
            return Err(Error::InvalidArgument("need one local feature map per partition".into()));
        }
        Ok(Ensemble {
            models,
            plan,
            shared_map,
            local_maps,
            num_classes,
            provenance,
        })
    }

    pub fn k(&self) -> usize {
        self.models.len()
    }

    pub fn models(&self) -> &[BaseModel] {
        &self.models
    }

    pub fn plan(&self) -> &PartitionPlan {
        &self.plan
    }

    pub fn shared_map(&self) -> &FeatureMap {
        &self.shared_map
    }

    pub fn local_maps(&self) -> &[FeatureMap] {
        &self.local_maps
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn threat(&self) -> Threat {
        self.plan.strategy().into()
    }

    pub fn dim(&self) -> usize {
        self.shared_map.in_dim()
    }

    /// Prediction of every base model on `x`, in partition order.
    pub fn base_predictions(&self, x: &Sample) -> Result<Vec<u32>> {
        let shared = self.shared_map.transform(x)?;
        Ok(self
            .models
            .iter()
            .enumerate()
            .map(|(i, m)| match self.local_maps.get(i) {
                Some(local) => m.predict_features(&local.transform_unchecked(x.features())),
                None => m.predict_features(&shared),
            })
            .collect())
    }

    pub fn vote_counts(&self, x: &Sample) -> Result<Vec<u32>> {
        Ok(tally(&self.base_predictions(x)?, self.num_classes))
    }

    pub fn classify(&self, x: &Sample) -> Result<u32> {
        Ok(aggregate(&self.vote_counts(x)?))
    }

    pub fn certify(&self, x: &Sample) -> Result<Certificate> {
        Ok(certify(&self.vote_counts(x)?))
    }

    /// Certifies every test item (in file order) and measures base accuracy.
    pub fn evaluate(&self, test: &Dataset) -> Result<Evaluation> {
        if test.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: test.dim(),
            });
        }
        let k = self.k();
        let per_item: Vec<(CertificateRecord, Vec<bool>)> = test
            .items()
            .par_iter()
            .enumerate()
            .map(|(index, t)| {
                let preds = self.base_predictions(&t.sample)?;
                let cert = certify(&tally(&preds, self.num_classes));
                let hits = preds.iter().map(|&p| p == t.label).collect();
                Ok((CertificateRecord::new(index, t.label, &cert), hits))
            })
            .collect::<Result<_>>()?;
        let mut correct = vec![0usize; k];
        for (_, hits) in &per_item {
            for (c, &h) in correct.iter_mut().zip(hits) {
                *c += usize::from(h);
            }
        }
        let n = test.len().max(1) as f64;
        let base_accuracy = if k == 0 {
            0.0
        } else {
            correct.iter().map(|&c| c as f64 / n).sum::<f64>() / k as f64
        };
        Ok(Evaluation {
            records: per_item.into_iter().map(|(r, _)| r).collect(),
            base_accuracy,
            threat: self.threat(),
            k,
        })
    }

    pub fn certified_accuracy_curve(&self, test: &Dataset, rho_max: Option<u32>) -> Result<CertifiedCurve> {
        Ok(self.evaluate(test)?.curve(rho_max))
    }
}

/// Votes per class. Predictions outside the class universe are ignored.
pub fn tally(predictions: &[u32], num_classes: u32) -> Vec<u32> {
    let mut counts = vec![0u32; num_classes as usize];
    for &p in predictions {
        if let Some(c) = counts.get_mut(p as usize) {
            *c += 1;
        }
    }
    counts
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub records: Vec<CertificateRecord>,
    pub base_accuracy: f64,
    pub threat: Threat,
    pub k: usize,
}

impl Evaluation {
    /// Curve up to `rho_max`, by default `floor(k / 2)`.
    pub fn curve(&self, rho_max: Option<u32>) -> CertifiedCurve {
        let rho_max = rho_max.unwrap_or((self.k / 2) as u32);
        CertifiedCurve::from_records(&self.records, rho_max, self.threat)
    }

    pub fn summary(&self) -> Summary {
        let curve = self.curve(None);
        Summary {
            clean_accuracy: curve.clean_accuracy(),
            median_certified_robustness: MedianRobustness(median_certified_robustness(&curve)),
            base_classifier_accuracy: self.base_accuracy,
        }
    }

    pub fn json_lines(&self) -> String {
        to_json_lines(&self.records)
    }
}
