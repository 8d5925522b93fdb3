//! Binary classification with `k = m`: every partition holds one labeled
//! sample, and 2-means on the unlabeled data decides which samples agree.
//!
//! Each training item votes for the cluster-to-label mapping under which its
//! own label matches its cluster. The winning mapping labels every test point,
//! so all test points share one certificate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::learners::kmeans::{lloyd, squared_distance};

pub const DEFAULT_MAX_ITERS: usize = 100;

/// Cluster-to-label mapping. `Straight` sends cluster 1 to label 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hypothesis {
    Straight,
    Swapped,
}

impl Hypothesis {
    pub fn label(self, cluster: Cluster) -> u32 {
        match (self, cluster) {
            (Hypothesis::Straight, Cluster::One) | (Hypothesis::Swapped, Cluster::Two) => 0,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cluster {
    One,
    Two,
}

impl Cluster {
    fn index(self) -> usize {
        match self {
            Cluster::One => 0,
            Cluster::Two => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoMeans {
    /// Lexicographically smaller of the two centroids.
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Lloyd's algorithm with two centroids, started from the lexicographically
/// smallest sample and the sample farthest from it (first in lexicographic
/// order on ties). Duplicate samples count once.
pub fn two_means<'a>(unlabeled: impl IntoIterator<Item = &'a Sample>, max_iters: usize) -> Result<TwoMeans> {
    let mut points: Vec<&[u8]> = unlabeled.into_iter().map(Sample::features).collect();
    points.sort_unstable();
    points.dedup();
    if points.len() < 2 {
        return Err(Error::Degenerate(format!(
            "2-means needs at least 2 distinct samples, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: p.len(),
        });
    }
    let first: Vec<f64> = points[0].iter().map(|&v| f64::from(v)).collect();
    let dists: Vec<f64> = points.par_iter().map(|p| squared_distance(p, &first)).collect();
    let mut far = 0;
    for (i, &d) in dists.iter().enumerate() {
        if d > dists[far] {
            far = i;
        }
    }
    let second: Vec<f64> = points[far].iter().map(|&v| f64::from(v)).collect();
    let out = lloyd(&points, vec![first, second], max_iters);
    let mut centroids = out.centroids;
    if centroids[1] < centroids[0] {
        centroids.swap(0, 1);
    }
    let mu2 = centroids.pop().expect("two centroids");
    let mu1 = centroids.pop().expect("two centroids");
    Ok(TwoMeans {
        mu1,
        mu2,
        iterations: out.iterations,
        converged: out.converged,
    })
}

/// Cluster 1 iff `s` is at least as close to `mu1` as to `mu2`.
pub fn assign_cluster(s: &Sample, mu1: &[f64], mu2: &[f64]) -> Result<Cluster> {
    for mu in [mu1, mu2] {
        if mu.len() != s.dim() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                actual: s.dim(),
            });
        }
    }
    Ok(if squared_distance(s.features(), mu1) <= squared_distance(s.features(), mu2) {
        Cluster::One
    } else {
        Cluster::Two
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoMeansModel {
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    /// `votes[cluster][label]`: training items per cluster and label.
    pub votes: [[u64; 2]; 2],
    pub hypothesis: Hypothesis,
    pub rho_bar: u64,
}

impl TwoMeansModel {
    pub fn m(&self) -> u64 {
        self.votes.iter().flatten().sum()
    }

    /// Items voting for (`Straight`, `Swapped`).
    pub fn hypothesis_votes(&self) -> (u64, u64) {
        let v = &self.votes;
        (v[0][0] + v[1][1], v[0][1] + v[1][0])
    }

    pub fn predict(&self, x: &Sample) -> Result<u32> {
        Ok(self.hypothesis.label(assign_cluster(x, &self.mu1, &self.mu2)?))
    }
}

/// Picks the consensus mapping and its certificate from the vote totals.
/// Ties go to `Straight`, so `Straight` wins with a margin of `gap` and
/// `Swapped` needs to keep a margin of one more.
pub fn consensus(straight: u64, swapped: u64) -> (Hypothesis, u64) {
    if straight >= swapped {
        (Hypothesis::Straight, (straight - swapped) / 2)
    } else {
        (Hypothesis::Swapped, (swapped - straight - 1) / 2)
    }
}

/// Clusters the unlabeled training samples, tallies hypothesis votes and
/// certifies the consensus.
pub fn fit_two_means_model(d: &Dataset, max_iters: usize) -> Result<TwoMeansModel> {
    if d.num_classes() != 2 {
        return Err(Error::InvalidArgument(format!(
            "binary 2-means needs 2 classes, got {}",
            d.num_classes()
        )));
    }
    let tm = two_means(d.items().iter().map(|t| &t.sample), max_iters)?;
    let clusters: Vec<Cluster> = d
        .items()
        .par_iter()
        .map(|t| assign_cluster(&t.sample, &tm.mu1, &tm.mu2))
        .collect::<Result<_>>()?;
    let mut votes = [[0u64; 2]; 2];
    for (t, c) in d.items().iter().zip(clusters) {
        votes[c.index()][t.label as usize] += 1;
    }
    let straight = votes[0][0] + votes[1][1];
    let swapped = votes[0][1] + votes[1][0];
    let (hypothesis, rho_bar) = consensus(straight, swapped);
    Ok(TwoMeansModel {
        mu1: tm.mu1,
        mu2: tm.mu2,
        votes,
        hypothesis,
        rho_bar,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryReport {
    pub predictions: Vec<u32>,
    pub clean_accuracy: f64,
    /// Label flips tolerated by every test prediction at once.
    pub rho_bar: u64,
    pub votes: [[u64; 2]; 2],
    pub m: u64,
}

/// Predicts every test item with the consensus mapping.
pub fn binary_certify(test: &Dataset, model: &TwoMeansModel) -> Result<BinaryReport> {
    if test.num_classes() != 2 {
        return Err(Error::InvalidArgument(format!(
            "binary 2-means needs 2 classes, got {}",
            test.num_classes()
        )));
    }
    let predictions: Vec<u32> = test
        .items()
        .par_iter()
        .map(|t| model.predict(&t.sample))
        .collect::<Result<_>>()?;
    let correct = predictions
        .iter()
        .zip(test.items())
        .filter(|(&p, t)| p == t.label)
        .count();
    Ok(BinaryReport {
        clean_accuracy: if test.is_empty() {
            0.0
        } else {
            correct as f64 / test.len() as f64
        },
        predictions,
        rho_bar: model.rho_bar,
        votes: model.votes,
        m: model.m(),
    })
}
