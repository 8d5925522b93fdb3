//! Unsupervised feature maps fitted on unlabeled samples only.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{lloyd, squared_distance};
use crate::dataset::{ContentHash, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMapKind {
    Identity,
    Pca,
    KmeansBag,
}

impl FromStr for FeatureMapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(FeatureMapKind::Identity),
            "pca" => Ok(FeatureMapKind::Pca),
            "kmeans-bag" => Ok(FeatureMapKind::KmeansBag),
            other => Err(Error::InvalidArgument(format!("unknown feature map {other:?}"))),
        }
    }
}

impl fmt::Display for FeatureMapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMapKind::Identity => "identity",
            FeatureMapKind::Pca => "pca",
            FeatureMapKind::KmeansBag => "kmeans-bag",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapConfig {
    pub kind: FeatureMapKind,
    /// Output dimension; ignored by the identity map.
    pub out_dim: usize,
    /// Seeds k-means initialization.
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for FeatureMapConfig {
    fn default() -> Self {
        FeatureMapConfig {
            kind: FeatureMapKind::Identity,
            out_dim: 0,
            seed: 0,
            max_iters: 50,
        }
    }
}

impl FeatureMapConfig {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn pca(out_dim: usize) -> Self {
        FeatureMapConfig {
            kind: FeatureMapKind::Pca,
            out_dim,
            ..Self::default()
        }
    }

    pub fn kmeans_bag(out_dim: usize, seed: u64) -> Self {
        FeatureMapConfig {
            kind: FeatureMapKind::KmeansBag,
            out_dim,
            seed,
            ..Self::default()
        }
    }
}

/// A fitted, immutable transform from raw samples to real feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureMap {
    Identity {
        dim: usize,
    },
    Pca {
        in_dim: usize,
        out_dim: usize,
        mean: Vec<f64>,
        /// Row-major `out_dim × in_dim`, one principal direction per row.
        components: Vec<f64>,
        /// Variance captured by each component, descending.
        variances: Vec<f64>,
    },
    KmeansBag {
        in_dim: usize,
        centroids: Vec<Vec<f64>>,
    },
}

impl FeatureMap {
    pub fn kind(&self) -> FeatureMapKind {
        match self {
            FeatureMap::Identity { .. } => FeatureMapKind::Identity,
            FeatureMap::Pca { .. } => FeatureMapKind::Pca,
            FeatureMap::KmeansBag { .. } => FeatureMapKind::KmeansBag,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Pca { in_dim, .. } | FeatureMap::KmeansBag { in_dim, .. } => *in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Pca { out_dim, .. } => *out_dim,
            FeatureMap::KmeansBag { centroids, .. } => centroids.len(),
        }
    }

    pub fn transform(&self, x: &Sample) -> Result<Vec<f64>> {
        if x.dim() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                actual: x.dim(),
            });
        }
        Ok(self.transform_unchecked(x.features()))
    }

    pub(crate) fn transform_unchecked(&self, x: &[u8]) -> Vec<f64> {
        match self {
            FeatureMap::Identity { .. } => x.iter().map(|&v| f64::from(v)).collect(),
            FeatureMap::Pca {
                in_dim,
                mean,
                components,
                ..
            } => {
                let centered: Vec<f64> =
                    x.iter().zip(mean).map(|(&v, &m)| f64::from(v) - m).collect();
                components
                    .chunks_exact(*in_dim)
                    .map(|row| row.iter().zip(&centered).map(|(a, b)| a * b).sum())
                    .collect()
            }
            FeatureMap::KmeansBag { centroids, .. } => centroids
                .iter()
                .map(|c| -squared_distance(x, c).sqrt())
                .collect(),
        }
    }

    pub fn content_hash(&self) -> ContentHash {
        ContentHash::of(&bincode::serialize(self).expect("feature map serializes"))
    }
}

/// Fits a feature map on a set of unlabeled samples.
///
/// The samples are deduplicated and put in canonical order first, so the
/// fitted parameters do not depend on the order they are supplied in.
pub fn fit_feature_map<'a>(
    unlabeled: impl IntoIterator<Item = &'a Sample>,
    in_dim: usize,
    config: &FeatureMapConfig,
) -> Result<FeatureMap> {
    let mut samples: Vec<&Sample> = unlabeled.into_iter().collect();
    if let Some(s) = samples.iter().find(|s| s.dim() != in_dim) {
        return Err(Error::DimensionMismatch {
            expected: in_dim,
            actual: s.dim(),
        });
    }
    samples.sort_unstable();
    samples.dedup();
    match config.kind {
        FeatureMapKind::Identity => Ok(FeatureMap::Identity { dim: in_dim }),
        FeatureMapKind::Pca => fit_pca(&samples, in_dim, config.out_dim),
        FeatureMapKind::KmeansBag => fit_kmeans_bag(&samples, in_dim, config),
    }
}

/// Block of rows whose Gram contribution is formed at once.
const GRAM_BLOCK: usize = 256;

fn fit_pca(samples: &[&Sample], in_dim: usize, out_dim: usize) -> Result<FeatureMap> {
    if out_dim == 0 || out_dim > in_dim {
        return Err(Error::InvalidArgument(format!(
            "pca output dimension {out_dim} must lie in [1, {in_dim}]"
        )));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("pca needs at least one sample".into()));
    }
    let n = samples.len() as f64;

    // Pixel sums and pairwise products are integers below 2^53, so every f64
    // accumulation below is exact and independent of summation order.
    let mut sums = vec![0.0f64; in_dim];
    for s in samples {
        for (acc, &v) in sums.iter_mut().zip(s.features()) {
            *acc += f64::from(v);
        }
    }
    let mut gram = vec![0.0f64; in_dim * in_dim];
    let mut block = vec![0.0f64; in_dim * GRAM_BLOCK];
    for rows in samples.chunks(GRAM_BLOCK) {
        let b = rows.len();
        // Column-major block: feature i occupies block[i*b .. (i+1)*b].
        for (r, s) in rows.iter().enumerate() {
            for (i, &v) in s.features().iter().enumerate() {
                block[i * b + r] = f64::from(v);
            }
        }
        let cols = &block[..in_dim * b];
        gram.par_chunks_mut(in_dim).enumerate().for_each(|(i, out_row)| {
            let ci = &cols[i * b..(i + 1) * b];
            for (j, out) in out_row.iter_mut().enumerate().skip(i) {
                *out += dot(ci, &cols[j * b..(j + 1) * b]);
            }
        });
    }

    let mean: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let cov = DMatrix::from_fn(in_dim, in_dim, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        gram[a * in_dim + b] / n - mean[a] * mean[b]
    });
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..in_dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut components = Vec::with_capacity(out_dim * in_dim);
    let mut variances = Vec::with_capacity(out_dim);
    for &c in order.iter().take(out_dim) {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        orient(&mut v);
        components.extend_from_slice(&v);
        variances.push(eig.eigenvalues[c].max(0.0));
    }
    Ok(FeatureMap::Pca {
        in_dim,
        out_dim,
        mean,
        components,
        variances,
    })
}

/// Makes the entry of largest magnitude positive (lowest index on ties).
fn orient(v: &mut [f64]) {
    let mut pivot = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[pivot].abs() {
            pivot = i;
        }
    }
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn fit_kmeans_bag(samples: &[&Sample], in_dim: usize, config: &FeatureMapConfig) -> Result<FeatureMap> {
    let k = config.out_dim;
    if k == 0 {
        return Err(Error::InvalidArgument("kmeans-bag needs at least one centroid".into()));
    }
    if samples.len() < k {
        return Err(Error::InvalidArgument(format!(
            "kmeans-bag with {k} centroids needs at least {k} distinct samples, got {}",
            samples.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut picks = rand::seq::index::sample(&mut rng, samples.len(), k).into_vec();
    picks.sort_unstable();
    let init = picks
        .iter()
        .map(|&i| samples[i].features().iter().map(|&v| f64::from(v)).collect())
        .collect();
    let points: Vec<&[u8]> = samples.iter().map(|s| s.features()).collect();
    let outcome = lloyd(&points, init, config.max_iters);
    Ok(FeatureMap::KmeansBag {
        in_dim,
        centroids: outcome.centroids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(rows: &[&[u8]]) -> Vec<Sample> {
        rows.iter().map(|r| Sample::new(r.to_vec())).collect()
    }

    #[test]
    fn identity_passes_through() {
        let s = samples(&[&[1, 2, 3]]);
        let map = fit_feature_map(&s, 3, &FeatureMapConfig::identity()).unwrap();
        assert_eq!(map.transform(&s[0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(map.transform(&Sample::new(vec![1])).is_err());
    }

    #[test]
    fn pca_on_a_diagonal_line() {
        let s = samples(&[&[0, 0], &[1, 1], &[2, 2], &[5, 5], &[9, 9]]);
        let map = fit_feature_map(&s, 2, &FeatureMapConfig::pca(1)).unwrap();
        let FeatureMap::Pca { components, variances, .. } = &map else {
            panic!("expected pca");
        };
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((components[0] - r).abs() < 1e-12, "{components:?}");
        assert!((components[1] - r).abs() < 1e-12, "{components:?}");
        assert!(variances[0] > 0.0);
    }

    #[test]
    fn pca_rejects_oversized_output() {
        let s = samples(&[&[0, 1], &[2, 3]]);
        let err = fit_feature_map(&s, 2, &FeatureMapConfig::pca(3)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn sign_convention() {
        let mut v = vec![0.1, -0.9, 0.3];
        orient(&mut v);
        assert_eq!(v, vec![-0.1, 0.9, -0.3]);
        let mut tie = vec![-0.5, 0.5];
        orient(&mut tie);
        assert_eq!(tie, vec![0.5, -0.5]);
    }

    #[test]
    fn fits_ignore_sample_order() {
        let rows: Vec<Vec<u8>> = (0..40u32)
            .map(|i| [i, (i * 7) % 13, 255 - i, (i * i) % 17].map(|v| v as u8).to_vec())
            .collect();
        let fwd: Vec<Sample> = rows.iter().cloned().map(Sample::new).collect();
        let rev: Vec<Sample> = fwd.iter().rev().cloned().collect();
        for cfg in [FeatureMapConfig::pca(3), FeatureMapConfig::kmeans_bag(4, 11)] {
            let a = fit_feature_map(&fwd, 4, &cfg).unwrap();
            let b = fit_feature_map(&rev, 4, &cfg).unwrap();
            assert_eq!(bincode::serialize(&a).unwrap(), bincode::serialize(&b).unwrap());
            assert_eq!(a.content_hash(), b.content_hash());
        }
    }

    #[test]
    fn kmeans_bag_features_are_negative_distances() {
        let s = samples(&[&[0, 0], &[0, 1], &[100, 100], &[100, 101]]);
        let map = fit_feature_map(&s, 2, &FeatureMapConfig::kmeans_bag(2, 3)).unwrap();
        let f = map.transform(&Sample::new(vec![0, 0])).unwrap();
        assert_eq!(f.len(), 2);
        assert!(f.iter().all(|&v| v <= 0.0));
        let near = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((near + 0.5).abs() < 1e-12);
    }

    #[test]
    fn gram_dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(f64::from).collect();
        let b: Vec<f64> = (0..11).map(|i| f64::from(i * 3)).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert_eq!(dot(&a, &b), naive);
    }
}
