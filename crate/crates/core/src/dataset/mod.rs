//! Datasets of integer-valued labeled samples with set semantics.
//!
//! A [`Dataset`] keeps its items in the order they were read, but everything
//! downstream (partitioning, training, hashing) works on the canonical order
//! returned by [`canonical_sort`]: lexicographic by feature vector, then label.

mod cifar;
mod container;
mod idx;
mod preprocess;
mod text;

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use cifar::{parse_cifar, CIFAR_DIM};
pub use container::{decode_dataset, encode_dataset, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use idx::{parse_idx, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use preprocess::histogram_equalize;
pub use text::parse_csv;

/// An unlabeled sample: a fixed-dimension vector of intensities in `[0, 255]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sample(Vec<u8>);

impl Sample {
    pub fn new(features: Vec<u8>) -> Self {
        Sample(features)
    }

    pub fn features(&self) -> &[u8] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_features(self) -> Vec<u8> {
        self.0
    }
}

impl From<Vec<u8>> for Sample {
    fn from(v: Vec<u8>) -> Self {
        Sample(v)
    }
}

/// A sample together with its class id.
///
/// The derived ordering compares the feature vector first and the label last,
/// which is exactly the canonical sort key.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sample: Sample,
    pub label: u32,
}

impl LabeledSample {
    pub fn new(features: Vec<u8>, label: u32) -> Self {
        LabeledSample {
            sample: Sample(features),
            label,
        }
    }
}

/// SHA-256 digest used to content-address datasets, plans and models.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        ContentHash(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s)
            .map_err(|e| Error::InvalidArgument(format!("bad content hash {s:?}: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::InvalidArgument(format!("content hash {s:?} is not 32 bytes")))?;
        Ok(ContentHash(arr))
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", self.to_hex())
    }
}

impl Serialize for ContentHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ContentHash::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A finite set of labeled samples sharing one dimension and class universe.
#[derive(Clone, Debug)]
pub struct Dataset {
    dim: usize,
    num_classes: u32,
    items: Vec<LabeledSample>,
    collapsed: usize,
}

impl Dataset {
    /// Builds a dataset, validating dimensions and labels.
    ///
    /// Exact duplicate `(features, label)` pairs collapse to one item and a
    /// warning is logged; the first occurrence keeps its position.
    pub fn new(dim: usize, num_classes: u32, items: Vec<LabeledSample>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("sample dimension must be positive".into()));
        }
        if num_classes == 0 {
            return Err(Error::InvalidArgument("number of classes must be positive".into()));
        }
        for (i, item) in items.iter().enumerate() {
            if item.sample.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: item.sample.dim(),
                });
            }
            if item.label >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "item {i} has label {} outside [0, {num_classes})",
                    item.label
                )));
            }
        }
        let total = items.len();
        let mut seen = HashSet::with_capacity(total);
        let items: Vec<LabeledSample> = items
            .into_iter()
            .filter(|item| seen.insert(item.clone()))
            .collect();
        let collapsed = total - items.len();
        if collapsed > 0 {
            log::warn!("collapsed {collapsed} duplicate (features, label) pairs");
        }
        Ok(Dataset {
            dim,
            num_classes,
            items,
            collapsed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    /// Items in their original (file) order.
    pub fn items(&self) -> &[LabeledSample] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Number of exact duplicates dropped when the dataset was built.
    pub fn collapsed_duplicates(&self) -> usize {
        self.collapsed
    }

    pub fn canonical_sort(&self) -> Vec<LabeledSample> {
        canonical_sort(self)
    }

    /// SHA-256 of the canonical binary container; independent of item order.
    pub fn content_hash(&self) -> ContentHash {
        ContentHash::of(&encode_dataset(self))
    }

    /// Keeps only the items labeled `class_a` or `class_b`, relabeled to 0 and 1.
    pub fn filter_binary(&self, class_a: u32, class_b: u32) -> Result<Dataset> {
        if class_a == class_b {
            return Err(Error::InvalidArgument("the two classes must differ".into()));
        }
        for c in [class_a, class_b] {
            if c >= self.num_classes {
                return Err(Error::InvalidArgument(format!(
                    "class {c} outside [0, {})",
                    self.num_classes
                )));
            }
        }
        let items = self
            .items
            .iter()
            .filter_map(|t| {
                let label = if t.label == class_a {
                    0
                } else if t.label == class_b {
                    1
                } else {
                    return None;
                };
                Some(LabeledSample {
                    sample: t.sample.clone(),
                    label,
                })
            })
            .collect();
        Dataset::new(self.dim, 2, items)
    }

    /// Applies [`histogram_equalize`] to every sample.
    pub fn equalized(&self) -> Result<Dataset> {
        let items = self
            .items
            .iter()
            .map(|t| LabeledSample {
                sample: histogram_equalize(&t.sample),
                label: t.label,
            })
            .collect();
        Dataset::new(self.dim, self.num_classes, items)
    }

    /// Returns a copy with the labels of the given canonical indices replaced.
    pub fn with_relabeled(&self, flips: &[(usize, u32)]) -> Result<Dataset> {
        let mut sorted = self.canonical_sort();
        for &(idx, label) in flips {
            let item = sorted.get_mut(idx).ok_or_else(|| {
                Error::InvalidArgument(format!("flip index {idx} out of range"))
            })?;
            item.label = label;
        }
        Dataset::new(self.dim, self.num_classes, sorted)
    }

    /// Returns a copy without the items at the given canonical indices.
    pub fn without(&self, removed: &[usize]) -> Result<Dataset> {
        let drop: HashSet<usize> = removed.iter().copied().collect();
        let kept = self
            .canonical_sort()
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, t)| t)
            .collect();
        Dataset::new(self.dim, self.num_classes, kept)
    }

    /// Returns a copy with extra items inserted.
    pub fn with_inserted(&self, extra: &[LabeledSample]) -> Result<Dataset> {
        let mut items = self.items.clone();
        items.extend_from_slice(extra);
        Dataset::new(self.dim, self.num_classes, items)
    }
}

/// Two datasets are equal when they hold the same item set.
impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.num_classes == other.num_classes
            && self.len() == other.len()
            && canonical_sort(self) == canonical_sort(other)
    }
}

impl Eq for Dataset {}

/// Items sorted by feature vector, label last. A pure function of the item set.
pub fn canonical_sort(d: &Dataset) -> Vec<LabeledSample> {
    let mut sorted = d.items.clone();
    sorted.sort_unstable();
    sorted
}

/// Sum of all feature values. The label does not contribute.
pub fn pixel_sum_hash(t: &LabeledSample) -> u64 {
    t.sample.features().iter().map(|&v| u64::from(v)).sum()
}

/// One feature vector that appears with more than one label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collision {
    pub sample: Sample,
    pub labels: Vec<u32>,
    /// Position of the first colliding item in canonical order.
    pub first_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub collisions: Vec<Collision>,
}

/// Checks that no feature vector appears with two different labels.
pub fn verify_unique_samples(d: &Dataset) -> std::result::Result<(), UniquenessReport> {
    let sorted = canonical_sort(d);
    let mut collisions = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j].sample == sorted[i].sample {
            j += 1;
        }
        if j - i > 1 {
            collisions.push(Collision {
                sample: sorted[i].sample.clone(),
                labels: sorted[i..j].iter().map(|t| t.label).collect(),
                first_index: i,
            });
        }
        i = j;
    }
    if collisions.is_empty() {
        Ok(())
    } else {
        Err(UniquenessReport { collisions })
    }
}

/// Where to read a dataset from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "kebab-case")]
pub enum DataSource {
    /// An IDX image file paired with an IDX label file.
    Idx { images: PathBuf, labels: PathBuf },
    /// Integer features followed by an integer label on each row.
    Csv { path: PathBuf, has_header: bool },
    /// CIFAR-10 binary batch files, read in the listed order.
    Cifar { batches: Vec<PathBuf> },
    /// The canonical binary container written by [`encode_dataset`].
    Container { path: PathBuf },
}

impl DataSource {
    pub fn paths(&self) -> Vec<&PathBuf> {
        match self {
            DataSource::Idx { images, labels } => vec![images, labels],
            DataSource::Csv { path, .. } | DataSource::Container { path } => vec![path],
            DataSource::Cifar { batches } => batches.iter().collect(),
        }
    }
}

/// Reads a dataset. When `num_classes` is `None` it is inferred as the
/// largest label plus one.
pub fn load_dataset(source: &DataSource, num_classes: Option<u32>) -> Result<Dataset> {
    match source {
        DataSource::Idx { images, labels } => {
            let img = std::fs::read(images)?;
            let lab = std::fs::read(labels)?;
            parse_idx(&img, &lab, num_classes)
        }
        DataSource::Csv { path, has_header } => {
            let text = std::fs::read(path)?;
            parse_csv(&text, *has_header, num_classes)
        }
        DataSource::Cifar { batches } => {
            let bytes = batches.iter().map(std::fs::read).collect::<std::io::Result<Vec<_>>>()?;
            let views: Vec<&[u8]> = bytes.iter().map(Vec::as_slice).collect();
            parse_cifar(&views, num_classes)
        }
        DataSource::Container { path } => {
            let bytes = std::fs::read(path)?;
            let d = decode_dataset(&bytes)?;
            if let Some(c) = num_classes {
                if c != d.num_classes() {
                    return Err(Error::InvalidArgument(format!(
                        "container declares {} classes, expected {c}",
                        d.num_classes()
                    )));
                }
            }
            Ok(d)
        }
    }
}

/// Resolves the class count for freshly parsed labels.
pub(crate) fn resolve_num_classes(
    labels: impl Iterator<Item = u32>,
    declared: Option<u32>,
) -> u32 {
    declared.unwrap_or_else(|| labels.max().map_or(1, |m| m + 1))
}

/// Groups canonical indices by feature vector. Used by the merge-labels
/// partitioning mode, where all labels of one feature vector travel together.
pub(crate) fn unique_sample_index(sorted: &[LabeledSample]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sorted.len());
    let mut next = 0usize;
    for (i, item) in sorted.iter().enumerate() {
        if i > 0 && sorted[i - 1].sample == item.sample {
            out.push(next - 1);
        } else {
            out.push(next);
            next += 1;
        }
    }
    out
}

/// Counts items by label.
pub fn class_histogram(d: &Dataset) -> Vec<usize> {
    let mut hist = vec![0usize; d.num_classes() as usize];
    for t in d.items() {
        hist[t.label as usize] += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(items: &[(&[u8], u32)], classes: u32) -> Dataset {
        let dim = items[0].0.len();
        Dataset::new(
            dim,
            classes,
            items.iter().map(|(f, l)| LabeledSample::new(f.to_vec(), *l)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn canonical_sort_orders_by_features() {
        let d = ds(&[(&[2, 2], 0), (&[1, 9], 1)], 2);
        let sorted = canonical_sort(&d);
        assert_eq!(sorted[0], LabeledSample::new(vec![1, 9], 1));
        assert_eq!(sorted[1], LabeledSample::new(vec![2, 2], 0));
    }

    #[test]
    fn label_breaks_sort_ties() {
        let d = ds(&[(&[5], 1), (&[5], 0)], 2);
        let sorted = canonical_sort(&d);
        assert_eq!(sorted[0].label, 0);
        assert_eq!(sorted[1].label, 1);
    }

    #[test]
    fn pixel_sum_ignores_label() {
        assert_eq!(pixel_sum_hash(&LabeledSample::new(vec![0; 784], 3)), 0);
        assert_eq!(pixel_sum_hash(&LabeledSample::new(vec![1, 2, 3, 4], 0)), 10);
        assert_eq!(
            pixel_sum_hash(&LabeledSample::new(vec![9, 7], 0)),
            pixel_sum_hash(&LabeledSample::new(vec![9, 7], 1))
        );
    }

    #[test]
    fn exact_duplicates_collapse() {
        let d = ds(&[(&[1, 2], 0), (&[1, 2], 0), (&[3, 4], 1)], 2);
        assert_eq!(d.len(), 2);
        assert_eq!(d.collapsed_duplicates(), 1);
    }

    #[test]
    fn unique_samples_check() {
        assert!(verify_unique_samples(&ds(&[(&[1, 2], 0), (&[3, 4], 1)], 2)).is_ok());
        let report = verify_unique_samples(&ds(&[(&[1, 2], 0), (&[1, 2], 1)], 2)).unwrap_err();
        assert_eq!(report.collisions.len(), 1);
        assert_eq!(report.collisions[0].sample, Sample::new(vec![1, 2]));
        assert_eq!(report.collisions[0].labels, vec![0, 1]);
    }

    #[test]
    fn rejects_bad_labels_and_dims() {
        let err = Dataset::new(2, 2, vec![LabeledSample::new(vec![1, 2], 2)]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        let err = Dataset::new(2, 2, vec![LabeledSample::new(vec![1], 0)]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, actual: 1 }));
    }

    #[test]
    fn content_hash_ignores_order() {
        let a = ds(&[(&[1, 2], 0), (&[3, 4], 1), (&[0, 0], 1)], 2);
        let b = ds(&[(&[0, 0], 1), (&[1, 2], 0), (&[3, 4], 1)], 2);
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a, b);
        let c = ds(&[(&[0, 0], 0), (&[1, 2], 0), (&[3, 4], 1)], 2);
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn unique_index_groups_repeats() {
        let d = ds(&[(&[1], 0), (&[1], 1), (&[2], 0), (&[3], 1), (&[3], 0)], 2);
        assert_eq!(unique_sample_index(&canonical_sort(&d)), vec![0, 0, 1, 2, 2]);
    }

    #[test]
    fn binary_filter_relabels() {
        let d = ds(&[(&[1], 1), (&[2], 7), (&[3], 4)], 10);
        let b = d.filter_binary(1, 7).unwrap();
        assert_eq!(b.num_classes(), 2);
        assert_eq!(b.len(), 2);
        assert_eq!(canonical_sort(&b)[1], LabeledSample::new(vec![2], 1));
    }
}
