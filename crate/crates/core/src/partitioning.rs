//! Assignment of training items to the `k` disjoint partitions.
//!
//! Partition ids are 0-based. Assignments are stored in canonical item order
//! (see [`crate::dataset::canonical_sort`]), which makes every plan a function
//! of the item set only.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    canonical_sort, pixel_sum_hash, unique_sample_index, verify_unique_samples, ContentHash,
    Dataset, LabeledSample,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Pixel-sum hash modulo `k`; certifies insertions and deletions.
    DpaHash,
    /// Sorted unlabeled index modulo `k`; certifies label flips.
    SsdpaSort,
    /// Pixel-sum hash with a shared unlabeled feature map; certifies label flips.
    SsdpaHash,
}

impl Strategy {
    pub fn is_semi_supervised(self) -> bool {
        !matches!(self, Strategy::DpaHash)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::DpaHash => "dpa-hash",
            Strategy::SsdpaSort => "ssdpa-sort",
            Strategy::SsdpaHash => "ssdpa-hash",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dpa-hash" | "dpa" => Ok(Strategy::DpaHash),
            "ssdpa-sort" | "ssdpa" => Ok(Strategy::SsdpaSort),
            "ssdpa-hash" => Ok(Strategy::SsdpaHash),
            other => Err(Error::InvalidArgument(format!("unknown strategy {other:?}"))),
        }
    }
}

/// How sorted-index partitioning treats a feature vector seen with several labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DuplicatePolicy {
    /// Refuse the dataset.
    #[default]
    Reject,
    /// Keep every label of the vector in one partition; any change to that
    /// label set counts as a single flip.
    MergeLabels,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionPlan {
    k: usize,
    strategy: Strategy,
    /// Partition of each item, in canonical item order.
    assignment: Vec<u32>,
    dataset_hash: ContentHash,
}

/// JSON form of a plan; the item-level assignment lives in a binary sidecar.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub k: usize,
    pub strategy: Strategy,
    pub partition_sizes: Vec<usize>,
    pub content_hash_of_dataset: ContentHash,
}

const SIDECAR_MAGIC: [u8; 4] = *b"DPAP";
const SIDECAR_VERSION: u32 = 1;

impl PartitionPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn dataset_hash(&self) -> ContentHash {
        self.dataset_hash
    }

    pub fn partition_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &p in &self.assignment {
            sizes[p as usize] += 1;
        }
        sizes
    }

    /// Canonical indices of the items in partition `i`, ascending.
    pub fn members(&self, i: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &p)| p as usize == i)
            .map(|(j, _)| j)
            .collect()
    }

    /// Canonical indices of every partition, in one pass.
    pub fn partitions(&self) -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); self.k];
        for (j, &p) in self.assignment.iter().enumerate() {
            parts[p as usize].push(j);
        }
        parts
    }

    /// Materializes the partitions from the canonical item list.
    pub fn partition_contents(&self, sorted: &[LabeledSample]) -> Vec<Vec<LabeledSample>> {
        self.partitions()
            .into_iter()
            .map(|idx| idx.into_iter().map(|j| sorted[j].clone()).collect())
            .collect()
    }

    pub fn summary(&self) -> PlanSummary {
        PlanSummary {
            k: self.k,
            strategy: self.strategy,
            partition_sizes: self.partition_sizes(),
            content_hash_of_dataset: self.dataset_hash,
        }
    }

    /// Binary sidecar: magic, version, k (u32), m (u64), then one u32 per item.
    pub fn encode_assignment(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.assignment.len());
        out.extend_from_slice(&SIDECAR_MAGIC);
        out.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.assignment.len() as u64).to_le_bytes());
        for &p in &self.assignment {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn decode(summary: &PlanSummary, sidecar: &[u8]) -> Result<Self> {
        let bad = |at: usize, msg: &str| Error::parse("plan sidecar", format!("byte {at}"), msg);
        if sidecar.len() < 20 || sidecar[0..4] != SIDECAR_MAGIC {
            return Err(bad(0, "bad magic"));
        }
        let version = u32::from_le_bytes(sidecar[4..8].try_into().unwrap());
        if version != SIDECAR_VERSION {
            return Err(bad(4, "unsupported version"));
        }
        let k = u32::from_le_bytes(sidecar[8..12].try_into().unwrap()) as usize;
        if k != summary.k {
            return Err(bad(8, "k differs from the plan summary"));
        }
        let m = u64::from_le_bytes(sidecar[12..20].try_into().unwrap()) as usize;
        if sidecar.len() != 20 + 4 * m {
            return Err(bad(sidecar.len(), "length disagrees with item count"));
        }
        let assignment: Vec<u32> = sidecar[20..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(pos) = assignment.iter().position(|&p| p as usize >= k) {
            return Err(bad(20 + 4 * pos, "partition index out of range"));
        }
        let plan = PartitionPlan {
            k,
            strategy: summary.strategy,
            assignment,
            dataset_hash: summary.content_hash_of_dataset,
        };
        if plan.partition_sizes() != summary.partition_sizes {
            return Err(Error::HashMismatch(
                "partition sizes differ from the plan summary".into(),
            ));
        }
        Ok(plan)
    }

    /// Digest over the summary and the full assignment.
    pub fn plan_hash(&self) -> ContentHash {
        let mut bytes = serde_json::to_vec(&self.summary()).expect("plan summary serializes");
        bytes.extend_from_slice(&self.encode_assignment());
        ContentHash::of(&bytes)
    }

    /// Fails unless this plan was computed from `d`.
    pub fn check_dataset(&self, d: &Dataset) -> Result<()> {
        let h = d.content_hash();
        if h != self.dataset_hash || d.len() != self.assignment.len() {
            return Err(Error::InvalidArgument(format!(
                "plan was computed for dataset {}, got {h}",
                self.dataset_hash
            )));
        }
        Ok(())
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("ensemble size k must be at least 1".into()));
    }
    if k > u32::MAX as usize {
        return Err(Error::InvalidArgument("ensemble size k too large".into()));
    }
    Ok(())
}

fn hash_assignment(d: &Dataset, k: usize) -> Vec<u32> {
    canonical_sort(d)
        .iter()
        .map(|t| (pixel_sum_hash(t) % k as u64) as u32)
        .collect()
}

/// Item goes to partition `pixel_sum_hash(t) mod k`.
pub fn dpa_partition(d: &Dataset, k: usize) -> Result<PartitionPlan> {
    check_k(k)?;
    Ok(PartitionPlan {
        k,
        strategy: Strategy::DpaHash,
        assignment: hash_assignment(d, k),
        dataset_hash: d.content_hash(),
    })
}

/// Item with 0-based sorted unlabeled index `j` goes to partition `j mod k`.
pub fn ssdpa_partition(d: &Dataset, k: usize, policy: DuplicatePolicy) -> Result<PartitionPlan> {
    check_k(k)?;
    if policy == DuplicatePolicy::Reject {
        verify_unique_samples(d).map_err(Error::RepeatedSamples)?;
    }
    let sorted = canonical_sort(d);
    let assignment = unique_sample_index(&sorted)
        .into_iter()
        .map(|j| (j % k) as u32)
        .collect();
    Ok(PartitionPlan {
        k,
        strategy: Strategy::SsdpaSort,
        assignment,
        dataset_hash: d.content_hash(),
    })
}

/// Hash partitioning for the semi-supervised setting. The hash ignores labels,
/// so flips never move an item between partitions.
pub fn ssdpa_hash_partition(d: &Dataset, k: usize) -> Result<PartitionPlan> {
    check_k(k)?;
    Ok(PartitionPlan {
        k,
        strategy: Strategy::SsdpaHash,
        assignment: hash_assignment(d, k),
        dataset_hash: d.content_hash(),
    })
}

pub fn partition(
    d: &Dataset,
    strategy: Strategy,
    k: usize,
    policy: DuplicatePolicy,
) -> Result<PartitionPlan> {
    match strategy {
        Strategy::DpaHash => dpa_partition(d, k),
        Strategy::SsdpaSort => ssdpa_partition(d, k, policy),
        Strategy::SsdpaHash => ssdpa_hash_partition(d, k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};
    use proptest::strategy::Strategy as _;

    fn one_pixel(values: &[u8]) -> Dataset {
        Dataset::new(
            1,
            2,
            values
                .iter()
                .map(|&v| LabeledSample::new(vec![v], u32::from(v % 2)))
                .collect(),
        )
        .unwrap()
    }

    fn contents_by_value(d: &Dataset, plan: &PartitionPlan) -> Vec<Vec<u8>> {
        plan.partition_contents(&canonical_sort(d))
            .into_iter()
            .map(|p| p.into_iter().map(|t| t.sample.features()[0]).collect())
            .collect()
    }

    #[test]
    fn dpa_mod_three() {
        let d = one_pixel(&[0, 1, 2, 3, 4, 5, 6, 7]);
        let plan = dpa_partition(&d, 3).unwrap();
        assert_eq!(
            contents_by_value(&d, &plan),
            vec![vec![0, 3, 6], vec![1, 4, 7], vec![2, 5]]
        );
        let hashed = ssdpa_hash_partition(&d, 3).unwrap();
        assert_eq!(hashed.assignment(), plan.assignment());
    }

    #[test]
    fn k_one_and_k_zero() {
        let d = one_pixel(&[3, 1, 4]);
        assert_eq!(dpa_partition(&d, 1).unwrap().partition_sizes(), vec![3]);
        assert!(matches!(dpa_partition(&d, 0), Err(Error::InvalidArgument(_))));
        assert!(ssdpa_partition(&d, 0, DuplicatePolicy::Reject).is_err());
        assert!(ssdpa_hash_partition(&d, 0).is_err());
    }

    #[test]
    fn sorted_index_alternates() {
        let d = one_pixel(&[50, 10, 40, 20, 60, 30]);
        let plan = ssdpa_partition(&d, 2, DuplicatePolicy::Reject).unwrap();
        assert_eq!(
            contents_by_value(&d, &plan),
            vec![vec![10, 30, 50], vec![20, 40, 60]]
        );
    }

    #[test]
    fn sorted_index_rejects_repeats_unless_merging() {
        let d = Dataset::new(
            1,
            2,
            vec![
                LabeledSample::new(vec![1], 0),
                LabeledSample::new(vec![1], 1),
                LabeledSample::new(vec![2], 0),
            ],
        )
        .unwrap();
        assert!(matches!(
            ssdpa_partition(&d, 2, DuplicatePolicy::Reject),
            Err(Error::RepeatedSamples(_))
        ));
        let plan = ssdpa_partition(&d, 2, DuplicatePolicy::MergeLabels).unwrap();
        assert_eq!(plan.assignment(), &[0, 0, 1]);
    }

    #[test]
    fn sixty_thousand_into_twelve_hundred() {
        let items = (0..60_000u32)
            .map(|i| LabeledSample::new(i.to_be_bytes().to_vec(), i % 10))
            .collect();
        let d = Dataset::new(4, 10, items).unwrap();
        let plan = ssdpa_partition(&d, 1200, DuplicatePolicy::Reject).unwrap();
        assert!(plan.partition_sizes().iter().all(|&s| s == 50));
    }

    #[test]
    fn degenerate_hash_piles_up() {
        let items = (0..10u8)
            .map(|i| LabeledSample::new(vec![i, 9 - i], 0))
            .collect();
        let d = Dataset::new(2, 1, items).unwrap();
        let hashed = ssdpa_hash_partition(&d, 4).unwrap().partition_sizes();
        let sorted = ssdpa_partition(&d, 4, DuplicatePolicy::Reject).unwrap().partition_sizes();
        assert_eq!(hashed.iter().max(), Some(&10));
        assert!(sorted.iter().max().unwrap() - sorted.iter().min().unwrap() <= 1);
    }

    #[test]
    fn sidecar_round_trip_and_tamper() {
        let d = one_pixel(&[9, 8, 7, 6, 5]);
        let plan = ssdpa_partition(&d, 3, DuplicatePolicy::Reject).unwrap();
        let json = serde_json::to_string(&plan.summary()).unwrap();
        assert!(json.contains("\"strategy\":\"ssdpa-sort\""));
        let summary: PlanSummary = serde_json::from_str(&json).unwrap();
        let back = PartitionPlan::decode(&summary, &plan.encode_assignment()).unwrap();
        assert_eq!(back, plan);
        let mut bytes = plan.encode_assignment();
        bytes[20] = 2;
        assert!(PartitionPlan::decode(&summary, &bytes).is_err());
    }

    fn arb_dataset() -> impl proptest::strategy::Strategy<Value = Dataset> {
        prop::collection::vec((prop::collection::vec(0u8..4, 3), 0u32..3), 1..24).prop_map(
            |rows| {
                Dataset::new(3, 3, rows.into_iter().map(|(f, l)| LabeledSample::new(f, l)).collect())
                    .unwrap()
            },
        )
    }

    fn changed_partitions(a: &[Vec<LabeledSample>], b: &[Vec<LabeledSample>]) -> usize {
        a.iter().zip(b).filter(|(x, y)| x != y).count()
    }

    proptest! {
        #[test]
        fn plans_cover_disjointly(d in arb_dataset(), k in 1usize..9) {
            for plan in [
                dpa_partition(&d, k).unwrap(),
                ssdpa_partition(&d, k, DuplicatePolicy::MergeLabels).unwrap(),
                ssdpa_hash_partition(&d, k).unwrap(),
            ] {
                let parts = plan.partitions();
                let total: usize = parts.iter().map(Vec::len).sum();
                prop_assert_eq!(total, d.len());
                let mut seen = vec![false; d.len()];
                for p in &parts {
                    for &j in p {
                        prop_assert!(!seen[j]);
                        seen[j] = true;
                    }
                }
            }
        }

        #[test]
        fn sorted_plan_is_balanced(d in arb_dataset(), k in 1usize..9) {
            let d = Dataset::new(
                3, 3,
                d.canonical_sort().into_iter().enumerate()
                    .map(|(i, t)| LabeledSample::new(vec![i as u8, 0, 0], t.label)).collect(),
            ).unwrap();
            let sizes = ssdpa_partition(&d, k, DuplicatePolicy::Reject).unwrap().partition_sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }

        #[test]
        fn dpa_single_edit_touches_one_partition(
            d in arb_dataset(),
            k in 1usize..9,
            extra in (prop::collection::vec(0u8..4, 3), 0u32..3),
            victim in any::<prop::sample::Index>(),
        ) {
            let sorted = d.canonical_sort();
            let base = dpa_partition(&d, k).unwrap().partition_contents(&sorted);

            let added = d.with_inserted(&[LabeledSample::new(extra.0, extra.1)]).unwrap();
            let after = dpa_partition(&added, k).unwrap().partition_contents(&added.canonical_sort());
            prop_assert!(changed_partitions(&base, &after) <= 1);

            let removed = d.without(&[victim.index(d.len())]).unwrap();
            let after = dpa_partition(&removed, k).unwrap().partition_contents(&removed.canonical_sort());
            prop_assert!(changed_partitions(&base, &after) <= 1);
        }

        #[test]
        fn label_flip_touches_one_partition(
            d in arb_dataset(),
            k in 1usize..9,
            victim in any::<prop::sample::Index>(),
            shift in 1u32..3,
        ) {
            // Make feature vectors unique so flips keep the set well formed.
            let d = Dataset::new(
                3, 3,
                d.canonical_sort().into_iter().enumerate()
                    .map(|(i, t)| LabeledSample::new(vec![i as u8, t.sample.features()[1], 0], t.label)).collect(),
            ).unwrap();
            let sorted = d.canonical_sort();
            let j = victim.index(d.len());
            let flipped = d.with_relabeled(&[(j, (sorted[j].label + shift) % 3)]).unwrap();
            for (a, b) in [
                (ssdpa_partition(&d, k, DuplicatePolicy::Reject).unwrap(),
                 ssdpa_partition(&flipped, k, DuplicatePolicy::Reject).unwrap()),
                (ssdpa_hash_partition(&d, k).unwrap(), ssdpa_hash_partition(&flipped, k).unwrap()),
            ] {
                prop_assert_eq!(a.assignment(), b.assignment());
                let before = a.partition_contents(&sorted);
                let after = b.partition_contents(&flipped.canonical_sort());
                prop_assert_eq!(changed_partitions(&before, &after), 1);
            }
        }

        #[test]
        fn plans_ignore_input_order(d in arb_dataset(), k in 1usize..9, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut items = d.items().to_vec();
            items.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled = Dataset::new(3, 3, items).unwrap();
            prop_assert_eq!(dpa_partition(&d, k).unwrap(), dpa_partition(&shuffled, k).unwrap());
            prop_assert_eq!(
                ssdpa_partition(&d, k, DuplicatePolicy::MergeLabels).unwrap(),
                ssdpa_partition(&shuffled, k, DuplicatePolicy::MergeLabels).unwrap()
            );
        }
    }
}
