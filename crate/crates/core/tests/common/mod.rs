#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use dpa_core::dataset::{load_dataset, DataSource, Dataset, LabeledSample, Sample};
use dpa_core::ensemble::{CertifiedCurve, Evaluation};
use dpa_core::partitioning::PartitionPlan;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `DPA_MNIST_DIR`, else `data/mnist` at the workspace root.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("DPA_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub fn load_mnist() -> Result<(Dataset, Dataset), String> {
    let dir = mnist_dir();
    let source = |images: &str, labels: &str| DataSource::Idx {
        images: dir.join(images),
        labels: dir.join(labels),
    };
    let load = |s: DataSource| {
        load_dataset(&s, Some(10)).map_err(|e| format!("{e} (MNIST expected in {}; see scripts/fetch-mnist.sh)", dir.display()))
    };
    Ok((
        load(source("train-images-idx3-ubyte", "train-labels-idx1-ubyte"))?,
        load(source("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"))?,
    ))
}

/// A small dataset with some label structure so that certificates are not
/// all zero, plus probe points drawn from the same distribution.
pub struct ToyInstance {
    pub seed: u64,
    pub train: Dataset,
    pub probes: Vec<Sample>,
    pub k: usize,
}

/// Instance `seed` of the randomized oracle corpus: m <= 14, C in {2, 3},
/// k in 3..=7, 2-D features with distinct values.
pub fn toy_instance(seed: u64, probes: usize) -> ToyInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_classes = rng.random_range(2..=3u32);
    let k = rng.random_range(3..=7usize);
    let m = rng.random_range(k.max(6)..=14usize);
    let draw = |rng: &mut ChaCha8Rng, class: u32| -> Vec<u8> {
        let cx = 4 + 12 * class as u8;
        let cy = 20 - 6 * class as u8;
        vec![cx + rng.random_range(0..8u8), cy + rng.random_range(0..8u8)]
    };
    let mut seen = BTreeSet::new();
    let mut items = Vec::new();
    while items.len() < m {
        let class = rng.random_range(0..num_classes);
        let f = draw(&mut rng, class);
        if !seen.insert(f.clone()) {
            continue;
        }
        // One in six labels is noise.
        let label = if rng.random_range(0..6) == 0 {
            rng.random_range(0..num_classes)
        } else {
            class
        };
        items.push(LabeledSample::new(f, label));
    }
    let probes = (0..probes)
        .map(|_| {
            let class = rng.random_range(0..num_classes);
            Sample::new(draw(&mut rng, class))
        })
        .collect();
    ToyInstance {
        seed,
        train: Dataset::new(2, num_classes, items).unwrap(),
        probes,
        k,
    }
}

/// Partition contents as item sets, for comparing plans of different datasets.
pub fn contents(d: &Dataset, plan: &PartitionPlan) -> Vec<BTreeSet<LabeledSample>> {
    plan.partition_contents(&d.canonical_sort())
        .into_iter()
        .map(|p| p.into_iter().collect())
        .collect()
}

pub fn changed_partitions(a: &[BTreeSet<LabeledSample>], b: &[BTreeSet<LabeledSample>]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Shuffles the item order of `d` without changing the item set.
pub fn shuffled(d: &Dataset, seed: u64) -> Dataset {
    use rand::seq::SliceRandom;
    let mut items = d.items().to_vec();
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Dataset::new(d.dim(), d.num_classes(), items).unwrap()
}

/// Checks the per-run invariants of an evaluation; returns the violations.
pub fn evaluation_violations(eval: &Evaluation, label: &str) -> Vec<String> {
    let mut out = Vec::new();
    let k = eval.k as u32;
    for r in &eval.records {
        let sum: u32 = r.counts.iter().sum();
        if sum != k {
            out.push(format!("{label}: item {} has vote total {sum} != k = {k}", r.index));
        }
        if r.rho_bar > k / 2 {
            out.push(format!("{label}: item {} has rho_bar {} > k/2", r.index, r.rho_bar));
        }
    }
    out.extend(curve_violations(&eval.curve(None), eval, label));
    out
}

fn curve_violations(curve: &CertifiedCurve, eval: &Evaluation, label: &str) -> Vec<String> {
    let mut out = Vec::new();
    let clean = if eval.records.is_empty() {
        0.0
    } else {
        eval.records.iter().filter(|r| r.is_correct()).count() as f64 / eval.records.len() as f64
    };
    match curve.points.first() {
        Some(p) if p.rho == 0 && p.certified_accuracy == clean => {}
        other => out.push(format!("{label}: curve(0) = {other:?}, clean accuracy {clean}")),
    }
    for w in curve.points.windows(2) {
        if w[1].certified_accuracy > w[0].certified_accuracy {
            out.push(format!("{label}: curve increases at rho = {}", w[1].rho));
        }
    }
    out
}

/// Sizes of the partitions differ by at most one.
pub fn balanced(plan: &PartitionPlan) -> bool {
    let sizes = plan.partition_sizes();
    let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
    hi - lo <= 1
}
