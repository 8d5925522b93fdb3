//! Oracles that check certificates by brute force, and the closed-form
//! comparison against random label ablation.
//!
//! The exhaustive verifiers retrain the whole pipeline for every attack set.
//! They never reuse the clean partitions, so a bug in partition locality
//! shows up as a counterexample instead of being assumed away.

use std::fmt;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{pixel_sum_hash, Dataset, LabeledSample, Sample};
use crate::ensemble::{aggregate, run_pipeline, tally, PipelineConfig};
use crate::error::{Error, Result};
use crate::partitioning::Strategy;

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Attack sets are checked in parallel batches of this size; the first
/// counterexample in lexicographic order wins regardless of scheduling.
const BATCH: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    LabelFlip,
    Removal,
    Insertion,
    SymmetricDifference,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::LabelFlip => "label-flip",
            AttackKind::Removal => "removal",
            AttackKind::Insertion => "insertion",
            AttackKind::SymmetricDifference => "symmetric-difference",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label-flip" => Ok(AttackKind::LabelFlip),
            "removal" => Ok(AttackKind::Removal),
            "insertion" => Ok(AttackKind::Insertion),
            "symmetric-difference" => Ok(AttackKind::SymmetricDifference),
            other => Err(Error::InvalidArgument(format!("unknown threat `{other}`"))),
        }
    }
}

/// What the adversary may do, and how much of it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackBudget {
    pub threat: AttackKind,
    pub rho: u32,
}

/// A concrete attack, in terms of canonical indices of the clean training set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Attack {
    LabelFlips { flips: Vec<(usize, u32)> },
    Removals { indices: Vec<usize> },
    Insertions { items: Vec<LabeledSample> },
    /// Vote-level adversary: base-model outputs changed to reach `counts`.
    Votes { counts: Vec<u32> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub attack: Attack,
    pub clean_prediction: u32,
    pub poisoned_prediction: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Sound,
    Counterexample,
}

/// One concrete insertion attack run alongside the vote-level check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpotCheck {
    pub inserted: Vec<LabeledSample>,
    pub targeted_partitions: Vec<u32>,
    pub changed_partitions: usize,
    pub poisoned_prediction: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub threat: AttackKind,
    pub rho: u32,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Counterexample>,
    pub sets_checked: u64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub spot_checks: Vec<SpotCheck>,
}

impl VerifyReport {
    pub fn is_sound(&self) -> bool {
        self.verdict == Verdict::Sound
    }

    fn new(budget: AttackBudget, counterexample: Option<Counterexample>, sets_checked: u64) -> Self {
        VerifyReport {
            threat: budget.threat,
            rho: budget.rho,
            verdict: if counterexample.is_some() {
                Verdict::Counterexample
            } else {
                Verdict::Sound
            },
            counterexample,
            sets_checked,
            spot_checks: Vec::new(),
        }
    }
}

/// True iff no reassignment of up to `rho` votes changes `aggregate(counts)`.
///
/// The adversary moves one vote at a time from the current winner to the
/// strongest challenger, where a smaller class id breaks ties in its favor.
/// Moving any other vote helps the challenger less, so greedy is optimal.
pub fn vote_flip_check(counts: &[u32], rho: u32) -> bool {
    let winner = aggregate(counts) as usize;
    let mut counts = counts.to_vec();
    for _ in 0..rho {
        let challenger = (0..counts.len())
            .filter(|&c| c != winner)
            .max_by_key(|&c| (u64::from(counts[c]) * 2 + u64::from(c < winner), std::cmp::Reverse(c)));
        let Some(challenger) = challenger else {
            return true;
        };
        if counts[winner] == 0 {
            break;
        }
        counts[winner] -= 1;
        counts[challenger] += 1;
        if aggregate(&counts) as usize != winner {
            return false;
        }
    }
    true
}

/// Reference adversary for [`vote_flip_check`]: tries every count vector with
/// the same total that is within `rho` moved votes. Exponential; toy sizes only.
pub fn brute_force_vote_flip_check(counts: &[u32], rho: u32) -> bool {
    brute_force_vote_counterexample(counts, rho).is_none()
}

/// First count vector (in lexicographic order) reachable with at most `rho`
/// moved votes whose aggregate differs from that of `counts`.
pub fn brute_force_vote_counterexample(counts: &[u32], rho: u32) -> Option<Vec<u32>> {
    fn go(
        counts: &[u32],
        rho: u32,
        winner: u32,
        remaining: u32,
        prefix: &mut Vec<u32>,
    ) -> Option<Vec<u32>> {
        let i = prefix.len();
        if i + 1 == counts.len() {
            prefix.push(remaining);
            let moved: u32 = counts
                .iter()
                .zip(prefix.iter())
                .map(|(&a, &b)| a.saturating_sub(b))
                .sum();
            let found = (moved <= rho && aggregate(prefix) != winner).then(|| prefix.clone());
            prefix.pop();
            return found;
        }
        for v in 0..=remaining {
            prefix.push(v);
            let found = go(counts, rho, winner, remaining - v, prefix);
            prefix.pop();
            if found.is_some() {
                return found;
            }
        }
        None
    }
    if counts.is_empty() {
        return None;
    }
    let k = counts.iter().sum();
    go(counts, rho, aggregate(counts), k, &mut Vec::with_capacity(counts.len()))
}

/// Number of non-empty label-flip sets of size at most `rho` over `m` items
/// and `num_classes` classes, plus one for the unpoisoned baseline.
pub fn label_flip_set_count(m: usize, num_classes: u32, rho: u32) -> u128 {
    let alt = u128::from(num_classes.saturating_sub(1));
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    let mut alt_pow: u128 = 1;
    for j in 0..=(rho as usize).min(m) {
        if j > 0 {
            binom = binom.saturating_mul((m - j + 1) as u128) / j as u128;
            alt_pow = alt_pow.saturating_mul(alt);
        }
        total = total.saturating_add(binom.saturating_mul(alt_pow));
    }
    total
}

/// `sum_{j <= rho} C(m, j)`, the baseline included.
pub fn removal_set_count(m: usize, rho: u32) -> u128 {
    label_flip_set_count(m, 2, rho)
}

fn check_cap(required: u128, cap: u128) -> Result<()> {
    if required > cap {
        Err(Error::CapExceeded { required, cap })
    } else {
        Ok(())
    }
}

/// Calls `f` on every size-`j` subset of `0..m` in lexicographic order,
/// for `j = 1..=rho`. Stops early when `f` returns false.
fn for_each_subset(m: usize, rho: usize, mut f: impl FnMut(&[usize]) -> bool) {
    for j in 1..=rho.min(m) {
        let mut idx: Vec<usize> = (0..j).collect();
        loop {
            if !f(&idx) {
                return;
            }
            // Advance to the next combination.
            let mut p = j;
            while p > 0 && idx[p - 1] == m - j + p - 1 {
                p -= 1;
            }
            if p == 0 {
                break;
            }
            idx[p - 1] += 1;
            for q in p..j {
                idx[q] = idx[q - 1] + 1;
            }
        }
    }
}

/// Walks attack sets in order, checks them in parallel batches and returns the
/// first failing set with the number of sets checked up to and including it.
fn search<A, G>(
    generate: G,
    check: impl Fn(&A) -> Result<Option<u32>> + Sync,
) -> Result<(Option<(A, u32)>, u64)>
where
    A: Send + Sync,
    G: FnOnce(&mut dyn FnMut(A) -> bool),
{
    let mut checked: u64 = 0;
    let mut found: Option<(A, u32)> = None;
    let mut failure: Option<Error> = None;
    let mut batch: Vec<A> = Vec::with_capacity(BATCH);

    let flush = |batch: &mut Vec<A>, checked: &mut u64| -> Result<Option<(A, u32)>> {
        let outcomes: Vec<Result<Option<u32>>> = batch.par_iter().map(&check).collect();
        for (pos, outcome) in outcomes.into_iter().enumerate() {
            if let Some(poisoned) = outcome? {
                *checked += pos as u64 + 1;
                let attack = batch.swap_remove(pos);
                batch.clear();
                return Ok(Some((attack, poisoned)));
            }
        }
        *checked += batch.len() as u64;
        batch.clear();
        Ok(None)
    };

    generate(&mut |attack| {
        batch.push(attack);
        if batch.len() < BATCH {
            return true;
        }
        match flush(&mut batch, &mut checked) {
            Ok(None) => true,
            Ok(hit) => {
                found = hit;
                false
            }
            Err(e) => {
                failure = Some(e);
                false
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if found.is_none() && !batch.is_empty() {
        found = flush(&mut batch, &mut checked)?;
    }
    Ok((found, checked))
}

fn clean_prediction(d: &Dataset, config: &PipelineConfig, x: &Sample) -> Result<u32> {
    run_pipeline(d, config)?.classify(x)
}

/// Retrains the pipeline for every label-flip set of size at most `rho` and
/// checks the prediction on `x`. Flip sets are visited in lexicographic order:
/// by size, then by canonical item indices, then by the new labels.
pub fn exhaustive_label_flip_verify(
    d: &Dataset,
    config: &PipelineConfig,
    x: &Sample,
    rho: u32,
    cap: u128,
) -> Result<VerifyReport> {
    let budget = AttackBudget {
        threat: AttackKind::LabelFlip,
        rho,
    };
    check_cap(label_flip_set_count(d.len(), d.num_classes(), rho), cap)?;
    let base = clean_prediction(d, config, x)?;
    let sorted = d.canonical_sort();
    let num_classes = d.num_classes();
    let (found, checked) = search(
        |emit: &mut dyn FnMut(Vec<(usize, u32)>) -> bool| {
            for_each_subset(d.len(), rho as usize, |idx| {
                // Odometer over the alternative labels of each chosen item.
                let mut choice = vec![0u32; idx.len()];
                loop {
                    let flips: Vec<(usize, u32)> = idx
                        .iter()
                        .zip(&choice)
                        .map(|(&i, &c)| {
                            let old = sorted[i].label;
                            (i, if c < old { c } else { c + 1 })
                        })
                        .collect();
                    if !emit(flips) {
                        return false;
                    }
                    let mut p = idx.len();
                    loop {
                        if p == 0 {
                            return true;
                        }
                        p -= 1;
                        choice[p] += 1;
                        if choice[p] + 1 < num_classes {
                            break;
                        }
                        choice[p] = 0;
                    }
                }
            })
        },
        |flips: &Vec<(usize, u32)>| {
            let poisoned = d.with_relabeled(flips)?;
            let p = clean_prediction(&poisoned, config, x)?;
            Ok((p != base).then_some(p))
        },
    )?;
    let counterexample = found.map(|(flips, p)| Counterexample {
        attack: Attack::LabelFlips { flips },
        clean_prediction: base,
        poisoned_prediction: p,
    });
    Ok(VerifyReport::new(budget, counterexample, checked + 1))
}

/// Retrains after every removal set of size at most `rho`. Requires a
/// strategy whose assignment of an item does not depend on the other items.
pub fn exhaustive_removal_verify(
    d: &Dataset,
    config: &PipelineConfig,
    x: &Sample,
    rho: u32,
    cap: u128,
) -> Result<VerifyReport> {
    require_dpa(config, AttackKind::Removal)?;
    let budget = AttackBudget {
        threat: AttackKind::Removal,
        rho,
    };
    check_cap(removal_set_count(d.len(), rho), cap)?;
    let base = clean_prediction(d, config, x)?;
    let (found, checked) = search(
        |emit: &mut dyn FnMut(Vec<usize>) -> bool| for_each_subset(d.len(), rho as usize, |idx| emit(idx.to_vec())),
        |indices: &Vec<usize>| {
            let poisoned = d.without(indices)?;
            let p = clean_prediction(&poisoned, config, x)?;
            Ok((p != base).then_some(p))
        },
    )?;
    let counterexample = found.map(|(indices, p)| Counterexample {
        attack: Attack::Removals { indices },
        clean_prediction: base,
        poisoned_prediction: p,
    });
    Ok(VerifyReport::new(budget, counterexample, checked + 1))
}

fn require_dpa(config: &PipelineConfig, threat: AttackKind) -> Result<()> {
    if config.strategy == Strategy::DpaHash {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{threat} attacks are certified only under {}, not {}",
            Strategy::DpaHash,
            config.strategy
        )))
    }
}

/// Number of randomized insertion attacks tried after the targeted one.
pub const RANDOM_SPOT_CHECKS: usize = 3;

/// Insertion threat at the vote level: the adversary controls the outputs of
/// up to `rho` base models. Concrete insertions are then tried as spot checks;
/// each must change at most `rho` partitions and may flip the prediction only
/// if the vote-level adversary can.
pub fn insertion_adversary_verify(
    d: &Dataset,
    config: &PipelineConfig,
    x: &Sample,
    rho: u32,
) -> Result<VerifyReport> {
    require_dpa(config, AttackKind::Insertion)?;
    let k = config.k;
    if rho as usize > k {
        return Err(Error::InvalidArgument(format!("rho = {rho} exceeds k = {k}")));
    }
    let budget = AttackBudget {
        threat: AttackKind::Insertion,
        rho,
    };
    let ensemble = run_pipeline(d, config)?;
    let votes = ensemble.base_predictions(x)?;
    let counts = ensemble.vote_counts(x)?;
    let base = aggregate(&counts);

    let mut report = if vote_flip_check(&counts, rho) {
        VerifyReport::new(budget, None, 1)
    } else {
        let poisoned = greedy_vote_attack(&counts, rho);
        let p = aggregate(&poisoned);
        VerifyReport::new(
            budget,
            Some(Counterexample {
                attack: Attack::Votes { counts: poisoned },
                clean_prediction: base,
                poisoned_prediction: p,
            }),
            1,
        )
    };

    let challenger = strongest_challenger(&counts, base);
    let mut plans: Vec<Vec<(u32, u32)>> = Vec::new();
    // Targeted: partitions that currently vote for the winner, in order,
    // each receiving a copy of x (nudged onto the partition) labeled as the challenger.
    let targets: Vec<(u32, u32)> = votes
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v == base)
        .map(|(i, _)| (i as u32, challenger))
        .take(rho as usize)
        .collect();
    plans.push(targets);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ u64::from(rho));
    for _ in 0..RANDOM_SPOT_CHECKS {
        let mut parts: Vec<u32> = (0..k as u32).collect();
        for i in (1..parts.len()).rev() {
            parts.swap(i, rng.random_range(0..=i));
        }
        plans.push(
            parts
                .into_iter()
                .take(rho as usize)
                .map(|p| (p, rng.random_range(0..d.num_classes())))
                .collect(),
        );
    }

    for plan in plans {
        if plan.is_empty() {
            continue;
        }
        let Some(inserted) = craft_insertions(x, k, &plan) else {
            continue;
        };
        let poisoned = d.with_inserted(&inserted)?;
        let attacked = run_pipeline(&poisoned, config)?;
        let poisoned_votes = attacked.base_predictions(x)?;
        let changed = votes.iter().zip(&poisoned_votes).filter(|(a, b)| a != b).count();
        let p = aggregate(&tally(&poisoned_votes, d.num_classes()));
        if changed > rho as usize || (p != base && report.is_sound()) {
            // The over-approximation was beaten by a concrete attack.
            report.verdict = Verdict::Counterexample;
            report.counterexample = Some(Counterexample {
                attack: Attack::Insertions {
                    items: inserted.clone(),
                },
                clean_prediction: base,
                poisoned_prediction: p,
            });
        }
        report.sets_checked += 1;
        report.spot_checks.push(SpotCheck {
            inserted,
            targeted_partitions: plan.iter().map(|&(p, _)| p).collect(),
            changed_partitions: changed,
            poisoned_prediction: p,
        });
    }
    Ok(report)
}

fn strongest_challenger(counts: &[u32], winner: u32) -> u32 {
    (0..counts.len() as u32)
        .filter(|&c| c != winner)
        .max_by_key(|&c| (u64::from(counts[c as usize]) * 2 + u64::from(c < winner), std::cmp::Reverse(c)))
        .unwrap_or(winner)
}

/// Counts after the greedy adversary spends `rho` moves.
fn greedy_vote_attack(counts: &[u32], rho: u32) -> Vec<u32> {
    let winner = aggregate(counts);
    let mut counts = counts.to_vec();
    for _ in 0..rho {
        let c = strongest_challenger(&counts, winner);
        if c == winner || counts[winner as usize] == 0 || aggregate(&counts) != winner {
            break;
        }
        counts[winner as usize] -= 1;
        counts[c as usize] += 1;
    }
    counts
}

/// Copies of `x` with pixels nudged so that each lands in its target
/// partition, labeled as requested. `None` if some target is unreachable.
fn craft_insertions(x: &Sample, k: usize, plan: &[(u32, u32)]) -> Option<Vec<LabeledSample>> {
    plan.iter()
        .map(|&(target, label)| {
            let mut features = x.features().to_vec();
            let sum: u64 = features.iter().map(|&v| u64::from(v)).sum();
            let k = k as u64;
            let up = (u64::from(target) + k - sum % k) % k;
            let headroom: u64 = features.iter().map(|&v| 255 - u64::from(v)).sum();
            if up <= headroom {
                let mut left = up;
                for v in features.iter_mut() {
                    let add = left.min(255 - u64::from(*v));
                    *v += add as u8;
                    left -= add;
                }
            } else {
                let mut left = (k - up) % k;
                if left > sum {
                    return None;
                }
                for v in features.iter_mut() {
                    let sub = left.min(u64::from(*v));
                    *v -= sub as u8;
                    left -= sub;
                }
            }
            let item = LabeledSample::new(features, label);
            debug_assert_eq!(pixel_sum_hash(&item) % k, u64::from(target));
            Some(item)
        })
        .collect()
}

/// Dispatches on the threat. Symmetric difference combines the exhaustive
/// removal oracle with the insertion adversary.
pub fn verify(
    d: &Dataset,
    config: &PipelineConfig,
    x: &Sample,
    budget: AttackBudget,
    cap: u128,
) -> Result<VerifyReport> {
    match budget.threat {
        AttackKind::LabelFlip => exhaustive_label_flip_verify(d, config, x, budget.rho, cap),
        AttackKind::Removal => exhaustive_removal_verify(d, config, x, budget.rho, cap),
        AttackKind::Insertion => insertion_adversary_verify(d, config, x, budget.rho),
        AttackKind::SymmetricDifference => {
            let removal = exhaustive_removal_verify(d, config, x, budget.rho, cap)?;
            let insertion = insertion_adversary_verify(d, config, x, budget.rho)?;
            let counterexample = removal.counterexample.or(insertion.counterexample);
            let mut report = VerifyReport::new(budget, counterexample, removal.sets_checked + insertion.sets_checked);
            report.spot_checks = insertion.spot_checks;
            Ok(report)
        }
    }
}

/// Probability that a uniformly random `s`-subset of `m` items contains at
/// least one of `r` poisoned items: `1 - C(m-r, s) / C(m, s)`.
///
/// Evaluated exactly as a reduced fraction, then rounded once to `f64`.
pub fn ra_poison_prob(m: u64, s: u64, r: u64) -> Result<f64> {
    if s > m || r > m {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= s <= m and 0 <= r <= m, got m = {m}, s = {s}, r = {r}"
        )));
    }
    if r == 0 || s == 0 {
        return Ok(0.0);
    }
    if m - r < s {
        return Ok(1.0);
    }
    // C(m-r, s) / C(m, s) = prod_{i<s} (m-r-i) / (m-i)
    let mut num = BigUint::one();
    let mut den = BigUint::one();
    for i in 0..s {
        num *= m - r - i;
        den *= m - i;
    }
    let keep = BigRational::new(num.into(), den.into());
    let p = BigRational::one() - keep;
    debug_assert!(p >= BigRational::zero());
    p.to_f64()
        .ok_or_else(|| Error::InvalidArgument("probability not representable".into()))
}

/// Fraction of base classifiers that `r` poisoned items can reach: `min(r/k, 1)`.
pub fn dpa_poison_bound(r: u64, k: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok((r as f64 / k as f64).min(1.0))
}

/// One row of the random-ablation versus partition comparison, with `k = m / s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaComparison {
    pub m: u64,
    pub s: u64,
    pub r: u64,
    pub k: u64,
    pub ra_poison_prob: f64,
    pub dpa_poison_bound: f64,
}

pub fn ra_compare(m: u64, s: u64, r: u64) -> Result<RaComparison> {
    if s == 0 {
        return Err(Error::InvalidArgument("s must be at least 1".into()));
    }
    let k = (m / s).max(1);
    Ok(RaComparison {
        m,
        s,
        r,
        k,
        ra_poison_prob: ra_poison_prob(m, s, r)?,
        dpa_poison_bound: dpa_poison_bound(r, k)?,
    })
}
