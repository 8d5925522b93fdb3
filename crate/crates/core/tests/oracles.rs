//! Oracle sweeps beyond the acceptance corpus: other strategies and the
//! insertion adversary.

mod common;

use dpa_core::ensemble::{run_pipeline, PipelineConfig};
use dpa_core::learners::LearnerConfig;
use dpa_core::partitioning::Strategy;
use dpa_core::verification::{
    exhaustive_label_flip_verify, insertion_adversary_verify, verify, AttackBudget, AttackKind,
    DEFAULT_ENUMERATION_CAP,
};

use common::*;

#[test]
fn label_flips_are_sound_under_hash_strategies() {
    for strategy in [Strategy::DpaHash, Strategy::SsdpaHash] {
        for seed in 0..40 {
            let inst = toy_instance(1000 + seed, 2);
            let cfg = PipelineConfig::new(strategy, inst.k, LearnerConfig::nearest_centroid());
            let e = run_pipeline(&inst.train, &cfg).unwrap();
            for x in &inst.probes {
                let rho = e.certify(x).unwrap().rho_bar;
                let r = exhaustive_label_flip_verify(&inst.train, &cfg, x, rho, DEFAULT_ENUMERATION_CAP).unwrap();
                assert!(r.is_sound(), "{strategy} seed {seed}: {r:?}");
            }
        }
    }
}

#[test]
fn insertion_adversary_is_sound_at_the_certificate_and_spot_checks_agree() {
    let mut spot_checks = 0;
    for seed in 0..60 {
        let inst = toy_instance(2000 + seed, 2);
        let cfg = PipelineConfig::new(Strategy::DpaHash, inst.k, LearnerConfig::nearest_centroid());
        let e = run_pipeline(&inst.train, &cfg).unwrap();
        for x in &inst.probes {
            let cert = e.certify(x).unwrap();
            let r = insertion_adversary_verify(&inst.train, &cfg, x, cert.rho_bar).unwrap();
            assert!(r.is_sound(), "seed {seed}: {r:?}");
            for s in &r.spot_checks {
                assert!(s.changed_partitions <= cert.rho_bar as usize);
                assert_eq!(s.poisoned_prediction, cert.predicted);
            }
            spot_checks += r.spot_checks.len();
            // One vote past the certificate, the vote-level adversary always wins.
            let beyond = insertion_adversary_verify(&inst.train, &cfg, x, cert.rho_bar + 1).unwrap();
            assert!(!beyond.is_sound(), "seed {seed}: {beyond:?}");
        }
    }
    assert!(spot_checks > 50, "only {spot_checks} concrete insertions were tried");
}

#[test]
fn symmetric_difference_combines_both_oracles() {
    let inst = toy_instance(7, 1);
    let cfg = PipelineConfig::new(Strategy::DpaHash, inst.k, LearnerConfig::nearest_centroid());
    let x = &inst.probes[0];
    let rho = run_pipeline(&inst.train, &cfg).unwrap().certify(x).unwrap().rho_bar;
    let budget = AttackBudget { threat: AttackKind::SymmetricDifference, rho };
    let r = verify(&inst.train, &cfg, x, budget, DEFAULT_ENUMERATION_CAP).unwrap();
    assert!(r.is_sound(), "{r:?}");
    assert_eq!(r.threat, AttackKind::SymmetricDifference);
}
