//! End to end through files: write a dataset in each supported format, load
//! it back, train, and certify.

mod common;

use dpa_core::dataset::{encode_dataset, load_dataset, write_idx, DataSource, Dataset, LabeledSample};
use dpa_core::ensemble::{from_json_lines, run_pipeline, PipelineConfig};
use dpa_core::learners::{FeatureMapConfig, LearnerConfig};
use dpa_core::partitioning::Strategy;

use common::*;

fn grid() -> Dataset {
    // 4x4 images: class = which half holds the bright block.
    let items = (0..40u8)
        .map(|i| {
            let class = u32::from(i % 2);
            let mut px = vec![i; 16];
            for r in 0..4 {
                for c in 0..2 {
                    px[r * 4 + c + 2 * class as usize] = 200 + i;
                }
            }
            LabeledSample::new(px, class)
        })
        .collect();
    Dataset::new(16, 2, items).unwrap()
}

#[test]
fn every_format_loads_the_same_item_set() {
    let d = grid();
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = write_idx(&d, 4, 4).unwrap();
    std::fs::write(dir.path().join("img.idx"), img).unwrap();
    std::fs::write(dir.path().join("lab.idx"), lab).unwrap();
    let csv: String = d
        .items()
        .iter()
        .map(|t| {
            let mut row: Vec<String> = t.sample.features().iter().map(u8::to_string).collect();
            row.push(t.label.to_string());
            row.join(",") + "\n"
        })
        .collect();
    std::fs::write(dir.path().join("d.csv"), format!("{},label\n{csv}", (0..16).map(|i| format!("p{i}")).collect::<Vec<_>>().join(","))).unwrap();
    std::fs::write(dir.path().join("d.dpad"), encode_dataset(&d)).unwrap();

    let sources = [
        DataSource::Idx { images: dir.path().join("img.idx"), labels: dir.path().join("lab.idx") },
        DataSource::Csv { path: dir.path().join("d.csv"), has_header: true },
        DataSource::Container { path: dir.path().join("d.dpad") },
    ];
    for s in &sources {
        let loaded = load_dataset(s, Some(2)).unwrap();
        assert_eq!(loaded, d, "{s:?}");
        assert_eq!(loaded.content_hash(), d.content_hash());
    }
}

#[test]
fn certificates_round_trip_and_respect_invariants() {
    let d = grid();
    for strategy in [Strategy::DpaHash, Strategy::SsdpaSort, Strategy::SsdpaHash] {
        for (learner, fmap) in [
            (LearnerConfig::nearest_centroid(), FeatureMapConfig::identity()),
            (LearnerConfig::logistic(), FeatureMapConfig::pca(3)),
            (LearnerConfig::nearest_centroid(), FeatureMapConfig::kmeans_bag(3, 1)),
        ] {
            let cfg = PipelineConfig::new(strategy, 5, learner).with_feature_map(fmap);
            let e = run_pipeline(&d, &cfg).unwrap();
            let eval = e.evaluate(&d).unwrap();
            let label = format!("{strategy} {:?}", cfg.learner.kind);
            assert!(evaluation_violations(&eval, &label).is_empty(), "{label}");
            let text = eval.json_lines();
            assert_eq!(from_json_lines(&text).unwrap(), eval.records);
            // Separable data: the ensemble should get most of it right.
            assert!(eval.summary().clean_accuracy >= 0.9, "{label}: {:?}", eval.summary());
        }
    }
}

#[test]
fn shuffled_input_gives_identical_certificates_for_every_configuration() {
    let d = grid();
    let copy = shuffled(&d, 99);
    for strategy in [Strategy::DpaHash, Strategy::SsdpaSort] {
        for fmap in [FeatureMapConfig::identity(), FeatureMapConfig::pca(4), FeatureMapConfig::kmeans_bag(4, 3)] {
            let cfg = PipelineConfig::new(strategy, 4, LearnerConfig::logistic()).with_feature_map(fmap);
            let a = run_pipeline(&d, &cfg).unwrap().evaluate(&d).unwrap().json_lines();
            let b = run_pipeline(&copy, &cfg).unwrap().evaluate(&d).unwrap().json_lines();
            assert_eq!(a, b, "{strategy} {:?}", cfg.feature_map.kind);
        }
    }
}
