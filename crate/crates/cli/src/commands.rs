use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use dpa_core::binary_cluster::{binary_certify, fit_two_means_model};
use dpa_core::dataset::{class_histogram, encode_dataset, load_dataset, ContentHash, DataSource, Dataset};
use dpa_core::ensemble::{
    fit_shared_map, from_json_lines, map_scope, provenance, train_member, CertifiedCurve, Ensemble,
    Evaluation, MapScope, Threat,
};
use dpa_core::learners::FeatureMap;
use dpa_core::partitioning::{partition, PartitionPlan, PlanSummary};
use dpa_core::verification::{ra_compare, verify, AttackBudget, AttackKind};
use rayon::prelude::*;
use serde_json::json;

use crate::artifacts::{
    key_of, read_checked, read_json, write_atomic, InputFile, Layout, Manifest, ModelEntry, StoredMember,
    MANIFEST_VERSION,
};
use crate::config::RunConfig;

fn print_json(value: &serde_json::Value) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load(source: &DataSource, num_classes: Option<u32>, equalize: bool) -> anyhow::Result<Dataset> {
    let names: Vec<String> = source.paths().iter().map(|p| p.display().to_string()).collect();
    let d = load_dataset(source, num_classes).with_context(|| format!("loading {}", names.join(", ")))?;
    if equalize {
        Ok(d.equalized()?)
    } else {
        Ok(d)
    }
}

fn load_train(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    load(&cfg.train, cfg.num_classes, cfg.equalize)
}

fn load_test(cfg: &RunConfig, train_classes: u32) -> anyhow::Result<Dataset> {
    load(cfg.test_source()?, Some(train_classes), cfg.equalize)
}

fn input_hashes(source: &DataSource) -> anyhow::Result<Vec<InputFile>> {
    source.paths().into_iter().map(|p| InputFile::hash(p)).collect()
}

pub fn ingest(cfg: &RunConfig) -> anyhow::Result<()> {
    let layout = Layout::new(&cfg.output_dir, None);
    let train = load_train(cfg)?;
    let mut sets = vec![("train", train.clone())];
    if cfg.test.is_some() {
        sets.push(("test", load_test(cfg, train.num_classes())?));
    }
    let mut report = Vec::new();
    for (role, d) in sets {
        let path = layout.data(role);
        write_atomic(&path, &encode_dataset(&d))?;
        report.push(json!({
            "role": role,
            "path": path,
            "m": d.len(),
            "dim": d.dim(),
            "num_classes": d.num_classes(),
            "collapsed_duplicates": d.collapsed_duplicates(),
            "class_histogram": class_histogram(&d),
            "content_hash": d.content_hash(),
        }));
    }
    print_json(&json!(report))
}

fn shared_map(cfg: &RunConfig, layout: &Layout, d: &Dataset, plan: &PartitionPlan) -> anyhow::Result<(FeatureMap, bool)> {
    let fmap = cfg.feature_map_config();
    if map_scope(plan.strategy(), &fmap) == MapScope::PerPartition
        || fmap.kind == dpa_core::learners::FeatureMapKind::Identity
    {
        return Ok((fit_shared_map(d, plan, &fmap)?, false));
    }
    let key = key_of(&json!({ "v": 1, "dataset": d.content_hash(), "feature_map": fmap }));
    let path = layout.map_blob(&key);
    if let Ok(bytes) = std::fs::read(&path) {
        match bincode::deserialize::<FeatureMap>(&bytes) {
            Ok(map) => return Ok((map, true)),
            Err(e) => log::warn!("ignoring unreadable cached map {}: {e}", path.display()),
        }
    }
    let map = fit_shared_map(d, plan, &fmap)?;
    write_atomic(&path, &bincode::serialize(&map)?)?;
    Ok((map, false))
}

pub fn train(cfg: &RunConfig) -> anyhow::Result<()> {
    let start = Instant::now();
    let layout = Layout::new(&cfg.output_dir, None);
    let inputs = input_hashes(&cfg.train)?;
    let d = load_train(cfg)?;
    let mut warnings = Vec::new();
    if cfg.k > d.len() {
        let w = format!("k = {} exceeds m = {}; some partitions are empty and fall back to a constant model", cfg.k, d.len());
        log::warn!("{w}");
        warnings.push(w);
    }
    let plan = partition(&d, cfg.strategy, cfg.k, cfg.duplicates)?;
    let (map, map_cached) = shared_map(cfg, &layout, &d, &plan)?;
    let learner = cfg.learner_config();
    let fmap_cfg = cfg.feature_map_config();
    let prov = provenance(d.content_hash(), &plan, &learner, &fmap_cfg);
    let scope = map_scope(plan.strategy(), &fmap_cfg);
    let map_ref = match scope {
        MapScope::Shared => json!({ "shared": map.content_hash() }),
        MapScope::PerPartition => json!({ "per-partition": prov.feature_map_config_hash }),
    };
    let sorted = d.canonical_sort();
    let parts = plan.partitions();

    // Workers only compute; all writes happen below, in partition order.
    let members: Vec<(ModelEntry, StoredMember, Option<Vec<u8>>)> = parts
        .par_iter()
        .enumerate()
        .map(|(i, idx)| -> anyhow::Result<_> {
            let items: Vec<_> = idx.iter().map(|&j| &sorted[j]).collect();
            let key = key_of(&json!({
                "v": 1,
                "partition": ContentHash::of(&bincode::serialize(&items)?),
                "learner": prov.learner_hash,
                "map": map_ref,
                "seed": i,
                "num_classes": d.num_classes(),
                "dim": d.dim(),
            }));
            let path = layout.model_blob(&key);
            if let Ok(bytes) = std::fs::read(&path) {
                match bincode::deserialize::<StoredMember>(&bytes) {
                    Ok(stored) if stored.model.partition_index == i => {
                        let entry = ModelEntry {
                            index: i,
                            key,
                            partition_size: idx.len(),
                            blob_sha256: ContentHash::of(&bytes),
                        };
                        return Ok((entry, stored, None));
                    }
                    _ => log::warn!("retraining member {i}: cached blob {} unusable", path.display()),
                }
            }
            let (model, local_map) = train_member(
                &sorted,
                idx,
                i,
                d.num_classes(),
                d.dim(),
                plan.strategy(),
                &learner,
                &fmap_cfg,
                &map,
            )?;
            let stored = StoredMember { model, local_map };
            let bytes = bincode::serialize(&stored)?;
            let entry = ModelEntry {
                index: i,
                key,
                partition_size: idx.len(),
                blob_sha256: ContentHash::of(&bytes),
            };
            Ok((entry, stored, Some(bytes)))
        })
        .collect::<anyhow::Result<_>>()?;

    let mut entries = Vec::with_capacity(members.len());
    let mut trained = 0;
    for (entry, _, bytes) in &members {
        if let Some(bytes) = bytes {
            write_atomic(&layout.model_blob(&entry.key), bytes)?;
            trained += 1;
        }
        entries.push(entry.clone());
    }
    let plan_bytes = plan.encode_assignment();
    let map_bytes = bincode::serialize(&map)?;
    write_atomic(&layout.plan_sidecar(), &plan_bytes)?;
    write_atomic(&layout.plan_summary(), &serde_json::to_vec_pretty(&plan.summary())?)?;
    write_atomic(&layout.feature_map(), &map_bytes)?;
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        config: cfg.clone(),
        inputs,
        dataset_hash: d.content_hash(),
        m: d.len(),
        dim: d.dim(),
        num_classes: d.num_classes(),
        plan: plan.summary(),
        plan_hash: prov.plan_hash,
        plan_file_sha256: ContentHash::of(&plan_bytes),
        feature_map_sha256: ContentHash::of(&map_bytes),
        feature_map_content_hash: map.content_hash(),
        learner_hash: prov.learner_hash,
        feature_map_config_hash: prov.feature_map_config_hash,
        cache_dir: layout.cache_dir.clone(),
        models: entries,
        trained,
        reused: members.len() - trained,
        warnings,
    };
    write_atomic(&layout.manifest(), &serde_json::to_vec_pretty(&manifest)?)?;
    print_json(&json!({
        "manifest": layout.manifest(),
        "k": cfg.k,
        "m": d.len(),
        "trained": manifest.trained,
        "reused": manifest.reused,
        "feature_map_cached": map_cached,
        "warnings": manifest.warnings,
        "wall_time_ms": start.elapsed().as_millis() as u64,
    }))
}

/// Reloads a trained ensemble, refusing if anything it depends on changed.
fn load_ensemble(cfg: &RunConfig) -> anyhow::Result<(Manifest, Layout, Ensemble)> {
    let probe = Layout::new(&cfg.output_dir, None);
    let manifest: Manifest = read_json(&probe.manifest()).context("no trained ensemble; run `dpa train` first")?;
    if manifest.manifest_version != MANIFEST_VERSION {
        bail!("unsupported manifest version {}", manifest.manifest_version);
    }
    if &manifest.config != cfg {
        bail!("stale artifact: the config changed since `dpa train`; rerun it");
    }
    for input in &manifest.inputs {
        let now = InputFile::hash(&input.path)?;
        if now.sha256 != input.sha256 {
            bail!(
                "stale artifact: input {} changed since `dpa train` (hash {} vs recorded {}); rerun it",
                input.path.display(),
                now.sha256,
                input.sha256
            );
        }
    }
    let layout = Layout::new(&cfg.output_dir, Some(&manifest.cache_dir));
    let summary: PlanSummary = read_json(&layout.plan_summary())?;
    if summary != manifest.plan {
        bail!("stale artifact: plan.json disagrees with the manifest");
    }
    let sidecar = read_checked(&layout.plan_sidecar(), manifest.plan_file_sha256, "plan")?;
    let plan = PartitionPlan::decode(&summary, &sidecar)?;
    let map: FeatureMap = bincode::deserialize(&read_checked(
        &layout.feature_map(),
        manifest.feature_map_sha256,
        "feature map",
    )?)?;
    let mut models = Vec::with_capacity(manifest.models.len());
    let mut locals = Vec::new();
    for entry in &manifest.models {
        let bytes = read_checked(&layout.model_blob(&entry.key), entry.blob_sha256, "model blob")?;
        let stored: StoredMember = bincode::deserialize(&bytes)?;
        models.push(stored.model);
        locals.extend(stored.local_map);
    }
    let prov = provenance(manifest.dataset_hash, &plan, &cfg.learner_config(), &cfg.feature_map_config());
    if prov.plan_hash != manifest.plan_hash {
        bail!("stale artifact: plan hash mismatch");
    }
    let e = Ensemble::from_parts(models, plan, map, locals, manifest.num_classes, prov)?;
    Ok((manifest, layout, e))
}

pub fn certify(cfg: &RunConfig) -> anyhow::Result<()> {
    let (manifest, layout, e) = load_ensemble(cfg)?;
    let test = load_test(cfg, manifest.num_classes)?;
    let eval: Evaluation = e.evaluate(&test)?;
    let curve = eval.curve(cfg.rho_max);
    let summary = eval.summary();
    write_atomic(&layout.certificates(), eval.json_lines().as_bytes())?;
    write_atomic(&layout.curve(), curve.to_csv().as_bytes())?;
    let summary_json = serde_json::to_value(&summary)?;
    write_atomic(&layout.summary(), &serde_json::to_vec_pretty(&summary_json)?)?;
    print_json(&json!({
        "certificates": layout.certificates(),
        "curve": layout.curve(),
        "summary": summary_json,
    }))
}

pub fn curve(cfg: &RunConfig, rho_max: Option<u32>) -> anyhow::Result<()> {
    let layout = Layout::new(&cfg.output_dir, None);
    let text = std::fs::read_to_string(layout.certificates())
        .context("no certificates; run `dpa certify` first")?;
    let records = from_json_lines(&text)?;
    let k = records.first().map_or(cfg.k as u32, |r| r.counts.iter().sum());
    let rho_max = rho_max.or(cfg.rho_max).unwrap_or(k / 2);
    let curve = CertifiedCurve::from_records(&records, rho_max, Threat::from(cfg.strategy));
    print!("{}", curve.to_csv());
    Ok(())
}

pub fn verify_cmd(
    cfg: &RunConfig,
    threat: AttackKind,
    rho: Option<u32>,
    sample: usize,
    cap: Option<u64>,
) -> anyhow::Result<ExitCode> {
    let start = Instant::now();
    let train = load_train(cfg)?;
    let test = load_test(cfg, train.num_classes())?;
    let Some(x) = test.items().get(sample) else {
        bail!("sample index {sample} out of range for a test set of {} items", test.len());
    };
    let pipeline = cfg.pipeline();
    let rho = match rho {
        Some(r) => r,
        None => dpa_core::ensemble::run_pipeline(&train, &pipeline)?.certify(&x.sample)?.rho_bar,
    };
    let cap = u128::from(cap.unwrap_or(cfg.enumeration_cap));
    let result = verify(&train, &pipeline, &x.sample, AttackBudget { threat, rho }, cap);
    let wall_time_ms = start.elapsed().as_millis() as u64;
    match result {
        Ok(report) => {
            let mut out = serde_json::to_value(&report)?;
            out["wall_time_ms"] = json!(wall_time_ms);
            print_json(&out)?;
            Ok(if report.is_sound() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Err(dpa_core::Error::CapExceeded { required, cap }) => {
            print_json(&json!({
                "threat": threat,
                "rho": rho,
                "verdict": "refused",
                "required_sets": required.to_string(),
                "cap": cap.to_string(),
                "sets_checked": 0,
                "wall_time_ms": wall_time_ms,
            }))?;
            Ok(ExitCode::from(3))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn ra_compare_cmd(m: u64, s: u64, r: u64) -> anyhow::Result<()> {
    let row = ra_compare(m, s, r)?;
    let mut out = serde_json::to_value(&row)?;
    out["difference"] = json!(row.ra_poison_prob - row.dpa_poison_bound);
    print_json(&out)
}

pub fn binary2means(cfg: &RunConfig, class_a: u32, class_b: u32, max_iters: usize) -> anyhow::Result<()> {
    // Both sets keep all their classes until filtered.
    let train = load(&cfg.train, cfg.num_classes, cfg.equalize)?;
    let test = load_test(cfg, train.num_classes())?;
    let train = train.filter_binary(class_a, class_b)?;
    let test = test.filter_binary(class_a, class_b)?;
    let model = fit_two_means_model(&train, max_iters)?;
    let report = binary_certify(&test, &model)?;
    print_json(&json!({
        "clean_accuracy": report.clean_accuracy,
        "rho_bar": report.rho_bar,
        "votes": report.votes,
        "m": report.m,
    }))
}

pub fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    RunConfig::load(path)
}
