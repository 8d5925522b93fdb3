//! On-disk run layout, the manifest, and the content-addressed model cache.
//!
//! ```text
//! <output_dir>/manifest.json     config with defaults, input and artifact hashes
//! <output_dir>/plan.json         partition summary
//! <output_dir>/plan.bin          item-level assignment
//! <output_dir>/feature_map.bin   map shared by all members
//! <cache>/models/<key>.bin       one member: model plus optional local map
//! <cache>/maps/<key>.bin         fitted shared maps
//! ```
//!
//! A member's cache key hashes its partition contents, the learner, the
//! feature map it reads through, its seed and the class universe. Changing a
//! few training items therefore retrains only the partitions they land in.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dpa_core::dataset::ContentHash;
use dpa_core::learners::{BaseModel, FeatureMap};
use dpa_core::partitioning::PlanSummary;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MANIFEST_VERSION: u32 = 1;
pub const CACHE_ENV: &str = "DPA_CACHE_DIR";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: ContentHash,
}

impl InputFile {
    pub fn hash(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(InputFile {
            path: path.to_path_buf(),
            sha256: ContentHash::of(&bytes),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub index: usize,
    pub key: String,
    pub partition_size: usize,
    pub blob_sha256: ContentHash,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub config: RunConfig,
    pub inputs: Vec<InputFile>,
    pub dataset_hash: ContentHash,
    pub m: usize,
    pub dim: usize,
    pub num_classes: u32,
    pub plan: PlanSummary,
    pub plan_hash: ContentHash,
    pub plan_file_sha256: ContentHash,
    pub feature_map_sha256: ContentHash,
    pub feature_map_content_hash: ContentHash,
    pub learner_hash: ContentHash,
    pub feature_map_config_hash: ContentHash,
    pub cache_dir: PathBuf,
    pub models: Vec<ModelEntry>,
    pub trained: usize,
    pub reused: usize,
    pub warnings: Vec<String>,
}

/// A cached ensemble member.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoredMember {
    pub model: BaseModel,
    pub local_map: Option<FeatureMap>,
}

pub struct Layout {
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
}

impl Layout {
    /// `DPA_CACHE_DIR` wins over `fallback`, which defaults to `<output_dir>/cache`.
    pub fn new(output_dir: &Path, fallback: Option<&Path>) -> Self {
        let cache_dir = std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .or_else(|| fallback.map(Path::to_path_buf))
            .unwrap_or_else(|| output_dir.join("cache"));
        Layout {
            output_dir: output_dir.to_path_buf(),
            cache_dir,
        }
    }

    pub fn manifest(&self) -> PathBuf {
        self.output_dir.join("manifest.json")
    }
    pub fn plan_summary(&self) -> PathBuf {
        self.output_dir.join("plan.json")
    }
    pub fn plan_sidecar(&self) -> PathBuf {
        self.output_dir.join("plan.bin")
    }
    pub fn feature_map(&self) -> PathBuf {
        self.output_dir.join("feature_map.bin")
    }
    pub fn certificates(&self) -> PathBuf {
        self.output_dir.join("certificates.jsonl")
    }
    pub fn curve(&self) -> PathBuf {
        self.output_dir.join("curve.csv")
    }
    pub fn summary(&self) -> PathBuf {
        self.output_dir.join("summary.json")
    }
    pub fn data(&self, role: &str) -> PathBuf {
        self.output_dir.join("data").join(format!("{role}.dpad"))
    }
    pub fn model_blob(&self, key: &str) -> PathBuf {
        self.cache_dir.join("models").join(format!("{key}.bin"))
    }
    pub fn map_blob(&self, key: &str) -> PathBuf {
        self.cache_dir.join("maps").join(format!("{key}.bin"))
    }
}

/// Writes through a temporary file so readers never see a partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Reads `path` and fails unless its hash matches.
pub fn read_checked(path: &Path, expected: ContentHash, what: &str) -> anyhow::Result<Vec<u8>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {what} {}", path.display()))?;
    let actual = ContentHash::of(&bytes);
    if actual != expected {
        bail!(
            "stale artifact: {what} {} has hash {actual}, manifest records {expected}; rerun `dpa train`",
            path.display()
        );
    }
    Ok(bytes)
}

/// Stable digest of a JSON-serializable key.
pub fn key_of<T: Serialize>(value: &T) -> String {
    ContentHash::of(&serde_json::to_vec(value).expect("cache key serializes")).to_hex()
}
