//! Content-addressed blob storage and append-only run manifests.
//!
//! A run directory looks like this:
//!
//! ```text
//! <run>/
//!   .lock                 advisory writer lock
//!   manifest.json         RunManifest, replaced atomically on every append
//!   objects/ab/cdef…      blobs, named by the SHA-256 of their bytes
//!   cache/softlabels/…    teacher-output cache (see `distill`)
//!   reports/…             tables and CSVs written by the harness
//! ```
//!
//! Every write goes to a temporary file in the same directory, is synced, and
//! is then renamed over the destination, so readers never observe a partial
//! file.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{LatkdError, Result};
use crate::hash::{canonical_json, sha256_hex};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".lock";

/// Writes `bytes` to `path` through a synced temporary sibling and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| LatkdError::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("blob");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = File::create(&tmp).map_err(|e| LatkdError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| LatkdError::io(&tmp, e))?;
        f.sync_all().map_err(|e| LatkdError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| LatkdError::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BlobStore {
    root: PathBuf,
}

impl BlobStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn is_hash(hash: &str) -> bool {
        hash.len() == 64 && hash.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
    }

    pub fn path_of(&self, hash: &str) -> PathBuf {
        self.root.join(&hash[..2]).join(&hash[2..])
    }

    pub fn contains(&self, hash: &str) -> bool {
        Self::is_hash(hash) && self.path_of(hash).is_file()
    }

    /// Stores `bytes` and returns their hash. Identical bytes are stored once.
    pub fn put_blob(&self, bytes: &[u8]) -> Result<String> {
        let hash = sha256_hex(bytes);
        let path = self.path_of(&hash);
        if !path.is_file() {
            atomic_write(&path, bytes)?;
        }
        Ok(hash)
    }

    /// Reads a blob and verifies it still hashes to its name.
    pub fn get_blob(&self, hash: &str) -> Result<Vec<u8>> {
        if !Self::is_hash(hash) {
            return Err(LatkdError::UnknownHash(hash.to_string()));
        }
        let path = self.path_of(hash);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(LatkdError::UnknownHash(hash.to_string()))
            }
            Err(e) => return Err(LatkdError::io(path, e)),
        };
        let actual = sha256_hex(&bytes);
        if actual != hash {
            return Err(LatkdError::Integrity {
                expected: hash.to_string(),
                actual,
            });
        }
        Ok(bytes)
    }
}

/// One trained model in a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    /// Chain name, e.g. `mlp-latkd/seed-3`. Frame indices are unique per chain.
    pub chain: String,
    pub index: usize,
    pub learner: String,
    pub model_hash: String,
    /// Human-readable description of the rows the model was trained on.
    pub training_window: String,
    pub config_hash: String,
    pub rows_consumed: usize,
    pub metrics: BTreeMap<String, f64>,
    /// Excluded from [`RunManifest::content_hash`].
    pub wall_clock_seconds: f64,
    /// Excluded from [`RunManifest::content_hash`].
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub run_id: String,
    pub config: Value,
    #[serde(default)]
    pub parent_run: Option<String>,
    pub frames: Vec<FrameEntry>,
    /// Named artifacts other than frame models (reports, schemas).
    #[serde(default)]
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct HashedEntry<'a> {
    chain: &'a str,
    index: usize,
    learner: &'a str,
    model_hash: &'a str,
    training_window: &'a str,
    config_hash: &'a str,
    rows_consumed: usize,
    metrics: &'a BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct HashedManifest<'a> {
    format_version: u32,
    run_id: &'a str,
    config: &'a Value,
    frames: Vec<HashedEntry<'a>>,
    artifacts: &'a BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(run_id: impl Into<String>, config: Value) -> Self {
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            run_id: run_id.into(),
            config,
            parent_run: None,
            frames: Vec::new(),
            artifacts: BTreeMap::new(),
        }
    }

    /// Hash of everything that is a pure function of the configuration and
    /// seeds. Timings, creation timestamps and the resume lineage are left out
    /// so reruns and resumed runs compare equal.
    pub fn content_hash(&self) -> Result<String> {
        let view = HashedManifest {
            format_version: self.format_version,
            run_id: &self.run_id,
            config: &self.config,
            frames: self
                .frames
                .iter()
                .map(|e| HashedEntry {
                    chain: &e.chain,
                    index: e.index,
                    learner: &e.learner,
                    model_hash: &e.model_hash,
                    training_window: &e.training_window,
                    config_hash: &e.config_hash,
                    rows_consumed: e.rows_consumed,
                    metrics: &e.metrics,
                })
                .collect(),
            artifacts: &self.artifacts,
        };
        Ok(sha256_hex(&canonical_json(&view)?))
    }

    pub fn chain(&self, chain: &str) -> impl Iterator<Item = &FrameEntry> {
        let chain = chain.to_string();
        self.frames.iter().filter(move |e| e.chain == chain)
    }

    pub fn entry(&self, chain: &str, index: usize) -> Option<&FrameEntry> {
        self.frames.iter().find(|e| e.chain == chain && e.index == index)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(s)?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(LatkdError::FormatVersion {
                found: m.format_version,
                expected: MANIFEST_FORMAT_VERSION,
            });
        }
        Ok(m)
    }
}

/// Exclusive writer handle on a run directory. The lock is released on drop.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    store: BlobStore,
    manifest: RunManifest,
    _lock: File,
}

impl RunDir {
    /// Opens (or creates) a run directory. An existing manifest is loaded and
    /// must carry the same run id; otherwise a fresh manifest is written.
    pub fn open(root: impl Into<PathBuf>, run_id: &str, config: Value) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| LatkdError::io(&root, e))?;
        let lock_path = root.join(LOCK_FILE);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|e| LatkdError::io(&lock_path, e))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(LatkdError::Locked(root)),
            Err(fs::TryLockError::Error(e)) => return Err(LatkdError::io(lock_path, e)),
        }
        let store = BlobStore::new(root.join("objects"));
        let manifest_path = root.join(MANIFEST_FILE);
        let manifest = if manifest_path.is_file() {
            let text = fs::read_to_string(&manifest_path).map_err(|e| LatkdError::io(&manifest_path, e))?;
            let m = RunManifest::from_json(&text)?;
            if m.run_id != run_id {
                return Err(LatkdError::InvalidConfig(format!(
                    "run directory belongs to run `{}`, not `{run_id}`",
                    m.run_id
                )));
            }
            if m.config != config {
                return Err(LatkdError::InvalidConfig(
                    "run directory was created with a different configuration".into(),
                ));
            }
            m
        } else {
            let m = RunManifest::new(run_id, config);
            atomic_write(&manifest_path, m.to_json_pretty()?.as_bytes())?;
            m
        };
        Ok(Self {
            root,
            store,
            manifest,
            _lock: lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn store(&self) -> &BlobStore {
        &self.store
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    /// Records that this run continues an earlier, interrupted one.
    pub fn set_parent_run(&mut self, parent: impl Into<String>) -> Result<()> {
        self.manifest.parent_run = Some(parent.into());
        self.persist()
    }

    /// Appends a frame entry after checking that its model blob exists and that
    /// indices in the chain stay strictly increasing.
    pub fn append_frame(&mut self, entry: FrameEntry) -> Result<&RunManifest> {
        if !self.store.contains(&entry.model_hash) {
            return Err(LatkdError::UnknownHash(entry.model_hash.clone()));
        }
        if let Some(last) = self.manifest.chain(&entry.chain).map(|e| e.index).max() {
            if entry.index <= last {
                return Err(LatkdError::DuplicateFrame {
                    kind: entry.chain.clone(),
                    frame: entry.index,
                });
            }
        }
        let mut next = self.manifest.clone();
        next.frames.push(entry);
        self.write_manifest(&next)?;
        self.manifest = next;
        Ok(&self.manifest)
    }

    /// Stores `bytes` as a blob and names it in the manifest.
    pub fn put_artifact(&mut self, name: &str, bytes: &[u8]) -> Result<String> {
        let hash = self.store.put_blob(bytes)?;
        let mut next = self.manifest.clone();
        next.artifacts.insert(name.to_string(), hash.clone());
        self.write_manifest(&next)?;
        self.manifest = next;
        Ok(hash)
    }

    fn persist(&self) -> Result<()> {
        self.write_manifest(&self.manifest)
    }

    fn write_manifest(&self, m: &RunManifest) -> Result<()> {
        atomic_write(&self.root.join(MANIFEST_FILE), m.to_json_pretty()?.as_bytes())
    }
}

/// Reads a manifest without taking the writer lock.
pub fn read_manifest(run_root: &Path) -> Result<RunManifest> {
    let path = run_root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| LatkdError::io(&path, e))?;
    RunManifest::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};
    use serde_json::json;

    fn entry(store: &BlobStore, chain: &str, index: usize) -> FrameEntry {
        let model_hash = store.put_blob(format!("model {chain} {index}").as_bytes()).unwrap();
        FrameEntry {
            chain: chain.into(),
            index,
            learner: "mlp".into(),
            model_hash,
            training_window: format!("frame {index}"),
            config_hash: "c".into(),
            rows_consumed: 10,
            metrics: BTreeMap::new(),
            wall_clock_seconds: index as f64,
            created_at: "now".into(),
        }
    }

    #[test]
    fn one_mib_round_trip_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::new(dir.path());
        let mut bytes = vec![0u8; 1 << 20];
        rand_chacha::ChaCha8Rng::seed_from_u64(1).fill_bytes(&mut bytes);
        let h1 = store.put_blob(&bytes).unwrap();
        let h2 = store.put_blob(&bytes).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(store.get_blob(&h1).unwrap(), bytes);
        let shard = dir.path().join(&h1[..2]);
        assert_eq!(fs::read_dir(shard).unwrap().count(), 1);
    }

    #[test]
    fn unknown_and_corrupted_blobs() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::new(dir.path());
        let missing = sha256_hex(b"never stored");
        assert!(matches!(store.get_blob(&missing), Err(LatkdError::UnknownHash(_))));
        assert!(matches!(store.get_blob("../../etc"), Err(LatkdError::UnknownHash(_))));
        let h = store.put_blob(b"payload").unwrap();
        fs::write(store.path_of(&h), b"tampered").unwrap();
        assert!(matches!(store.get_blob(&h), Err(LatkdError::Integrity { .. })));
    }

    #[test]
    fn append_is_ordered_per_chain() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::open(dir.path(), "r", json!({})).unwrap();
        let store = run.store().clone();
        run.append_frame(entry(&store, "a", 0)).unwrap();
        run.append_frame(entry(&store, "b", 0)).unwrap();
        run.append_frame(entry(&store, "a", 1)).unwrap();
        assert!(matches!(
            run.append_frame(entry(&store, "a", 1)),
            Err(LatkdError::DuplicateFrame { frame: 1, .. })
        ));
        let mut dangling = entry(&store, "a", 2);
        dangling.model_hash = sha256_hex(b"nothing");
        assert!(matches!(run.append_frame(dangling), Err(LatkdError::UnknownHash(_))));
        assert_eq!(read_manifest(dir.path()).unwrap().frames.len(), 3);
    }

    #[test]
    fn second_writer_is_locked_out() {
        let dir = tempfile::tempdir().unwrap();
        let _first = RunDir::open(dir.path(), "r", json!({})).unwrap();
        assert!(matches!(
            RunDir::open(dir.path(), "r", json!({})),
            Err(LatkdError::Locked(_))
        ));
    }

    #[test]
    fn reopen_keeps_manifest_and_checks_identity() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut run = RunDir::open(dir.path(), "r", json!({"k": 1})).unwrap();
            let store = run.store().clone();
            run.append_frame(entry(&store, "a", 0)).unwrap();
        }
        let run = RunDir::open(dir.path(), "r", json!({"k": 1})).unwrap();
        assert_eq!(run.manifest().frames.len(), 1);
        drop(run);
        assert!(RunDir::open(dir.path(), "other", json!({"k": 1})).is_err());
        assert!(RunDir::open(dir.path(), "r", json!({"k": 2})).is_err());
    }

    #[test]
    fn hash_ignores_timings() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::new(dir.path());
        let mut a = RunManifest::new("r", json!({}));
        a.frames.push(entry(&store, "a", 0));
        let mut b = a.clone();
        b.frames[0].wall_clock_seconds = 99.0;
        b.frames[0].created_at = "later".into();
        b.parent_run = Some("p".into());
        assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
        b.frames[0].rows_consumed = 11;
        assert_ne!(a.content_hash().unwrap(), b.content_hash().unwrap());
    }
}
