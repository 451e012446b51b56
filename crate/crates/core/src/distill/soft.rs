//! Teacher outputs on a frame and their on-disk cache.

use std::fs;
use std::io::{Cursor, Read};
use std::path::PathBuf;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::data::DesignMatrix;
use crate::error::{LatkdError, Result};
use crate::hash::sha256_hex;
use crate::mlp::validate_distributions;
use crate::model::{Model, Scorer};
use crate::registry::atomic_write;

const MAGIC: &[u8; 8] = b"LATKDSL1";
const DIGEST_LEN: usize = 32;

/// Output of one teacher model on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMatrix {
    pub model_id: String,
    pub dataset_fingerprint: String,
    pub probs: Array2<f64>,
}

impl SoftLabelMatrix {
    pub fn new(model_id: String, dataset_fingerprint: String, probs: Array2<f64>) -> Result<Self> {
        if probs.ncols() != 2 {
            return Err(LatkdError::DimensionMismatch {
                expected: 2,
                actual: probs.ncols(),
            });
        }
        validate_distributions(probs.view())?;
        Ok(Self {
            model_id,
            dataset_fingerprint,
            probs,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.probs.nrows()
    }

    pub fn positive(&self) -> Vec<f64> {
        self.probs.column(1).to_vec()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.probs.len() * 8 + 160);
        out.extend_from_slice(MAGIC);
        for s in [&self.model_id, &self.dataset_fingerprint] {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        out.extend_from_slice(&(self.n_rows() as u64).to_le_bytes());
        for v in self.probs.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + DIGEST_LEN {
            return Err(LatkdError::Malformed("soft-label file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        let actual = Sha256::digest(body);
        if actual.as_slice() != digest {
            return Err(LatkdError::Integrity {
                expected: hex::encode(digest),
                actual: hex::encode(actual),
            });
        }
        let mut r = Cursor::new(body);
        let mut magic = [0u8; 8];
        read(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(LatkdError::Malformed("not a soft-label file".into()));
        }
        let model_id = read_string(&mut r)?;
        let dataset_fingerprint = read_string(&mut r)?;
        let mut n = [0u8; 8];
        read(&mut r, &mut n)?;
        let n = u64::from_le_bytes(n) as usize;
        let expected = n
            .checked_mul(16)
            .ok_or_else(|| LatkdError::Malformed("row count overflow".into()))?;
        let rest = &body[r.position() as usize..];
        if rest.len() != expected {
            return Err(LatkdError::Malformed(format!(
                "expected {expected} payload bytes, found {}",
                rest.len()
            )));
        }
        let values: Vec<f64> = rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let probs = Array2::from_shape_vec((n, 2), values).map_err(|e| LatkdError::Malformed(e.to_string()))?;
        Self::new(model_id, dataset_fingerprint, probs)
    }
}

fn read(r: &mut Cursor<&[u8]>, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| LatkdError::Malformed("truncated soft-label header".into()))
}

fn read_string(r: &mut Cursor<&[u8]>) -> Result<String> {
    let mut len = [0u8; 4];
    read(r, &mut len)?;
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    read(r, &mut buf)?;
    String::from_utf8(buf).map_err(|e| LatkdError::Malformed(e.to_string()))
}

/// Counters describing how the cache was used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    /// Entries that failed to verify and were rescored.
    pub corrupt: u64,
    /// Number of times a teacher model was actually run.
    pub evaluations: u64,
}

/// Teacher outputs keyed by `(model id, dataset fingerprint)`.
#[derive(Debug)]
pub struct SoftLabelCache {
    dir: Option<PathBuf>,
    stats: CacheStats,
}

impl SoftLabelCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            stats: CacheStats::default(),
        }
    }

    /// Scores every request afresh.
    pub fn disabled() -> Self {
        Self {
            dir: None,
            stats: CacheStats::default(),
        }
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn path_for(&self, model_id: &str, dataset_fingerprint: &str) -> Option<PathBuf> {
        let key = sha256_hex(format!("{model_id}\n{dataset_fingerprint}").as_bytes());
        self.dir.as_ref().map(|d| d.join(&key[..2]).join(format!("{}.bin", &key[2..])))
    }

    fn lookup(&mut self, model_id: &str, fingerprint: &str) -> Option<SoftLabelMatrix> {
        let path = self.path_for(model_id, fingerprint)?;
        let bytes = fs::read(&path).ok()?;
        match SoftLabelMatrix::from_bytes(&bytes) {
            Ok(m) if m.model_id == model_id && m.dataset_fingerprint == fingerprint => Some(m),
            Ok(_) | Err(_) => {
                log::warn!("discarding unreadable soft-label cache entry {}", path.display());
                self.stats.corrupt += 1;
                None
            }
        }
    }

    fn store(&self, m: &SoftLabelMatrix) -> Result<()> {
        if let Some(path) = self.path_for(&m.model_id, &m.dataset_fingerprint) {
            atomic_write(&path, &m.to_bytes())?;
        }
        Ok(())
    }
}

/// Teacher `model` (stored under `model_id`) scored on `data`, served from the
/// cache when an intact entry exists.
pub fn materialize_soft_labels(
    model_id: &str,
    model: &Model,
    data: &DesignMatrix,
    cache: &mut SoftLabelCache,
) -> Result<SoftLabelMatrix> {
    let fingerprint = data.fingerprint();
    if let Some(hit) = cache.lookup(model_id, &fingerprint) {
        if hit.n_rows() == data.n_rows() {
            cache.stats.hits += 1;
            return Ok(hit);
        }
        cache.stats.corrupt += 1;
    }
    cache.stats.misses += 1;
    cache.stats.evaluations += 1;
    let probs = model.predict_proba(data.features.view())?;
    let m = SoftLabelMatrix::new(model_id.to_string(), fingerprint, probs)?;
    cache.store(&m)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbt::{logit, GbtConfig, GbtModel, GBT_FORMAT_VERSION};
    use crate::mlp::{MlpArchitecture, MlpModel};
    use ndarray::array;
    use rand::SeedableRng;

    fn constant(p: f64) -> Model {
        Model::Gbt(GbtModel {
            format_version: GBT_FORMAT_VERSION,
            n_features: 2,
            base_score: logit(p),
            trees: vec![],
            config: GbtConfig::default(),
            training_config_hash: None,
        })
    }

    fn frame() -> DesignMatrix {
        DesignMatrix::labeled(
            array![[0.1, 0.2], [1.0, -1.0], [3.0, 0.5], [-2.0, 2.0], [0.0, 0.0]],
            vec![0, 1, 0, 1, 0],
        )
        .unwrap()
    }

    #[test]
    fn constant_teacher_gives_identical_rows() {
        let mut cache = SoftLabelCache::disabled();
        let m = materialize_soft_labels("c", &constant(0.25), &frame(), &mut cache).unwrap();
        for row in m.probs.rows() {
            assert_eq!(row[1], m.probs[[0, 1]]);
        }
    }

    #[test]
    fn mlp_teacher_matches_direct_forward() {
        let arch = MlpArchitecture::fraud_default(2).with_hidden(vec![4, 4]);
        let mlp = MlpModel::init(arch, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3)).unwrap();
        let direct = mlp.predict_proba(frame().features.view()).unwrap();
        let mut cache = SoftLabelCache::disabled();
        let m = materialize_soft_labels("m", &Model::Mlp(mlp), &frame(), &mut cache).unwrap();
        assert_eq!(m.probs, direct);
    }

    #[test]
    fn second_call_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = SoftLabelCache::new(dir.path());
        let model = constant(0.3);
        let a = materialize_soft_labels("id", &model, &frame(), &mut cache).unwrap();
        let b = materialize_soft_labels("id", &model, &frame(), &mut cache).unwrap();
        assert_eq!(cache.stats().evaluations, 1);
        assert_eq!(cache.stats().hits, 1);
        assert!(a.probs.iter().zip(b.probs.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn corrupted_entry_is_a_counted_miss() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = SoftLabelCache::new(dir.path());
        let model = constant(0.3);
        let a = materialize_soft_labels("id", &model, &frame(), &mut cache).unwrap();
        let path = cache.path_for("id", &frame().fingerprint()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x55;
        fs::write(&path, bytes).unwrap();
        let b = materialize_soft_labels("id", &model, &frame(), &mut cache).unwrap();
        assert_eq!(a, b);
        let s = cache.stats();
        assert_eq!((s.corrupt, s.evaluations, s.hits), (1, 2, 0));
    }

    #[test]
    fn binary_round_trip() {
        let m = SoftLabelMatrix::new("m".into(), "f".into(), array![[0.25, 0.75], [1.0, 0.0]]).unwrap();
        assert_eq!(SoftLabelMatrix::from_bytes(&m.to_bytes()).unwrap(), m);
        let mut bytes = m.to_bytes();
        bytes.truncate(10);
        assert!(SoftLabelMatrix::from_bytes(&bytes).is_err());
    }

    #[test]
    fn invalid_rows_rejected() {
        assert!(SoftLabelMatrix::new("m".into(), "f".into(), array![[0.5, 0.6]]).is_err());
    }
}
