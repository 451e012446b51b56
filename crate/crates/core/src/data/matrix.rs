use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use sha2::{Digest, Sha256};

use crate::error::{LatkdError, Result};

const MAGIC: &[u8; 8] = b"LATKDDM1";
const UNLABELED: u8 = 0xff;

/// Dense encoded features, hard labels and row timestamps for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub features: Array2<f64>,
    pub labels: Vec<Option<u8>>,
    pub event_time: Vec<f64>,
    pub schema_fingerprint: String,
}

impl DesignMatrix {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<Option<u8>>,
        event_time: Vec<f64>,
        schema_fingerprint: String,
    ) -> Result<Self> {
        let m = Self {
            features,
            labels,
            event_time,
            schema_fingerprint,
        };
        m.validate()?;
        Ok(m)
    }

    /// A labeled matrix whose rows all share timestamp 0.
    pub fn labeled(features: Array2<f64>, labels: Vec<u8>) -> Result<Self> {
        let n = labels.len();
        Self::new(
            features,
            labels.into_iter().map(Some).collect(),
            vec![0.0; n],
            String::new(),
        )
    }

    pub fn empty(width: usize, schema_fingerprint: String) -> Self {
        Self {
            features: Array2::zeros((0, width)),
            labels: Vec::new(),
            event_time: Vec::new(),
            schema_fingerprint,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if self.labels.len() != n || self.event_time.len() != n {
            return Err(LatkdError::RowMismatch {
                expected: n,
                actual: if self.labels.len() != n {
                    self.labels.len()
                } else {
                    self.event_time.len()
                },
            });
        }
        if let Some(((r, c), v)) = self.features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(LatkdError::Malformed(format!(
                "non-finite feature {v} at row {r}, column {c}"
            )));
        }
        if let Some(l) = self.labels.iter().flatten().find(|&&l| l > 1) {
            return Err(LatkdError::Malformed(format!("label {l} is not binary")));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    /// Labels as a dense 0/1 vector; fails if any row is unlabeled.
    pub fn hard_labels(&self) -> Result<Vec<u8>> {
        let missing = self.labels.iter().filter(|l| l.is_none()).count();
        if missing > 0 {
            return Err(LatkdError::Unlabeled(missing));
        }
        Ok(self.labels.iter().map(|l| l.unwrap_or(0)).collect())
    }

    /// (negatives, positives) among labeled rows.
    pub fn class_counts(&self) -> (usize, usize) {
        self.labels.iter().flatten().fold((0, 0), |(n, p), &l| {
            if l == 1 {
                (n, p + 1)
            } else {
                (n + 1, p)
            }
        })
    }

    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        DesignMatrix {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            event_time: rows.iter().map(|&r| self.event_time[r]).collect(),
            schema_fingerprint: self.schema_fingerprint.clone(),
        }
    }

    /// Stacks matrices in order. All parts must share width and schema.
    pub fn concat(parts: &[&DesignMatrix]) -> Result<DesignMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| LatkdError::InvalidConfig("nothing to concatenate".into()))?;
        let width = first.n_cols();
        for p in parts {
            if p.n_cols() != width {
                return Err(LatkdError::DimensionMismatch {
                    expected: width,
                    actual: p.n_cols(),
                });
            }
            if p.schema_fingerprint != first.schema_fingerprint {
                return Err(LatkdError::InvalidConfig(
                    "cannot concatenate matrices from different schemas".into(),
                ));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.features.view()).collect();
        let features = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| LatkdError::Malformed(e.to_string()))?;
        Ok(DesignMatrix {
            features,
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            event_time: parts.iter().flat_map(|p| p.event_time.iter().copied()).collect(),
            schema_fingerprint: first.schema_fingerprint.clone(),
        })
    }

    /// SHA-256 over shape, feature bits, labels, timestamps and schema fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(MAGIC);
        h.update((self.n_rows() as u64).to_le_bytes());
        h.update((self.n_cols() as u64).to_le_bytes());
        for v in self.features.iter() {
            h.update(v.to_le_bytes());
        }
        for l in &self.labels {
            h.update([l.unwrap_or(UNLABELED)]);
        }
        for t in &self.event_time {
            h.update(t.to_le_bytes());
        }
        h.update(self.schema_fingerprint.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.n_rows() as u64).to_le_bytes())?;
        w.write_all(&(self.n_cols() as u64).to_le_bytes())?;
        let fp = self.schema_fingerprint.as_bytes();
        w.write_all(&(fp.len() as u32).to_le_bytes())?;
        w.write_all(fp)?;
        for v in self.features.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for t in &self.event_time {
            w.write_all(&t.to_le_bytes())?;
        }
        let labels: Vec<u8> = self.labels.iter().map(|l| l.unwrap_or(UNLABELED)).collect();
        w.write_all(&labels)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let malformed = |e: std::io::Error| LatkdError::Malformed(format!("design matrix: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(malformed)?;
        if &magic != MAGIC {
            return Err(LatkdError::Malformed("design matrix: bad magic".into()));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf).map_err(malformed)?;
        let rows = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u64buf).map_err(malformed)?;
        let cols = u64::from_le_bytes(u64buf) as usize;
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(malformed)?;
        let mut fp = vec![0u8; u32::from_le_bytes(u32buf) as usize];
        r.read_exact(&mut fp).map_err(malformed)?;
        let schema_fingerprint =
            String::from_utf8(fp).map_err(|e| LatkdError::Malformed(e.to_string()))?;
        let mut read_f64s = |n: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes).map_err(malformed)?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect())
        };
        let data = read_f64s(rows * cols)?;
        let event_time = read_f64s(rows)?;
        let mut labels = vec![0u8; rows];
        r.read_exact(&mut labels).map_err(malformed)?;
        let features = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| LatkdError::Malformed(e.to_string()))?;
        DesignMatrix::new(
            features,
            labels
                .into_iter()
                .map(|l| (l != UNLABELED).then_some(l))
                .collect(),
            event_time,
            schema_fingerprint,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| LatkdError::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| LatkdError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| LatkdError::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
