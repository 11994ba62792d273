//! Unsupervised embedding metrics and the `KEM1` embedding file format.
//!
//! `KEM1` layout (little-endian): magic, u32 N, u32 K, u32 dtype tag
//! (0 = f32, the only one defined), then N*K row-major values. Labels live in
//! an optional JSONL sidecar, one `{"row", "label", "group"}` object per line.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const KEM_MAGIC: &[u8; 4] = b"KEM1";
pub const KEM_HEADER_LEN: usize = 16;
const DTYPE_F32: u32 = 0;

/// Added to probabilities inside the log of the spectral entropy.
pub const RANKME_EPS: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("invalid embedding matrix: {0}")]
    InvalidMatrix(String),
    #[error("non-finite value at (row {row}, col {col})")]
    NonFinite { row: usize, col: usize },
    #[error("embedding matrix is all zeros")]
    ZeroMatrix,
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// N x K row-major embeddings, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    k: usize,
    values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, k: usize, values: Vec<f64>) -> Result<Self, MetricsError> {
        if n == 0 || k == 0 {
            return Err(MetricsError::InvalidMatrix(format!("shape {n}x{k} is empty")));
        }
        if values.len() != n * k {
            return Err(MetricsError::InvalidMatrix(format!(
                "{} values for shape {n}x{k}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite { row: i / k, col: i % k });
        }
        Ok(Self { n, k, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MetricsError> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(MetricsError::InvalidMatrix("ragged rows".into()));
        }
        Self::new(rows.len(), k, rows.concat())
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn n_dims(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Rows `idx` in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self, MetricsError> {
        let mut v = Vec::with_capacity(idx.len() * self.k);
        for &i in idx {
            v.extend_from_slice(self.row(i));
        }
        Self::new(idx.len(), self.k, v)
    }
}

/// Centered row scaled to unit norm, or `None` for a constant row.
fn standardize(row: &[f64]) -> Option<Vec<f64>> {
    if row.iter().all(|&v| v == row[0]) {
        return None;
    }
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    let centered: Vec<f64> = row.iter().map(|v| v - mean).collect();
    let norm = centered.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    Some(centered.into_iter().map(|c| c / norm).collect())
}

/// Root mean square of the off-diagonal Pearson correlations between rows.
/// Constant rows have undefined correlation and contribute 0.
pub fn odcorr(z: &EmbeddingMatrix) -> Result<f64, MetricsError> {
    if z.n < 2 {
        return Err(MetricsError::InvalidMatrix(format!("odcorr needs N >= 2, got {}", z.n)));
    }
    if z.k < 2 {
        return Err(MetricsError::InvalidMatrix(format!("odcorr needs K >= 2, got {}", z.k)));
    }
    let unit: Vec<Option<Vec<f64>>> = (0..z.n).into_par_iter().map(|i| standardize(z.row(i))).collect();
    // Per-row partial sums are collected in order and added serially, so the
    // result does not depend on thread scheduling.
    let partial: Vec<f64> = (0..z.n)
        .into_par_iter()
        .map(|i| {
            let Some(a) = &unit[i] else { return 0.0 };
            unit[i + 1..]
                .iter()
                .flatten()
                .map(|b| {
                    let r: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    let r = r.clamp(-1.0, 1.0);
                    r * r
                })
                .sum()
        })
        .collect();
    let upper: f64 = partial.iter().sum();
    let n = z.n as f64;
    Ok((2.0 * upper / (n * (n - 1.0))).sqrt().clamp(0.0, 1.0))
}

/// Effective rank: `exp(-sum p ln(p + eps))` with `p` the singular values
/// normalized to sum 1.
pub fn rankme(z: &EmbeddingMatrix) -> Result<f64, MetricsError> {
    let m = DMatrix::from_row_slice(z.n, z.k, &z.values);
    let sigma = m.singular_values();
    rankme_from_singular_values(sigma.as_slice())
}

pub fn rankme_from_singular_values(sigma: &[f64]) -> Result<f64, MetricsError> {
    let total: f64 = sigma.iter().sum();
    if total <= 0.0 {
        return Err(MetricsError::ZeroMatrix);
    }
    let entropy: f64 = sigma
        .iter()
        .map(|s| {
            let p = s / total;
            -p * (p + RANKME_EPS).ln()
        })
        .sum();
    Ok(entropy.exp())
}

pub fn write_embeddings(z: &EmbeddingMatrix, path: &Path) -> Result<(), MetricsError> {
    let io = |source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    };
    let (n, k) = (u32::try_from(z.n), u32::try_from(z.k));
    let (Ok(n), Ok(k)) = (n, k) else {
        return Err(MetricsError::InvalidMatrix("shape exceeds u32".into()));
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut buf = Vec::with_capacity(KEM_HEADER_LEN + z.values.len() * 4);
    buf.extend_from_slice(KEM_MAGIC);
    for v in [n, k, DTYPE_F32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &z.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix, MetricsError> {
    let fmt = |message: String| MetricsError::Format {
        path: path.display().to_string(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.len() < KEM_HEADER_LEN {
        return Err(fmt("shorter than the 16-byte header".into()));
    }
    if &bytes[..4] != KEM_MAGIC {
        return Err(fmt(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (n, k, tag) = (word(0), word(1), word(2));
    if tag != DTYPE_F32 as usize {
        return Err(fmt(format!("unsupported dtype tag {tag}")));
    }
    if n < 2 {
        return Err(fmt(format!("N = {n}, need at least 2 samples")));
    }
    if k == 0 {
        return Err(fmt("K = 0".into()));
    }
    let expected = n * k * 4;
    let payload = &bytes[KEM_HEADER_LEN..];
    if payload.len() != expected {
        return Err(fmt(format!("payload is {} bytes, header implies {expected}", payload.len())));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    EmbeddingMatrix::new(n, k, values).map_err(|e| match e {
        MetricsError::NonFinite { row, col } => fmt(format!("non-finite value at (row {row}, col {col})")),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub row: usize,
    pub label: String,
    pub group: String,
}

fn scalar_to_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Read a labels sidecar. Labels and groups may be strings or numbers; a
/// missing group puts the row in its own group. Rows must be exactly
/// `0..n` in some order.
pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>, MetricsError> {
    let fmt = |line: usize, message: String| MetricsError::Format {
        path: path.display().to_string(),
        message: format!("line {line}: {message}"),
    };
    let io = |source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out: Vec<LabelRow> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| fmt(i + 1, e.to_string()))?;
        let row = v
            .get("row")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| fmt(i + 1, "missing integer \"row\"".into()))? as usize;
        let label = v
            .get("label")
            .and_then(scalar_to_string)
            .ok_or_else(|| fmt(i + 1, "missing \"label\"".into()))?;
        let group = v.get("group").and_then(scalar_to_string).unwrap_or_else(|| format!("row-{row}"));
        out.push(LabelRow { row, label, group });
    }
    out.sort_by_key(|r| r.row);
    let mut seen = HashSet::new();
    for (expect, r) in out.iter().enumerate() {
        if !seen.insert(r.row) {
            return Err(fmt(0, format!("row {} listed twice", r.row)));
        }
        if r.row != expect {
            return Err(fmt(0, format!("row {expect} has no label")));
        }
    }
    Ok(out)
}

pub fn write_labels(rows: &[LabelRow], path: &Path) -> Result<(), MetricsError> {
    let io = |source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in rows {
        serde_json::to_writer(&mut w, r).expect("label row serialises");
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(n: usize) -> EmbeddingMatrix {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        EmbeddingMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn odcorr_hand_cases() {
        assert!((odcorr(&basis(3)).unwrap() - 0.5).abs() <= 1e-12);
        let same = EmbeddingMatrix::from_rows(&[vec![1.0, 2.0, 5.0], vec![1.0, 2.0, 5.0]]).unwrap();
        assert!((odcorr(&same).unwrap() - 1.0).abs() < 1e-12);
        let orth = EmbeddingMatrix::from_rows(&[vec![1.0, -1.0, 1.0, -1.0], vec![1.0, 1.0, -1.0, -1.0]]).unwrap();
        assert_eq!(odcorr(&orth).unwrap(), 0.0);
    }

    #[test]
    fn constant_rows_contribute_zero() {
        let z = EmbeddingMatrix::from_rows(&[vec![0.1; 4], vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        // Only the (1,2) pair is defined: 2 of 6 ordered pairs with rho^2 = 1.
        assert!((odcorr(&z).unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn odcorr_shape_errors() {
        let one = EmbeddingMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(odcorr(&one).is_err());
        let narrow = EmbeddingMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(odcorr(&narrow).is_err());
        assert!(matches!(
            EmbeddingMatrix::new(2, 2, vec![0.0, 1.0, f64::NAN, 0.0]),
            Err(MetricsError::NonFinite { row: 1, col: 0 })
        ));
    }

    #[test]
    fn rankme_hand_cases() {
        assert!((rankme(&basis(4)).unwrap() - 4.0).abs() < 1e-3);
        let outer: Vec<Vec<f64>> = (1..=5).map(|i| (1..=3).map(|j| f64::from(i * j)).collect()).collect();
        assert!((rankme(&EmbeddingMatrix::from_rows(&outer).unwrap()).unwrap() - 1.0).abs() < 1e-3);
        let d = EmbeddingMatrix::new(4, 4, vec![2., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 0.]).unwrap();
        assert!((rankme(&d).unwrap() - 2.0f64.sqrt() * 2.0).abs() < 1e-3);
        let zero = EmbeddingMatrix::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(rankme(&zero), Err(MetricsError::ZeroMatrix)));
    }

    #[test]
    fn kem_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.kem");
        let z = EmbeddingMatrix::new(2, 3, vec![0.5, -1.25, 3.0, 1e-3, 7.0, -0.0]).unwrap();
        write_embeddings(&z, &path).unwrap();
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back.values().len(), 6);
        assert_eq!(back.values()[0], 0.5);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[KEM_HEADER_LEN + 4 * 4..KEM_HEADER_LEN + 4 * 5].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = read_embeddings(&path).unwrap_err().to_string();
        assert!(err.contains("(row 1, col 1)"), "{err}");

        let one = EmbeddingMatrix::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        write_embeddings(&one, &path).unwrap();
        assert!(read_embeddings(&path).unwrap_err().to_string().contains("N = 1"));
    }

    #[test]
    fn labels_accept_numbers_and_strings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.jsonl");
        std::fs::write(
            &path,
            "{\"row\":1,\"label\":\"tumor\",\"group\":\"p1\"}\n{\"row\":0,\"label\":3,\"group\":7}\n",
        )
        .unwrap();
        let rows = read_labels(&path).unwrap();
        assert_eq!(rows[0].label, "3");
        assert_eq!(rows[0].group, "7");
        assert_eq!(rows[1].label, "tumor");
        std::fs::write(&path, "{\"row\":1,\"label\":0}\n").unwrap();
        assert!(read_labels(&path).is_err());
    }
}
