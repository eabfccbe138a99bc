//! Dense row-major embedding storage and the `embeddings.bin` codec.
//!
//! Layout of the binary file (all integers little-endian):
//!
//! | bytes | field                      |
//! |-------|----------------------------|
//! | 4     | magic `"TRET"`             |
//! | 4     | u32 format version (1)     |
//! | 4     | u32 dim                    |
//! | 8     | u64 row count              |
//! | 4·n·d | f32 values, row-major      |

use crate::store::StoreError;

pub const MAGIC: &[u8; 4] = b"TRET";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// Rows of `dim` f32 values. Providers emit unit-norm rows; raw matrices
/// (e.g. hand-made test points) are allowed as long as every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self, String> {
        if dim == 0 {
            return Err("embedding dimension must be at least 1".into());
        }
        if !data.len().is_multiple_of(dim) {
            return Err(format!("{} values do not fill rows of dim {dim}", data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err("embedding contains a non-finite value".into());
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self, String> {
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or("no rows")?;
        let mut data = Vec::with_capacity(dim * rows.len());
        for (i, r) in rows.iter().enumerate() {
            if r.as_ref().len() != dim {
                return Err(format!("row {i} has dim {} instead of {dim}", r.as_ref().len()));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::new(dim, data)
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn push_row(&mut self, row: &[f32]) {
        assert_eq!(row.len(), self.dim, "row dimension");
        self.data.extend_from_slice(row);
    }

    pub fn append(&mut self, other: EmbeddingMatrix) {
        assert_eq!(other.dim, self.dim, "matrix dimension");
        self.data.extend(other.data);
    }

    /// Picks rows by index, in the given order.
    pub fn select(&self, rows: &[usize]) -> EmbeddingMatrix {
        let mut out = EmbeddingMatrix::empty(self.dim);
        for &r in rows {
            out.push_row(self.row(r));
        }
        out
    }

    /// Whether every row has L2 norm within `tol` of 1.
    pub fn is_unit_norm(&self, tol: f64) -> bool {
        self.rows().all(|r| (l2_norm(r) - 1.0).abs() <= tol)
    }

    /// L2-normalizes every row in place; all-zero rows become e₁.
    pub fn normalize_rows(&mut self) {
        let dim = self.dim;
        for row in self.data.chunks_exact_mut(dim) {
            let wide: Vec<f64> = row.iter().map(|&x| x as f64).collect();
            row.copy_from_slice(&normalize_f64(&wide));
        }
    }
}

pub fn l2_norm(row: &[f32]) -> f64 {
    row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Normalizes in f64 and rounds to f32; the zero vector maps to e₁.
pub fn normalize_f64(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        let mut e1 = vec![0.0f32; v.len()];
        if let Some(first) = e1.first_mut() {
            *first = 1.0;
        }
        return e1;
    }
    v.iter().map(|x| (x / norm) as f32).collect()
}

/// Dot product accumulated in f64.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

pub fn encode_embeddings(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.dim as u32).to_le_bytes());
    out.extend_from_slice(&(m.len() as u64).to_le_bytes());
    for x in &m.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix, StoreError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(StoreError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(StoreError::Truncated {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if dim == 0 {
        return Err(StoreError::Corrupt("zero embedding dimension".into()));
    }
    let expected = dim
        .checked_mul(count)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| StoreError::Corrupt("header size overflow".into()))?;
    if (bytes.len() as u64) < expected {
        return Err(StoreError::Truncated {
            expected,
            actual: bytes.len() as u64,
        });
    }
    if (bytes.len() as u64) > expected {
        return Err(StoreError::Corrupt(format!(
            "{} trailing bytes after embedding rows",
            bytes.len() as u64 - expected
        )));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(dim as usize, data).map_err(StoreError::Corrupt)
}
