//! Frozen per-row embeddings.
//!
//! File format: the ASCII line `BOLERO-EMB 1 <n> <d>\n` followed by `n * d`
//! little-endian IEEE-754 `f32` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::dataset::{FeatureValues, ProcessedDataset, Split};

const MAGIC: &str = "BOLERO-EMB";
const FORMAT_VERSION: u32 = 1;

/// Equal-frequency bins per continuous column in [`stub_embed`].
pub const STUB_BINS: usize = 8;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed embedding file: {0}")]
    Format(String),
    #[error("embedding file has {found} rows, expected {expected}")]
    RowCountMismatch { expected: usize, found: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("embedding dimension must be at least 8, got {0}")]
    InvalidDimension(usize),
    #[error("dataset has no features to embed")]
    NoFeatures,
}

pub type Result<T> = std::result::Result<T, EmbedError>;

/// `n × d` row embeddings, immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * d {
            return Err(EmbedError::Format(format!("expected {} values, got {}", n * d, data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFiniteValue { row: i / d.max(1), col: i % d.max(1) });
        }
        Ok(Self { n, d, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// FNV-1a over the raw bytes; used to check that nothing mutates the
    /// embeddings during training.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for v in &self.data {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{MAGIC} {FORMAT_VERSION} {} {}\n", self.n, self.d).into_bytes();
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| EmbedError::Format("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| EmbedError::Format("header is not ASCII".into()))?;
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() != 4 || parts[0] != MAGIC {
            return Err(EmbedError::Format(format!("bad header `{header}`")));
        }
        if parts[1] != FORMAT_VERSION.to_string() {
            return Err(EmbedError::Format(format!("unsupported version `{}`", parts[1])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| EmbedError::Format(format!("bad size `{s}`")));
        let (n, d) = (parse(parts[2])?, parse(parts[3])?);
        let body = &bytes[newline + 1..];
        if body.len() != n * d * 4 {
            return Err(EmbedError::Format(format!("expected {} payload bytes, found {}", n * d * 4, body.len())));
        }
        let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Self::new(n, d, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }
}

pub fn load_embeddings(path: impl AsRef<Path>, expected_n: usize) -> Result<EmbeddingMatrix> {
    let m = EmbeddingMatrix::from_bytes(&fs::read(path)?)?;
    if m.n != expected_n {
        return Err(EmbedError::RowCountMismatch { expected: expected_n, found: m.n });
    }
    Ok(m)
}

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Key of token `value` in feature `feature` under `seed`.
fn token_key(seed: u64, feature: usize, value: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ feature as u64) ^ value)
}

/// Unit vector for a token key: component `j` is the uniform `[-1, 1)`
/// draw from `splitmix64(key + j)`.
fn token_vector(key: u64, d: usize, out: &mut [f64]) {
    let mut norm = 0.0;
    for (j, o) in out.iter_mut().enumerate().take(d) {
        let bits = splitmix64(key.wrapping_add(j as u64)) >> 11;
        let u = bits as f64 / (1u64 << 53) as f64;
        *o = 2.0 * u - 1.0;
        norm += *o * *o;
    }
    let norm = norm.sqrt();
    out.iter_mut().for_each(|o| *o /= norm);
}

/// Upper edges of `bins` equal-frequency bins over the training values.
pub fn quantile_edges(values: &[f64], split: &[Split], bins: usize) -> Vec<f64> {
    let mut train: Vec<f64> = values
        .iter()
        .zip(split)
        .filter(|(v, s)| **s == Split::Train && !v.is_nan())
        .map(|(v, _)| *v)
        .collect();
    if train.is_empty() {
        return Vec::new();
    }
    train.sort_by(f64::total_cmp);
    (1..bins).map(|k| train[(k * train.len() / bins).min(train.len() - 1)]).collect()
}

/// Deterministic stand-in for a pretrained encoder.
///
/// Every categorical (feature, code) and every continuous (feature, bin)
/// token hashes to a fixed unit vector in `R^d`; a row embedding is the L2
/// normalized sum of its token vectors. Missing continuous cells use an extra
/// bin token.
pub fn stub_embed(dataset: &ProcessedDataset, d: usize, seed: u64) -> Result<EmbeddingMatrix> {
    if d < 8 {
        return Err(EmbedError::InvalidDimension(d));
    }
    if dataset.features.is_empty() {
        return Err(EmbedError::NoFeatures);
    }
    let n = dataset.num_rows();
    let edges: Vec<Option<Vec<f64>>> = dataset
        .features
        .iter()
        .map(|f| match &f.values {
            FeatureValues::Continuous(v) => Some(quantile_edges(v, &dataset.split, STUB_BINS)),
            FeatureValues::Categorical { .. } => None,
        })
        .collect();
    let mut acc = vec![0.0f64; d];
    let mut token = vec![0.0f64; d];
    let mut data = Vec::with_capacity(n * d);
    for row in 0..n {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (feature, f) in dataset.features.iter().enumerate() {
            let value = match &f.values {
                FeatureValues::Categorical { codes, .. } => codes[row] as u64,
                FeatureValues::Continuous(v) => {
                    let x = v[row];
                    if x.is_nan() {
                        STUB_BINS as u64
                    } else {
                        let e = edges[feature].as_deref().unwrap_or(&[]);
                        e.partition_point(|&edge| edge <= x) as u64
                    }
                }
            };
            token_vector(token_key(seed, feature, value), d, &mut token);
            acc.iter_mut().zip(&token).for_each(|(a, t)| *a += t);
        }
        let norm = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
        // two opposite tokens can cancel exactly; fall back to the raw sum
        let scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        data.extend(acc.iter().map(|a| (a * scale) as f32));
    }
    EmbeddingMatrix::new(n, d, data)
}
