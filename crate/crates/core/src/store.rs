//! Binary matrix and token files, and the JSON run manifest that ties them
//! together.
//!
//! Matrix file (little-endian):
//! - magic `IJXM`
//! - version: u16 = 1
//! - dtype: u8 = 1 (binary32)
//! - reserved: u8 = 0
//! - rows: u64, cols: u64
//! - payload: rows * cols f32, row-major
//!
//! Token file (little-endian):
//! - magic `IJXT`
//! - version: u16 = 1
//! - reserved: 2 bytes = 0
//! - n_seqs: u64, seq_len: u64
//! - payload: n_seqs * seq_len u32

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"IJXM";
pub const TOKEN_MAGIC: &[u8; 4] = b"IJXT";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;
const HEADER_LEN: usize = 24;

/// Dense row-major binary32 matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "expected {} values for {rows}x{cols}, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite(&data, cols)?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Multiply every entry by `c`, rejecting overflow to infinity.
    pub fn scaled(&self, c: f32) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * c).collect(),
        )
    }
}

fn check_finite(data: &[f32], cols: usize) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(Error::NonFinite {
            row: k / cols,
            col: k % cols,
        }),
        None => Ok(()),
    }
}

/// Fixed-length, pairwise-distinct token sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSet {
    n_seqs: usize,
    seq_len: usize,
    ids: Vec<u32>,
}

impl TokenSet {
    pub fn new(n_seqs: usize, seq_len: usize, ids: Vec<u32>) -> Result<Self> {
        if n_seqs == 0 || seq_len == 0 {
            return Err(Error::InvalidArgument(format!(
                "token set must be non-empty, got {n_seqs} sequences of length {seq_len}"
            )));
        }
        if ids.len() != n_seqs * seq_len {
            return Err(Error::InvalidArgument(format!(
                "expected {} token ids, got {}",
                n_seqs * seq_len,
                ids.len()
            )));
        }
        let mut seen: HashMap<&[u32], usize> = HashMap::with_capacity(n_seqs);
        for (i, seq) in ids.chunks_exact(seq_len).enumerate() {
            if let Some(&first) = seen.get(seq) {
                return Err(Error::DuplicateSequence { first, second: i });
            }
            seen.insert(seq, i);
        }
        Ok(Self {
            n_seqs,
            seq_len,
            ids,
        })
    }

    pub fn from_seqs<S: AsRef<[u32]>>(seqs: &[S]) -> Result<Self> {
        let seq_len = seqs.first().map_or(0, |s| s.as_ref().len());
        if let Some(bad) = seqs.iter().find(|s| s.as_ref().len() != seq_len) {
            return Err(Error::LengthMismatch {
                left: seq_len,
                right: bad.as_ref().len(),
            });
        }
        let ids = seqs.iter().flat_map(|s| s.as_ref().iter().copied()).collect();
        Self::new(seqs.len(), seq_len, ids)
    }

    pub fn len(&self) -> usize {
        self.n_seqs
    }

    pub fn is_empty(&self) -> bool {
        self.n_seqs == 0
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn seq(&self, i: usize) -> &[u32] {
        &self.ids[i * self.seq_len..(i + 1) * self.seq_len]
    }

    /// SHA-256 over the encoded token file bytes, hex encoded.
    pub fn digest(&self) -> String {
        let bytes = encode_tokens(self);
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn header(magic: &[u8; 4], b6: u8, b7: u8, a: u64, b: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(b6);
    out.push(b7);
    out.extend_from_slice(&a.to_le_bytes());
    out.extend_from_slice(&b.to_le_bytes());
    out
}

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = header(MATRIX_MAGIC, DTYPE_F32, 0, m.rows as u64, m.cols as u64);
    out.reserve(m.data.len() * 4);
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_tokens(t: &TokenSet) -> Vec<u8> {
    let mut out = header(TOKEN_MAGIC, 0, 0, t.n_seqs as u64, t.seq_len as u64);
    out.reserve(t.ids.len() * 4);
    for v in &t.ids {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Header {
    b6: u8,
    b7: u8,
    a: u64,
    b: u64,
}

fn parse_header(
    path: &Path,
    bytes: &[u8],
    magic: &[u8; 4],
    kind: &'static str,
) -> Result<Header> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(Error::BadMagic {
            path: path.into(),
            kind,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format {
            path: path.into(),
            detail: format!("header truncated ({} bytes)", bytes.len()),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            path: path.into(),
            detail: format!("unsupported version {version}"),
        });
    }
    let a = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let b = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    Ok(Header {
        b6: bytes[6],
        b7: bytes[7],
        a,
        b,
    })
}

fn payload_count(path: &Path, bytes: &[u8], rows: u64, cols: u64) -> Result<usize> {
    let expected = rows.checked_mul(cols).ok_or_else(|| Error::Format {
        path: path.into(),
        detail: format!("dimensions {rows}x{cols} overflow"),
    })?;
    let payload = &bytes[HEADER_LEN..];
    let found = payload.len() as u64 / 4;
    if found < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found,
        });
    }
    if payload.len() as u64 != expected * 4 {
        return Err(Error::Format {
            path: path.into(),
            detail: format!("trailing bytes after {expected} values"),
        });
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Format {
            path: path.into(),
            detail: format!("empty dimensions {rows}x{cols}"),
        });
    }
    Ok(expected as usize)
}

pub fn decode_matrix(path: &Path, bytes: &[u8]) -> Result<Matrix> {
    let h = parse_header(path, bytes, MATRIX_MAGIC, "matrix")?;
    if h.b6 != DTYPE_F32 {
        return Err(Error::Format {
            path: path.into(),
            detail: format!("unsupported dtype code {}", h.b6),
        });
    }
    if h.b7 != 0 {
        return Err(Error::Format {
            path: path.into(),
            detail: "reserved byte must be zero".into(),
        });
    }
    let count = payload_count(path, bytes, h.a, h.b)?;
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .take(count)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(h.a as usize, h.b as usize, data)
}

pub fn decode_tokens(path: &Path, bytes: &[u8]) -> Result<TokenSet> {
    let h = parse_header(path, bytes, TOKEN_MAGIC, "token")?;
    if h.b6 != 0 || h.b7 != 0 {
        return Err(Error::Format {
            path: path.into(),
            detail: "reserved bytes must be zero".into(),
        });
    }
    let count = payload_count(path, bytes, h.a, h.b)?;
    let ids = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .take(count)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    TokenSet::new(h.a as usize, h.b as usize, ids)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    write_bytes(path.as_ref(), &encode_matrix(m))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(path, &bytes)
}

pub fn write_tokens(path: impl AsRef<Path>, t: &TokenSet) -> Result<()> {
    write_bytes(path.as_ref(), &encode_tokens(t))
}

pub fn read_tokens(path: impl AsRef<Path>) -> Result<TokenSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tokens(path, &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub index: usize,
    pub file: String,
}

/// On-disk manifest. Relative file paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model_id: String,
    pub k: usize,
    pub n: usize,
    pub hidden_dim: usize,
    pub token_file: String,
    pub layers: Vec<LayerEntry>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        text.push('\n');
        write_bytes(path, text.as_bytes())
    }
}

/// A fully validated manifest with every layer and the token set in memory.
#[derive(Debug, Clone)]
pub struct Run {
    pub manifest: RunManifest,
    pub path: PathBuf,
    pub tokens: TokenSet,
    layers: Vec<(usize, Matrix)>,
}

impl Run {
    /// Build a run from in-memory parts, checking the same invariants as
    /// [`load_manifest`].
    pub fn from_parts(
        manifest: RunManifest,
        tokens: TokenSet,
        layers: Vec<(usize, Matrix)>,
    ) -> Result<Self> {
        validate_header(&manifest)?;
        check_tokens(&manifest, &tokens)?;
        if layers.len() != manifest.layers.len()
            || layers
                .iter()
                .zip(&manifest.layers)
                .any(|((l, _), e)| *l != e.index)
        {
            return Err(Error::Manifest(
                "layer list does not match manifest entries".into(),
            ));
        }
        for (l, m) in &layers {
            check_layer(&manifest, *l, m)?;
        }
        Ok(Self {
            manifest,
            path: PathBuf::new(),
            tokens,
            layers,
        })
    }

    pub fn layers(&self) -> &[(usize, Matrix)] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> Option<&Matrix> {
        self.layers
            .binary_search_by_key(&index, |(l, _)| *l)
            .ok()
            .map(|k| &self.layers[k].1)
    }

    pub fn last_layer(&self) -> (usize, &Matrix) {
        let (l, m) = self.layers.last().expect("validated run has layers");
        (*l, m)
    }
}

fn validate_header(m: &RunManifest) -> Result<()> {
    if m.layers.is_empty() {
        return Err(Error::Manifest("at least one layer required".into()));
    }
    if m.n == 0 || m.k == 0 || m.hidden_dim == 0 {
        return Err(Error::Manifest(format!(
            "n, k and hidden_dim must be positive (n={}, k={}, hidden_dim={})",
            m.n, m.k, m.hidden_dim
        )));
    }
    let mut prev = 0;
    for e in &m.layers {
        if e.index <= prev {
            return Err(Error::Manifest(format!(
                "layer indices must be ≥ 1 and strictly increasing (got {} after {prev})",
                e.index
            )));
        }
        prev = e.index;
    }
    Ok(())
}

fn check_tokens(m: &RunManifest, t: &TokenSet) -> Result<()> {
    if t.len() != m.n || t.seq_len() != m.k {
        return Err(Error::Manifest(format!(
            "token file has {} sequences of length {}, manifest declares n={} k={}",
            t.len(),
            t.seq_len(),
            m.n,
            m.k
        )));
    }
    Ok(())
}

fn check_layer(m: &RunManifest, layer: usize, x: &Matrix) -> Result<()> {
    if x.rows() != m.n || x.cols() != m.hidden_dim {
        return Err(Error::LayerMismatch {
            layer,
            detail: format!(
                "matrix is {}x{}, manifest declares {}x{}",
                x.rows(),
                x.cols(),
                m.n,
                m.hidden_dim
            ),
        });
    }
    Ok(())
}

/// Read a manifest and every file it references, checking all cross-file
/// invariants.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Run> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    validate_header(&manifest)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let tokens = read_tokens(base.join(&manifest.token_file))?;
    check_tokens(&manifest, &tokens)?;
    let layers = manifest
        .layers
        .par_iter()
        .map(|e| {
            let m = read_matrix(base.join(&e.file)).map_err(|err| err.in_layer(e.index))?;
            check_layer(&manifest, e.index, &m)?;
            Ok((e.index, m))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Run {
        manifest,
        path: path.into(),
        tokens,
        layers,
    })
}
