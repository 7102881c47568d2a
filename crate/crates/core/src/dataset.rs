//! On-disk formats and the in-memory dataset types.
//!
//! Binary files are little-endian throughout:
//!
//! * `DSGF` features: magic, `u32` version, `u64` n, `u64` dim, n id records
//!   (`u16` length + UTF-8), then `n * dim` `f32` values row-major.
//! * `DSGC` codes: magic, `u32` version, `u64` n, `u64` code_len, n id records,
//!   then `n * ceil(L/8)` packed bytes. Bit `j` of code `i` lives in byte
//!   `i * ceil(L/8) + j / 8` at bit position `j % 8` counted from the most
//!   significant bit; a set bit means `+1`.
//!
//! Labels are CSV (`id,labels`, labels separated by `;`) and splits are JSON.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"DSGF";
pub const CODE_MAGIC: &[u8; 4] = b"DSGC";
pub const FORMAT_VERSION: u32 = 1;

pub const MIN_CODE_LEN: usize = 8;
pub const MAX_CODE_LEN: usize = 4096;

/// N feature rows of equal dimensionality, each tagged with a unique id.
///
/// Values are held as `f64` regardless of the `f32` file encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    data: Vec<f64>,
    ids: Vec<String>,
    norms: Vec<f64>,
}

impl FeatureSet {
    /// Builds a validated feature set from row-major `data`.
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if n < 2 {
            return Err(Error::Validation(format!("feature set needs at least 2 rows, got {n}")));
        }
        if dim == 0 {
            return Err(Error::Validation("feature dimension must be at least 1".into()));
        }
        if data.len() != n * dim {
            return Err(Error::Validation(format!(
                "feature payload has {} values, expected {n} x {dim}",
                data.len()
            )));
        }
        check_unique_ids(&ids)?;
        let mut norms = Vec::with_capacity(n);
        for (i, row) in data.chunks_exact(dim).enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite value at row {i}, column {j}"
                )));
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Validation(format!("zero feature row at index {i}")));
            }
            norms.push(norm);
        }
        Ok(Self { dim, data, ids, norms })
    }

    /// Rescales every row to unit L2 norm.
    pub fn normalized(mut self) -> Self {
        for (row, norm) in self.data.chunks_exact_mut(self.dim).zip(self.norms.iter_mut()) {
            let inv = 1.0 / *norm;
            row.iter_mut().for_each(|v| *v *= inv);
            *norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// L2 norm of row `i`, cached at construction.
    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// Rows with the given ids, in the given order.
    pub fn select(&self, ids: &[String]) -> Result<FeatureSet> {
        let index = self.id_index();
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Error::Validation(format!("unknown sample id {id:?}")))?;
            data.extend_from_slice(self.row(i));
        }
        FeatureSet::new(ids.to_vec(), self.dim, data)
    }
}

fn check_unique_ids(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Validation(format!("duplicate id {id:?}")));
        }
    }
    Ok(())
}

/// Reads a `DSGF` file and L2-normalizes every row.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    load_features_with(path, true)
}

/// Reads a `DSGF` file, optionally skipping row normalization.
pub fn load_features_with(path: impl AsRef<Path>, normalize: bool) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let features = decode_features(&bytes).map_err(|e| e.with_path(path))?;
    Ok(if normalize { features.normalized() } else { features })
}

pub fn save_features(features: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    save_matrix(&features.ids, features.dim, &features.data, path)
}

/// Writes any row-major matrix as `DSGF` without the feature-row checks
/// (used for centroids, which may legitimately be zero).
pub fn save_matrix(ids: &[String], dim: usize, data: &[f64], path: impl AsRef<Path>) -> Result<()> {
    if data.len() != ids.len() * dim {
        return Err(Error::Validation(format!(
            "matrix payload has {} values, expected {} x {dim}",
            data.len(),
            ids.len()
        )));
    }
    let mut buf = Vec::with_capacity(24 + data.len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ids.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(dim as u64).to_le_bytes());
    write_ids(&mut buf, ids)?;
    for v in data {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    write_file(path.as_ref(), &buf)
}

fn decode_features(bytes: &[u8]) -> Result<FeatureSet, DecodeError> {
    let mut r = Reader::new(bytes);
    r.magic(FEATURE_MAGIC)?;
    let n = r.u64()? as usize;
    let dim = r.u64()? as usize;
    let ids = r.ids(n)?;
    let count = n
        .checked_mul(dim)
        .ok_or_else(|| DecodeError::Format(format!("header n={n} dim={dim} overflows")))?;
    let payload = r.take(count.checked_mul(4).ok_or(DecodeError::Truncated)?)?;
    r.finish()?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    FeatureSet::new(ids, dim, data).map_err(DecodeError::Invalid)
}

/// Per-sample label sets; multi-label samples carry several indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    ids: Vec<String>,
    labels: Vec<Vec<u32>>,
    num_classes: usize,
}

impl LabelSet {
    pub fn new(ids: Vec<String>, labels: Vec<Vec<u32>>) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} ids but {} label rows",
                ids.len(),
                labels.len()
            )));
        }
        check_unique_ids(&ids)?;
        let mut max_label = None;
        let labels = labels
            .into_iter()
            .zip(&ids)
            .map(|(mut set, id)| {
                if set.is_empty() {
                    return Err(Error::Validation(format!("sample {id:?} has no labels")));
                }
                set.sort_unstable();
                set.dedup();
                max_label = max_label.max(set.last().copied());
                Ok(set)
            })
            .collect::<Result<Vec<_>>>()?;
        let num_classes = max_label.map_or(0, |m| m as usize + 1);
        Ok(Self { ids, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Sorted, de-duplicated labels of sample `i`.
    pub fn labels(&self, i: usize) -> &[u32] {
        &self.labels[i]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Reorders (and subsets) the label rows to follow `ids`.
    pub fn align_to(&self, ids: &[String]) -> Result<LabelSet> {
        let index: HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let labels = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.labels[i].clone())
                    .ok_or_else(|| Error::Validation(format!("no labels for sample id {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        LabelSet::new(ids.to_vec(), labels)
    }
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_labels(text: &str) -> Result<LabelSet> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.len() != 2 || &headers[0] != "id" || &headers[1] != "labels" {
        return Err(Error::Validation(format!(
            "label CSV header must be `id,labels`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let id = record[0].to_string();
        let cell = record[1].trim();
        if cell.is_empty() {
            return Err(Error::Validation(format!("empty label cell for {id:?} (row {line})")));
        }
        let set = cell
            .split(';')
            .map(|tok| {
                tok.trim().parse::<u32>().map_err(|_| {
                    Error::Validation(format!("bad label {tok:?} for {id:?} (row {line})"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ids.push(id);
        labels.push(set);
    }
    LabelSet::new(ids, labels)
}

pub fn save_labels(labels: &LabelSet, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["id", "labels"]).map_err(csv_err)?;
    for (id, set) in labels.ids.iter().zip(&labels.labels) {
        let cell = set.iter().map(u32::to_string).collect::<Vec<_>>().join(";");
        writer.write_record([id.as_str(), cell.as_str()]).map_err(csv_err)?;
    }
    let buf = writer.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    write_file(path.as_ref(), &buf)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Validation(format!("malformed CSV: {e}"))
}

/// Train / query / retrieval id lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub query: Vec<String>,
    pub retrieval: Vec<String>,
}

impl SplitSpec {
    /// Checks that queries and the retrieval set are disjoint and every id exists in `features`.
    pub fn validate(&self, features: &FeatureSet) -> Result<()> {
        let retrieval: HashSet<&str> = self.retrieval.iter().map(String::as_str).collect();
        if let Some(id) = self.query.iter().find(|id| retrieval.contains(id.as_str())) {
            return Err(Error::Validation(format!("query id {id:?} is also in the retrieval set")));
        }
        let index = features.id_index();
        for (name, list) in [("train", &self.train), ("query", &self.query), ("retrieval", &self.retrieval)] {
            if list.is_empty() {
                return Err(Error::Validation(format!("split list `{name}` is empty")));
            }
            if let Some(id) = list.iter().find(|id| !index.contains_key(id.as_str())) {
                return Err(Error::Validation(format!("{name} id {id:?} not found in features")));
            }
        }
        Ok(())
    }
}

pub fn load_split(path: impl AsRef<Path>) -> Result<SplitSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_split(split: &SplitSpec, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(split)?;
    write_file(path.as_ref(), text.as_bytes())
}

/// Packed binary codes: bit 1 encodes `+1`, bit 0 encodes `-1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSet {
    code_len: usize,
    bytes: Vec<u8>,
    ids: Vec<String>,
}

impl CodeSet {
    /// Packs `signs` (row-major, `ids.len() * code_len` entries); non-negative entries become `+1`.
    pub fn from_signs(ids: Vec<String>, code_len: usize, signs: &[f64]) -> Result<Self> {
        check_code_len(code_len)?;
        if signs.len() != ids.len() * code_len {
            return Err(Error::Validation(format!(
                "{} sign values for {} codes of {code_len} bits",
                signs.len(),
                ids.len()
            )));
        }
        check_unique_ids(&ids)?;
        let stride = bytes_per_code(code_len);
        let mut bytes = vec![0u8; ids.len() * stride];
        for (code, out) in signs.chunks_exact(code_len).zip(bytes.chunks_exact_mut(stride)) {
            for (j, &s) in code.iter().enumerate() {
                if s >= 0.0 {
                    out[j / 8] |= 0x80 >> (j % 8);
                }
            }
        }
        Ok(Self { code_len, bytes, ids })
    }

    pub fn from_packed(ids: Vec<String>, code_len: usize, bytes: Vec<u8>) -> Result<Self> {
        check_code_len(code_len)?;
        let stride = bytes_per_code(code_len);
        if bytes.len() != ids.len() * stride {
            return Err(Error::Validation(format!(
                "{} packed bytes for {} codes of {stride} bytes",
                bytes.len(),
                ids.len()
            )));
        }
        check_unique_ids(&ids)?;
        if code_len % 8 != 0 {
            let pad_mask = (1u8 << (8 - code_len % 8)) - 1;
            if let Some(i) = bytes.chunks_exact(stride).position(|c| c[stride - 1] & pad_mask != 0) {
                return Err(Error::Validation(format!("code {i} has non-zero padding bits")));
            }
        }
        Ok(Self { code_len, bytes, ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn code_len(&self) -> usize {
        self.code_len
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn bytes_per_code(&self) -> usize {
        bytes_per_code(self.code_len)
    }

    /// Packed bytes of code `i`.
    pub fn code(&self, i: usize) -> &[u8] {
        let stride = self.bytes_per_code();
        &self.bytes[i * stride..(i + 1) * stride]
    }

    pub fn packed(&self) -> &[u8] {
        &self.bytes
    }

    /// Code `i` as a `±1` vector.
    pub fn signs(&self, i: usize) -> Vec<i8> {
        let code = self.code(i);
        (0..self.code_len)
            .map(|j| if code[j / 8] & (0x80 >> (j % 8)) != 0 { 1 } else { -1 })
            .collect()
    }

    pub fn select(&self, ids: &[String]) -> Result<CodeSet> {
        let index: HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut bytes = Vec::with_capacity(ids.len() * self.bytes_per_code());
        for id in ids {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Error::Validation(format!("unknown code id {id:?}")))?;
            bytes.extend_from_slice(self.code(i));
        }
        CodeSet::from_packed(ids.to_vec(), self.code_len, bytes)
    }
}

pub fn bytes_per_code(code_len: usize) -> usize {
    code_len.div_ceil(8)
}

fn check_code_len(code_len: usize) -> Result<()> {
    if !(MIN_CODE_LEN..=MAX_CODE_LEN).contains(&code_len) {
        return Err(Error::Validation(format!(
            "code length {code_len} outside {MIN_CODE_LEN}..={MAX_CODE_LEN}"
        )));
    }
    Ok(())
}

pub fn save_codes(codes: &CodeSet, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + codes.bytes.len());
    buf.extend_from_slice(CODE_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(codes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(codes.code_len as u64).to_le_bytes());
    write_ids(&mut buf, &codes.ids)?;
    buf.extend_from_slice(&codes.bytes);
    write_file(path.as_ref(), &buf)
}

pub fn load_codes(path: impl AsRef<Path>) -> Result<CodeSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_codes(&bytes).map_err(|e| e.with_path(path))
}

fn decode_codes(bytes: &[u8]) -> Result<CodeSet, DecodeError> {
    let mut r = Reader::new(bytes);
    r.magic(CODE_MAGIC)?;
    let n = r.u64()? as usize;
    let code_len = r.u64()? as usize;
    check_code_len(code_len).map_err(DecodeError::Invalid)?;
    let ids = r.ids(n)?;
    let payload = r.take(n.checked_mul(bytes_per_code(code_len)).ok_or(DecodeError::Truncated)?)?;
    r.finish()?;
    CodeSet::from_packed(ids, code_len, payload.to_vec()).map_err(DecodeError::Invalid)
}

pub(crate) fn write_ids(buf: &mut Vec<u8>, ids: &[String]) -> Result<()> {
    for id in ids {
        let len = u16::try_from(id.len())
            .map_err(|_| Error::Validation(format!("id longer than 65535 bytes: {id:.32}...")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
    }
    Ok(())
}

/// Writes `bytes` to `path`, creating parent directories as needed.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug)]
pub(crate) enum DecodeError {
    Truncated,
    Format(String),
    Invalid(Error),
}

impl DecodeError {
    pub(crate) fn with_path(self, path: &Path) -> Error {
        match self {
            DecodeError::Truncated => Error::io(
                path,
                io::Error::new(io::ErrorKind::UnexpectedEof, "truncated payload"),
            ),
            DecodeError::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            DecodeError::Invalid(e) => e,
        }
    }
}

/// Little-endian cursor over an in-memory file.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(len).ok_or(DecodeError::Truncated)?;
        let out = self.bytes.get(self.pos..end).ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    /// Checks the 4-byte magic and the version word.
    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<(), DecodeError> {
        let got = self.take(4).map_err(|_| DecodeError::Format("file too short for header".into()))?;
        if got != magic {
            return Err(DecodeError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u32().map_err(|_| DecodeError::Format("file too short for header".into()))?;
        if version != FORMAT_VERSION {
            return Err(DecodeError::Format(format!("unsupported version {version}")));
        }
        Ok(())
    }

    pub(crate) fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn ids(&mut self, n: usize) -> Result<Vec<String>, DecodeError> {
        // Each id record needs at least its 2-byte length prefix.
        if n > self.bytes.len().saturating_sub(self.pos) / 2 {
            return Err(DecodeError::Truncated);
        }
        (0..n)
            .map(|i| {
                let len = self.u16()? as usize;
                let raw = self.take(len)?;
                String::from_utf8(raw.to_vec())
                    .map_err(|_| DecodeError::Format(format!("id {i} is not valid UTF-8")))
            })
            .collect()
    }

    pub(crate) fn finish(&self) -> Result<(), DecodeError> {
        if self.pos != self.bytes.len() {
            return Err(DecodeError::Format(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i}")).collect()
    }

    #[test]
    fn load_small_feature_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.dsgf");
        let fs = FeatureSet::new(ids(3), 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        save_features(&fs, &path).unwrap();
        let raw = load_features_with(&path, false).unwrap();
        assert_eq!(raw.len(), 3);
        assert_eq!(raw.dim(), 2);
        assert_eq!(raw, fs);
        let unit = load_features(&path).unwrap();
        assert!((unit.row(2)[0] - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_row_is_rejected_with_index() {
        let err = FeatureSet::new(ids(3), 2, vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("zero feature row at index 1"), "{err}");
    }

    #[test]
    fn non_finite_and_duplicate_ids_are_rejected() {
        let err = FeatureSet::new(ids(2), 1, vec![1.0, f64::NAN]).unwrap_err();
        assert!(err.to_string().contains("row 1"));
        let err = FeatureSet::new(vec!["a".into(), "a".into()], 1, vec![1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.dsgf");
        let fs = FeatureSet::new(ids(2), 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        save_features(&fs, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_features(&path), Err(Error::Format(_))));

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_features(&path), Err(Error::Io { .. })));

        // absurd header counts must not allocate or panic
        let mut huge = bytes[..8].to_vec();
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        std::fs::write(&path, &huge).unwrap();
        assert!(load_features(&path).is_err());
    }

    #[test]
    fn label_csv_parsing() {
        let labels = parse_labels("id,labels\nimg0,3\nimg1,0;7\n").unwrap();
        assert_eq!(labels.labels(0), &[3]);
        assert_eq!(labels.labels(1), &[0, 7]);
        assert_eq!(labels.num_classes(), 8);

        assert!(parse_labels("id,labels\nimg0,\n").is_err());
        assert!(parse_labels("id,labels\nimg0,1\nimg0,2\n").is_err());
        assert!(parse_labels("id,labels\nimg0,x\n").is_err());
        assert!(parse_labels("name,labels\nimg0,1\n").is_err());
    }

    #[test]
    fn labels_align_by_id() {
        let labels = parse_labels("id,labels\na,1\nb,2\nc,3\n").unwrap();
        let aligned = labels.align_to(&["c".into(), "a".into()]).unwrap();
        assert_eq!(aligned.labels(0), &[3]);
        assert_eq!(aligned.labels(1), &[1]);
        assert!(labels.align_to(&["zz".into()]).is_err());
    }

    #[test]
    fn packing_rule() {
        let codes =
            CodeSet::from_signs(ids(1), 8, &[1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0]).unwrap();
        // bit i = code i, most significant bit first
        assert_eq!(codes.packed(), &[0b1010_1010]);
        assert_eq!(codes.signs(0), vec![1, -1, 1, -1, 1, -1, 1, -1]);
    }

    #[test]
    fn non_byte_multiple_is_zero_padded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.dsgc");
        let codes = CodeSet::from_signs(ids(1), 12, &[1.0; 12]).unwrap();
        assert_eq!(codes.packed(), &[0xff, 0xf0]);
        save_codes(&codes, &path).unwrap();
        assert_eq!(load_codes(&path).unwrap(), codes);
        assert!(CodeSet::from_packed(ids(1), 12, vec![0xff, 0xff]).is_err());
    }

    #[test]
    fn code_len_bounds() {
        assert!(CodeSet::from_signs(ids(1), 4, &[1.0; 4]).is_err());
        assert!(CodeSet::from_signs(ids(1), 4097, &[1.0; 4097]).is_err());
    }

    #[test]
    fn split_validation() {
        let fs = FeatureSet::new(ids(4), 1, vec![1.0; 4]).unwrap();
        let ok = SplitSpec {
            train: vec!["img0".into(), "img1".into()],
            query: vec!["img3".into()],
            retrieval: vec!["img0".into(), "img1".into(), "img2".into()],
        };
        ok.validate(&fs).unwrap();
        let overlap = SplitSpec { query: vec!["img0".into()], ..ok.clone() };
        assert!(overlap.validate(&fs).is_err());
        let missing = SplitSpec { query: vec!["nope".into()], ..ok };
        assert!(missing.validate(&fs).is_err());
    }
}
