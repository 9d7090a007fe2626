//! Core domain types and their on-disk formats.
//!
//! A candidate bundle is one binary payload file plus a JSON sidecar next to it
//! (`<path>.meta.json`). The binary layout is little-endian:
//!
//! | field | type |
//! | --- | --- |
//! | magic | `b"TFRB"` |
//! | version | `u32` (= 1) |
//! | n, D, Z | `u64` each, `Z = 0` when there are no source probabilities |
//! | flags | `u32`, bit 0 = labels present, bit 1 = gradient norms present |
//! | labels | `n` x `i64` (if bit 0) |
//! | embeddings | `n * D` x `f64`, row-major |
//! | source probabilities | `n * Z` x `f64`, row-major (if `Z > 0`) |
//! | conv1, conv2 gradient norms | 2 x `f64` (if bit 1) |
//!
//! Target sets use the same layout with the labels flag set.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BUNDLE_MAGIC: &[u8; 4] = b"TFRB";
pub const BUNDLE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 8 + 4;
const FLAG_LABELS: u32 = 1;
const FLAG_GRAD_NORMS: u32 = 1 << 1;
const PROB_ROW_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("dimension mismatch in {field}: expected {expected}, found {found}")]
    DimensionMismatch {
        field: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {field} at element {offset}")]
    NonFiniteValue { field: String, offset: usize },
    #[error("label {label} of sample {index} is outside [0, {classes})")]
    LabelOutOfRange {
        index: usize,
        label: i64,
        classes: usize,
    },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("duplicate identifier `{0}`")]
    DuplicateIdentifier(String),
    #[error("value {value} for ({row}, {column}) is outside [0, 100]")]
    ValueOutOfRange {
        row: String,
        column: String,
        value: f64,
    },
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A labeled target dataset in embedding form.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub name: String,
    pub embeddings: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl TargetSet {
    pub fn new(
        name: impl Into<String>,
        embeddings: DMatrix<f64>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        let set = Self {
            name: name.into(),
            embeddings,
            labels,
            num_classes,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn n(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.embeddings.nrows();
        if n < 2 {
            return Err(DataError::InvariantViolation(format!(
                "target set needs n >= 2 samples, got {n}"
            )));
        }
        if self.embeddings.ncols() < 1 {
            return Err(DataError::InvariantViolation(
                "target set needs embedding dimension >= 1".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(DataError::InvariantViolation(format!(
                "target set needs C >= 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.labels.len() != n {
            return Err(DataError::DimensionMismatch {
                field: "labels".into(),
                expected: n,
                found: self.labels.len(),
            });
        }
        for (index, &label) in self.labels.iter().enumerate() {
            if label >= self.num_classes {
                return Err(DataError::LabelOutOfRange {
                    index,
                    label: label as i64,
                    classes: self.num_classes,
                });
            }
        }
        let present: HashSet<usize> = self.labels.iter().copied().collect();
        if present.len() < 2 {
            return Err(DataError::InvariantViolation(
                "target set needs at least 2 classes with samples".into(),
            ));
        }
        check_finite("embeddings", self.embeddings.as_slice())
    }
}

/// L2 norms of the triplet-loss gradient w.r.t. the first two conv layers' weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradNorms {
    pub conv1: f64,
    pub conv2: f64,
}

/// One source model's exported artifacts for a target set.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateBundle {
    pub model_id: String,
    pub source_dataset: String,
    pub architecture: String,
    pub embeddings: DMatrix<f64>,
    pub source_probs: Option<DMatrix<f64>>,
    pub grad_norms: Option<GradNorms>,
    pub provenance: BTreeMap<String, String>,
}

impl CandidateBundle {
    pub fn n(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.embeddings.nrows();
        if n == 0 {
            return Err(DataError::InvariantViolation(format!(
                "bundle `{}` has no samples",
                self.model_id
            )));
        }
        if self.embeddings.ncols() == 0 {
            return Err(DataError::InvariantViolation(format!(
                "bundle `{}` has zero-width embeddings",
                self.model_id
            )));
        }
        check_finite("embeddings", self.embeddings.as_slice())?;
        if let Some(probs) = &self.source_probs {
            if probs.nrows() != n {
                return Err(DataError::DimensionMismatch {
                    field: "source_probs rows".into(),
                    expected: n,
                    found: probs.nrows(),
                });
            }
            if probs.ncols() == 0 {
                return Err(DataError::InvariantViolation(
                    "source_probs present with zero source classes".into(),
                ));
            }
            check_finite("source_probs", probs.as_slice())?;
            for (i, row) in probs.row_iter().enumerate() {
                if row.iter().any(|&p| p < 0.0) {
                    return Err(DataError::InvariantViolation(format!(
                        "source_probs row {i} has a negative entry"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_ROW_TOL {
                    return Err(DataError::InvariantViolation(format!(
                        "source_probs row {i} sums to {sum}, expected 1"
                    )));
                }
            }
        }
        if let Some(g) = self.grad_norms {
            for (name, v) in [("grad_norm_conv1", g.conv1), ("grad_norm_conv2", g.conv2)] {
                if !v.is_finite() || v < 0.0 {
                    return Err(DataError::InvariantViolation(format!(
                        "{name} = {v} must be finite and non-negative"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_finite(field: &str, values: &[f64]) -> Result<(), DataError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(offset) => Err(DataError::NonFiniteValue {
            field: field.into(),
            offset,
        }),
        None => Ok(()),
    }
}

/// Metadata stored next to a bundle as `<path>.meta.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMeta {
    pub model_id: String,
    #[serde(default)]
    pub source_dataset: String,
    #[serde(default)]
    pub architecture: String,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// The decoded binary payload, independent of whether it holds a target or a candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBundle {
    pub labels: Option<Vec<i64>>,
    pub embeddings: DMatrix<f64>,
    pub source_probs: Option<DMatrix<f64>>,
    pub grad_norms: Option<GradNorms>,
}

impl RawBundle {
    pub fn encode(&self) -> Vec<u8> {
        let n = self.embeddings.nrows();
        let d = self.embeddings.ncols();
        let z = self.source_probs.as_ref().map_or(0, |p| p.ncols());
        let mut flags = 0u32;
        if self.labels.is_some() {
            flags |= FLAG_LABELS;
        }
        if self.grad_norms.is_some() {
            flags |= FLAG_GRAD_NORMS;
        }
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * n * (1 + d + z) + 16);
        buf.extend_from_slice(BUNDLE_MAGIC);
        buf.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(n as u64).to_le_bytes());
        buf.extend_from_slice(&(d as u64).to_le_bytes());
        buf.extend_from_slice(&(z as u64).to_le_bytes());
        buf.extend_from_slice(&flags.to_le_bytes());
        if let Some(labels) = &self.labels {
            for &l in labels {
                buf.extend_from_slice(&l.to_le_bytes());
            }
        }
        push_row_major(&mut buf, &self.embeddings);
        if let Some(p) = &self.source_probs {
            push_row_major(&mut buf, p);
        }
        if let Some(g) = self.grad_norms {
            buf.extend_from_slice(&g.conv1.to_le_bytes());
            buf.extend_from_slice(&g.conv2.to_le_bytes());
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DataError> {
        if bytes.len() < HEADER_LEN {
            return Err(DataError::MalformedHeader {
                offset: bytes.len(),
                reason: format!("file has {} bytes, header needs {HEADER_LEN}", bytes.len()),
            });
        }
        if &bytes[0..4] != BUNDLE_MAGIC {
            return Err(DataError::MalformedHeader {
                offset: 0,
                reason: "bad magic, expected TFRB".into(),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != BUNDLE_VERSION {
            return Err(DataError::MalformedHeader {
                offset: 4,
                reason: format!("unsupported format version {version}"),
            });
        }
        let read_u64 = |at: usize, field: &str| -> Result<usize, DataError> {
            let v = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            usize::try_from(v).map_err(|_| DataError::MalformedHeader {
                offset: at,
                reason: format!("{field} = {v} does not fit in memory"),
            })
        };
        let n = read_u64(8, "n")?;
        let d = read_u64(16, "D")?;
        let z = read_u64(24, "Z")?;
        let flags = u32::from_le_bytes(bytes[32..36].try_into().unwrap());
        if flags & !(FLAG_LABELS | FLAG_GRAD_NORMS) != 0 {
            return Err(DataError::MalformedHeader {
                offset: 32,
                reason: format!("unknown flag bits {flags:#x}"),
            });
        }
        let has_labels = flags & FLAG_LABELS != 0;
        let has_norms = flags & FLAG_GRAD_NORMS != 0;
        let words = n
            .checked_mul(d)
            .and_then(|nd| n.checked_mul(z).and_then(|nz| nd.checked_add(nz)))
            .and_then(|w| w.checked_add(if has_labels { n } else { 0 }))
            .and_then(|w| w.checked_add(if has_norms { 2 } else { 0 }))
            .ok_or_else(|| DataError::MalformedHeader {
                offset: 8,
                reason: "declared dimensions overflow".into(),
            })?;
        let expected = words
            .checked_mul(8)
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or_else(|| DataError::MalformedHeader {
                offset: 8,
                reason: "declared dimensions overflow".into(),
            })?;
        if bytes.len() != expected {
            return Err(DataError::DimensionMismatch {
                field: "payload bytes".into(),
                expected,
                found: bytes.len(),
            });
        }

        let mut at = HEADER_LEN;
        let mut next_word = || {
            let w: [u8; 8] = bytes[at..at + 8].try_into().unwrap();
            at += 8;
            w
        };
        let labels = has_labels.then(|| (0..n).map(|_| i64::from_le_bytes(next_word())).collect());
        let emb: Vec<f64> = (0..n * d)
            .map(|_| f64::from_le_bytes(next_word()))
            .collect();
        let probs: Option<Vec<f64>> = (z > 0).then(|| {
            (0..n * z)
                .map(|_| f64::from_le_bytes(next_word()))
                .collect()
        });
        let grad_norms = has_norms.then(|| GradNorms {
            conv1: f64::from_le_bytes(next_word()),
            conv2: f64::from_le_bytes(next_word()),
        });
        Ok(Self {
            labels,
            embeddings: DMatrix::from_row_slice(n, d, &emb),
            source_probs: probs.map(|p| DMatrix::from_row_slice(n, z, &p)),
            grad_norms,
        })
    }
}

fn push_row_major(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    Ok(())
}

fn write_meta(path: &Path, meta: &BundleMeta) -> Result<(), DataError> {
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta).expect("metadata serializes");
    write_file(&side, json.as_bytes())
}

fn read_meta(path: &Path) -> Result<Option<BundleMeta>, DataError> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&side).map_err(io_err(&side))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| DataError::Sidecar {
            path: side,
            message: e.to_string(),
        })
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn save_bundle(bundle: &CandidateBundle, path: &Path) -> Result<(), DataError> {
    bundle.validate()?;
    let raw = RawBundle {
        labels: None,
        embeddings: bundle.embeddings.clone(),
        source_probs: bundle.source_probs.clone(),
        grad_norms: bundle.grad_norms,
    };
    write_file(path, &raw.encode())?;
    write_meta(
        path,
        &BundleMeta {
            model_id: bundle.model_id.clone(),
            source_dataset: bundle.source_dataset.clone(),
            architecture: bundle.architecture.clone(),
            provenance: bundle.provenance.clone(),
        },
    )
}

/// Loads a candidate bundle. Labels in the payload, if any, are ignored. A missing
/// sidecar falls back to the file stem as `model_id`.
pub fn load_bundle(path: &Path) -> Result<CandidateBundle, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let raw = RawBundle::decode(&bytes)?;
    let meta = read_meta(path)?.unwrap_or_else(|| BundleMeta {
        model_id: file_stem(path),
        ..Default::default()
    });
    let bundle = CandidateBundle {
        model_id: meta.model_id,
        source_dataset: meta.source_dataset,
        architecture: meta.architecture,
        embeddings: raw.embeddings,
        source_probs: raw.source_probs,
        grad_norms: raw.grad_norms,
        provenance: meta.provenance,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub const NUM_CLASSES_KEY: &str = "num_classes";

pub fn save_target_set(target: &TargetSet, path: &Path) -> Result<(), DataError> {
    target.validate()?;
    let raw = RawBundle {
        labels: Some(target.labels.iter().map(|&l| l as i64).collect()),
        embeddings: target.embeddings.clone(),
        source_probs: None,
        grad_norms: None,
    };
    write_file(path, &raw.encode())?;
    let mut provenance = BTreeMap::new();
    provenance.insert(NUM_CLASSES_KEY.to_string(), target.num_classes.to_string());
    write_meta(
        path,
        &BundleMeta {
            model_id: target.name.clone(),
            source_dataset: target.name.clone(),
            architecture: String::new(),
            provenance,
        },
    )
}

/// Loads a target set. The class count comes from the sidecar's `num_classes`
/// provenance entry, or `max(label) + 1` when no sidecar declares it.
pub fn load_target_set(path: &Path) -> Result<TargetSet, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let raw = RawBundle::decode(&bytes)?;
    let meta = read_meta(path)?;
    let labels = raw.labels.ok_or_else(|| DataError::MalformedHeader {
        offset: 32,
        reason: "target set file has no labels (flag bit 0 unset)".into(),
    })?;
    let declared = match meta
        .as_ref()
        .and_then(|m| m.provenance.get(NUM_CLASSES_KEY))
    {
        Some(s) => Some(s.parse::<usize>().map_err(|e| DataError::Sidecar {
            path: sidecar_path(path),
            message: format!("num_classes `{s}`: {e}"),
        })?),
        None => None,
    };
    let num_classes = declared
        .unwrap_or_else(|| labels.iter().copied().max().map_or(0, |m| m.max(-1) + 1) as usize);
    let mut checked = Vec::with_capacity(labels.len());
    for (index, &label) in labels.iter().enumerate() {
        if label < 0 || label as u64 >= num_classes as u64 {
            return Err(DataError::LabelOutOfRange {
                index,
                label,
                classes: num_classes,
            });
        }
        checked.push(label as usize);
    }
    let name = meta.map(|m| m.model_id).unwrap_or_else(|| file_stem(path));
    TargetSet::new(name, raw.embeddings, checked, num_classes)
}

/// Direction in which scores are read when the pool is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    InDomain,
    CrossDomain,
}

/// Raw and pool-normalized terms behind a combined score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponents {
    pub s_lp: f64,
    /// `None` when the bundle carries no gradient norms.
    pub s_fu: Option<f64>,
    pub s_lp_norm: f64,
    pub s_fu_norm: Option<f64>,
}

/// Transferability scores of a pool of candidates for one target under one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub metric_name: String,
    #[serde(default)]
    pub target: String,
    pub scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<BTreeMap<String, ScoreComponents>>,
    pub mode: Direction,
}

impl ScoreTable {
    /// Highest-scoring candidate; ties go to the lexicographically first id.
    pub fn argmax_model(&self) -> Option<(&str, f64)> {
        let mut best: Option<(&str, f64)> = None;
        for (id, &s) in &self.scores {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((id.as_str(), s));
            }
        }
        best
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if let Some((id, v)) = self.scores.iter().find(|(_, v)| !v.is_finite()) {
            return Err(DataError::InvariantViolation(format!(
                "score for `{id}` is {v}"
            )));
        }
        Ok(())
    }
}

/// Source x target matrix of fine-tuned test AUC x100. Missing cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTable {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl GroundTruthTable {
    pub fn new(
        rows: Vec<String>,
        columns: Vec<String>,
        values: Vec<Vec<Option<f64>>>,
    ) -> Result<Self, DataError> {
        let t = Self {
            rows,
            columns,
            values,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for ids in [&self.rows, &self.columns] {
            let mut seen = HashSet::new();
            for id in ids {
                if !seen.insert(id) {
                    return Err(DataError::DuplicateIdentifier(id.clone()));
                }
            }
        }
        if self.values.len() != self.rows.len() {
            return Err(DataError::DimensionMismatch {
                field: "ground-truth rows".into(),
                expected: self.rows.len(),
                found: self.values.len(),
            });
        }
        for (r, row) in self.values.iter().enumerate() {
            if row.len() != self.columns.len() {
                return Err(DataError::DimensionMismatch {
                    field: format!("ground-truth row `{}`", self.rows[r]),
                    expected: self.columns.len(),
                    found: row.len(),
                });
            }
            for (c, v) in row.iter().enumerate() {
                if let Some(v) = *v {
                    if !(0.0..=100.0).contains(&v) {
                        return Err(DataError::ValueOutOfRange {
                            row: self.rows[r].clone(),
                            column: self.columns[c].clone(),
                            value: v,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.rows.iter().position(|r| r == id)
    }

    pub fn column_index(&self, id: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == id)
    }

    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let r = self.row_index(row)?;
        let c = self.column_index(column)?;
        self.values[r][c]
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().flatten().filter(|v| v.is_none()).count()
    }

    /// Present `(source, value)` pairs of one target column, in row order.
    pub fn column(&self, column: &str) -> Option<Vec<(&str, f64)>> {
        let c = self.column_index(column)?;
        Some(
            self.rows
                .iter()
                .zip(&self.values)
                .filter_map(|(id, row)| row[c].map(|v| (id.as_str(), v)))
                .collect(),
        )
    }

    /// Best source for a target; ties resolve to the earlier row.
    pub fn best_source(&self, column: &str) -> Option<(&str, f64)> {
        let mut best: Option<(&str, f64)> = None;
        for (id, v) in self.column(column)? {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((id, v));
            }
        }
        best
    }

    pub fn from_csv_str(text: &str) -> Result<Self, DataError> {
        let (columns, rows, values) = parse_labeled_csv(text)?;
        Self::new(rows, columns, values)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("source");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (id, row) in self.rows.iter().zip(&self.values) {
            out.push_str(id);
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&format!("{v}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Blank and `-` cells are missing.
pub(crate) type LabeledCells = (Vec<String>, Vec<String>, Vec<Vec<Option<f64>>>);

/// Header of column ids after a corner cell, then one labeled row per line.
/// Returns `(columns, row ids, cells)`.
pub(crate) fn parse_labeled_csv(text: &str) -> Result<LabeledCells, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| DataError::ParseError {
        line: 1,
        message: e.to_string(),
    })?;
    if header.len() < 2 {
        return Err(DataError::ParseError {
            line: 1,
            message: "header needs a corner cell and at least one target".into(),
        });
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| DataError::ParseError {
            line,
            message: e.to_string(),
        })?;
        if record.len() != columns.len() + 1 {
            return Err(DataError::ParseError {
                line,
                message: format!(
                    "expected {} cells, found {}",
                    columns.len() + 1,
                    record.len()
                ),
            });
        }
        rows.push(record[0].to_string());
        let row = record
            .iter()
            .skip(1)
            .map(|cell| parse_optional_cell(cell, line))
            .collect::<Result<Vec<_>, _>>()?;
        values.push(row);
    }
    Ok((columns, rows, values))
}

pub(crate) fn parse_optional_cell(cell: &str, line: usize) -> Result<Option<f64>, DataError> {
    let cell = cell.trim();
    if cell.is_empty() || cell == "-" {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|e| DataError::ParseError {
            line,
            message: format!("`{cell}`: {e}"),
        })
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruthTable, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    GroundTruthTable::from_csv_str(&text)
}

pub fn save_ground_truth(table: &GroundTruthTable, path: &Path) -> Result<(), DataError> {
    write_file(path, table.to_csv_string().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target(n: usize, d: usize) -> TargetSet {
        let emb = DMatrix::from_fn(n, d, |i, j| (i * d + j) as f64 * 0.25 - 3.0);
        let labels = (0..n).map(|i| i % 2).collect();
        TargetSet::new("t", emb, labels, 2).unwrap()
    }

    fn bundle() -> CandidateBundle {
        CandidateBundle {
            model_id: "m1".into(),
            source_dataset: "src".into(),
            architecture: "micro".into(),
            embeddings: DMatrix::from_fn(3, 2, |i, j| i as f64 - j as f64 * 0.5),
            source_probs: Some(DMatrix::from_row_slice(
                3,
                2,
                &[0.25, 0.75, 1.0, 0.0, 0.5, 0.5],
            )),
            grad_norms: Some(GradNorms {
                conv1: 1.0,
                conv2: 2.0,
            }),
            provenance: BTreeMap::from([("seed".to_string(), "7".to_string())]),
        }
    }

    #[test]
    fn target_set_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tfrb");
        let t = target(200, 512);
        save_target_set(&t, &path).unwrap();
        let back = load_target_set(&path).unwrap();
        assert_eq!(back.n(), 200);
        assert_eq!(back.dim(), 512);
        assert_eq!(back.num_classes, 2);
        assert_eq!(back, t);
    }

    #[test]
    fn label_equal_to_class_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tfrb");
        save_target_set(&target(4, 2), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        // label of sample 3 := 2 == C
        bytes[HEADER_LEN + 24..HEADER_LEN + 32].copy_from_slice(&2i64.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        match load_target_set(&path) {
            Err(DataError::LabelOutOfRange {
                index,
                label,
                classes,
            }) => {
                assert_eq!((index, label, classes), (3, 2, 2));
            }
            other => panic!("expected LabelOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn truncated_files_are_rejected() {
        let bytes = RawBundle {
            labels: Some(vec![0, 1, 0]),
            embeddings: DMatrix::zeros(3, 4),
            source_probs: None,
            grad_norms: None,
        }
        .encode();
        assert!(matches!(
            RawBundle::decode(&bytes[..20]),
            Err(DataError::MalformedHeader { .. })
        ));
        assert!(matches!(
            RawBundle::decode(&bytes[..bytes.len() - 5]),
            Err(DataError::DimensionMismatch { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            RawBundle::decode(&bad),
            Err(DataError::MalformedHeader { offset: 0, .. })
        ));
    }

    #[test]
    fn non_finite_embedding_is_named() {
        let mut emb = DMatrix::zeros(3, 2);
        emb[(1, 1)] = f64::NAN;
        let err = TargetSet::new("t", emb, vec![0, 1, 0], 2).unwrap_err();
        assert!(
            matches!(err, DataError::NonFiniteValue { offset: 4, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn target_invariants() {
        let emb = DMatrix::zeros(3, 2);
        assert!(TargetSet::new("t", emb.clone(), vec![0, 0, 0], 2).is_err());
        assert!(TargetSet::new("t", emb.clone(), vec![0, 1, 0], 1).is_err());
        assert!(TargetSet::new("t", DMatrix::zeros(1, 2), vec![0], 2).is_err());
        assert!(TargetSet::new("t", emb, vec![0, 1], 2).is_err());
    }

    #[test]
    fn bundle_round_trip_with_grad_norms() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m1.tfrb");
        let b = bundle();
        save_bundle(&b, &path).unwrap();
        assert!(sidecar_path(&path).exists());
        assert_eq!(load_bundle(&path).unwrap(), b);
    }

    #[test]
    fn bundle_invariants() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tfrb");

        let mut b = bundle();
        b.source_probs = Some(DMatrix::from_row_slice(
            3,
            2,
            &[0.4, 0.4, 1.0, 0.0, 0.5, 0.5],
        ));
        assert!(matches!(
            save_bundle(&b, &path),
            Err(DataError::InvariantViolation(_))
        ));

        let mut b = bundle();
        b.embeddings = DMatrix::zeros(0, 2);
        b.source_probs = None;
        assert!(matches!(
            save_bundle(&b, &path),
            Err(DataError::InvariantViolation(_))
        ));

        let mut b = bundle();
        b.grad_norms = Some(GradNorms {
            conv1: -1.0,
            conv2: 1.0,
        });
        assert!(matches!(
            save_bundle(&b, &path),
            Err(DataError::InvariantViolation(_))
        ));

        let mut b = bundle();
        b.source_probs = Some(DMatrix::from_row_slice(
            3,
            2,
            &[-0.5, 1.5, 1.0, 0.0, 0.5, 0.5],
        ));
        assert!(matches!(
            save_bundle(&b, &path),
            Err(DataError::InvariantViolation(_))
        ));
    }

    #[test]
    fn negative_norm_injected_on_disk_is_caught_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m1.tfrb");
        save_bundle(&bundle(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let at = bytes.len() - 16;
        bytes[at..at + 8].copy_from_slice(&(-3.0f64).to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_bundle(&path),
            Err(DataError::InvariantViolation(_))
        ));
    }

    #[test]
    fn ground_truth_csv_parsing() {
        let t = GroundTruthTable::from_csv_str("source,A,B\nx,1.5,\ny,-,100\n").unwrap();
        assert_eq!(t.get("x", "A"), Some(1.5));
        assert_eq!(t.get("x", "B"), None);
        assert_eq!(t.get("y", "A"), None);
        assert_eq!(t.missing_count(), 2);
        assert_eq!(
            GroundTruthTable::from_csv_str(&t.to_csv_string()).unwrap(),
            t
        );

        assert!(matches!(
            GroundTruthTable::from_csv_str("source,A,A\nx,1,2\n"),
            Err(DataError::DuplicateIdentifier(_))
        ));
        assert!(matches!(
            GroundTruthTable::from_csv_str("source,A\nx,1\nx,2\n"),
            Err(DataError::DuplicateIdentifier(_))
        ));
        assert!(matches!(
            GroundTruthTable::from_csv_str("source,A\nx,101\n"),
            Err(DataError::ValueOutOfRange { .. })
        ));
        assert!(matches!(
            GroundTruthTable::from_csv_str("source,A\nx,abc\n"),
            Err(DataError::ParseError { line: 2, .. })
        ));
    }

    #[test]
    fn argmax_prefers_first_id_on_ties() {
        let t = ScoreTable {
            metric_name: "m".into(),
            target: "t".into(),
            scores: BTreeMap::from([("b".into(), 1.0), ("a".into(), 1.0), ("c".into(), 0.5)]),
            components: None,
            mode: Direction::InDomain,
        };
        assert_eq!(t.argmax_model(), Some(("a", 1.0)));
    }
}
