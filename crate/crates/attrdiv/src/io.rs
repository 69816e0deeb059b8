//! On-disk formats.
//!
//! Embedding and score matrices share one binary layout, all integers and
//! floats little-endian:
//!
//! ```text
//! "ADEM" | version u16 = 1 | kind u8 | dim u32 | n u64
//! | n × dim f32, row-major
//! | footer length u32 | footer (JSON object)
//! ```
//!
//! Kind 0 is image embeddings, 1 text embeddings, 2 scores. Embedding ids
//! live in a sidecar `<stem>.ids.jsonl`, one JSON string per line. For
//! embeddings the footer is the free-form metadata map; for scores it holds
//! the attribute names, the score mode and, for HCS, the centers.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use attrdiv_core::attributes::CaptionRecord;
use attrdiv_core::scoring::CenterPair;
use attrdiv_core::{AttributeError, AttributeSet, EmbeddingError, EmbeddingKind, EmbeddingSet, ScoreError, ScoreMatrix, ScoreMode};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"ADEM";
pub const VERSION: u16 = 1;
/// Bytes before the payload.
pub const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 8;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("{path}: row {row}: expected {expected} values, found {found}")]
    DimensionMismatch { path: PathBuf, row: usize, expected: usize, found: usize },
    #[error("{path}: row {row}: non-finite value")]
    NonFiniteValue { path: PathBuf, row: usize },
    #[error("{path}: {source}")]
    IoFailure { path: PathBuf, source: io::Error },
    #[error("{path}: line {line}: {reason}")]
    BadRecord { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {source}")]
    Embedding { path: PathBuf, source: EmbeddingError },
    #[error("{path}: {source}")]
    Score { path: PathBuf, source: ScoreError },
    #[error("{path}: {source}")]
    Attribute { path: PathBuf, source: AttributeError },
}

impl FormatError {
    /// Short machine-readable name of the failure.
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::MalformedHeader { .. } => "MalformedHeader",
            FormatError::DimensionMismatch { .. } => "DimensionMismatch",
            FormatError::NonFiniteValue { .. } => "NonFiniteValue",
            FormatError::IoFailure { .. } => "IoFailure",
            FormatError::BadRecord { .. } => "BadRecord",
            FormatError::Embedding { source, .. } => match source {
                EmbeddingError::DimensionMismatch { .. } => "DimensionMismatch",
                EmbeddingError::NonFiniteValue { .. } => "NonFiniteValue",
                _ => "InvalidEmbeddings",
            },
            FormatError::Score { .. } => "InvalidScores",
            FormatError::Attribute { .. } => "InvalidAttributes",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::IoFailure { path: path.to_path_buf(), source }
}

fn malformed(path: &Path, reason: impl Into<String>) -> FormatError {
    FormatError::MalformedHeader { path: path.to_path_buf(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Image,
    Text,
    Scores,
}

impl FileKind {
    pub fn byte(self) -> u8 {
        match self {
            FileKind::Image => 0,
            FileKind::Text => 1,
            FileKind::Scores => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(FileKind::Image),
            1 => Some(FileKind::Text),
            2 => Some(FileKind::Scores),
            _ => None,
        }
    }
}

impl From<EmbeddingKind> for FileKind {
    fn from(k: EmbeddingKind) -> Self {
        match k {
            EmbeddingKind::Image => FileKind::Image,
            EmbeddingKind::Text => FileKind::Text,
        }
    }
}

/// A decoded matrix file before its footer is interpreted.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatrix {
    pub kind: FileKind,
    pub dim: usize,
    pub n: usize,
    pub data: Vec<f32>,
    pub footer: Vec<u8>,
}

/// Serializes a matrix into the binary layout.
pub fn encode_matrix(kind: FileKind, dim: usize, data: &[f32], footer: &[u8]) -> Vec<u8> {
    let n = data.len().checked_div(dim).unwrap_or(0);
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 4 + 4 + footer.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind.byte());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(footer.len() as u32).to_le_bytes());
    out.extend_from_slice(footer);
    out
}

/// Parses the binary layout. `path` only labels errors.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<RawMatrix, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(malformed(path, format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(malformed(path, "missing ADEM magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(malformed(path, format!("unsupported version {version}")));
    }
    let kind = FileKind::from_byte(bytes[6]).ok_or_else(|| malformed(path, format!("unknown kind byte {}", bytes[6])))?;
    let dim = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(bytes[11..19].try_into().unwrap());
    if dim == 0 {
        return Err(malformed(path, "dim is zero"));
    }
    let row_bytes = dim * 4;
    let body = &bytes[HEADER_LEN..];
    let payload_len = usize::try_from(n)
        .ok()
        .and_then(|n| n.checked_mul(row_bytes))
        .filter(|&len| len <= body.len())
        .ok_or_else(|| {
            let held = body.len() / row_bytes;
            malformed(path, format!("declared n={n} but payload holds {held} rows"))
        })?;
    let n = n as usize;
    let rest = &body[payload_len..];
    if rest.len() < 4 {
        return Err(malformed(path, format!("declared n={n} leaves no room for the footer length")));
    }
    let footer_len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    if rest.len() - 4 != footer_len {
        return Err(malformed(
            path,
            format!("footer length {footer_len} does not match the {} trailing bytes", rest.len() - 4),
        ));
    }
    let mut data = Vec::with_capacity(n * dim);
    for (i, chunk) in body[..payload_len].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFiniteValue { path: path.to_path_buf(), row: i / dim });
        }
        data.push(v);
    }
    Ok(RawMatrix { kind, dim, n, data, footer: rest[4..].to_vec() })
}

fn read_raw(path: &Path) -> Result<RawMatrix, FormatError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_matrix(&bytes, path)
}

/// `<dir>/<stem>.ids.jsonl` for `<dir>/<stem>.<ext>`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("ids.jsonl")
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<(), FormatError> {
    let footer = serde_json::to_vec(set.meta()).expect("string map serializes");
    write_atomic(path, &encode_matrix(set.kind().into(), set.dim(), set.data(), &footer))?;
    let mut ids = Vec::new();
    for id in set.ids() {
        serde_json::to_writer(&mut ids, id).expect("string serializes");
        ids.push(b'\n');
    }
    write_atomic(&sidecar_path(path), &ids)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet, FormatError> {
    let raw = read_raw(path)?;
    let kind = match raw.kind {
        FileKind::Image => EmbeddingKind::Image,
        FileKind::Text => EmbeddingKind::Text,
        FileKind::Scores => return Err(malformed(path, "expected an embedding file, found scores")),
    };
    let meta: BTreeMap<String, String> = if raw.footer.is_empty() {
        BTreeMap::new()
    } else {
        serde_json::from_slice(&raw.footer).map_err(|e| malformed(path, format!("footer: {e}")))?
    };
    let sidecar = sidecar_path(path);
    let ids = read_lines::<String>(&sidecar)?;
    if ids.len() != raw.n {
        return Err(FormatError::BadRecord {
            path: sidecar,
            line: ids.len().min(raw.n) + 1,
            reason: format!("{} ids for {} rows", ids.len(), raw.n),
        });
    }
    EmbeddingSet::new(kind, raw.dim, ids, raw.data)
        .map(|s| s.with_meta(meta))
        .map_err(|source| FormatError::Embedding { path: path.to_path_buf(), source })
}

/// Footer of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreFooter {
    pub attributes: Vec<String>,
    pub mode: ScoreMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<CenterPair>,
}

/// Writes a score matrix; values are stored at 32-bit precision.
pub fn write_scores(scores: &ScoreMatrix, path: &Path) -> Result<(), FormatError> {
    let footer = ScoreFooter {
        attributes: scores.attributes().to_vec(),
        mode: scores.mode(),
        centers: scores.centers().cloned(),
    };
    let footer = serde_json::to_vec(&footer).expect("footer serializes");
    let data: Vec<f32> = scores.values().iter().map(|&v| v as f32).collect();
    write_atomic(path, &encode_matrix(FileKind::Scores, scores.n_attributes(), &data, &footer))
}

pub fn read_scores(path: &Path) -> Result<ScoreMatrix, FormatError> {
    let raw = read_raw(path)?;
    if raw.kind != FileKind::Scores {
        return Err(malformed(path, "expected a score file, found embeddings"));
    }
    let footer: ScoreFooter =
        serde_json::from_slice(&raw.footer).map_err(|e| malformed(path, format!("footer: {e}")))?;
    if footer.attributes.len() != raw.dim {
        return Err(FormatError::DimensionMismatch {
            path: path.to_path_buf(),
            row: 0,
            expected: footer.attributes.len(),
            found: raw.dim,
        });
    }
    let values = raw.data.iter().map(|&v| f64::from(v)).collect();
    ScoreMatrix::new(footer.mode, footer.attributes, values, footer.centers)
        .map_err(|source| FormatError::Score { path: path.to_path_buf(), source })
}

/// Centers to score a generated set against: either the footer of an HCS
/// score file or a JSON object `{"image": Center, "text": Center}`.
pub fn read_centers(path: &Path) -> Result<CenterPair, FormatError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.starts_with(MAGIC) {
        let raw = decode_matrix(&bytes, path)?;
        if raw.kind != FileKind::Scores {
            return Err(malformed(path, "centers must come from a score file"));
        }
        let footer: ScoreFooter =
            serde_json::from_slice(&raw.footer).map_err(|e| malformed(path, format!("footer: {e}")))?;
        return footer.centers.ok_or_else(|| malformed(path, format!("{} scores carry no centers", footer.mode.as_str())));
    }
    serde_json::from_slice(&bytes).map_err(|e| FormatError::BadRecord {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })
}

pub fn write_centers(centers: &CenterPair, path: &Path) -> Result<(), FormatError> {
    let mut bytes = serde_json::to_vec_pretty(centers).expect("centers serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Parses one JSON value per non-blank line.
fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, FormatError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| FormatError::BadRecord {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads captions JSON Lines: `{"id", "caption", "phrases"?}` per line.
pub fn read_captions(path: &Path) -> Result<Vec<CaptionRecord>, FormatError> {
    let records: Vec<CaptionRecord> = read_lines(path)?;
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|e| FormatError::BadRecord { path: path.to_path_buf(), line: i + 1, reason: e.to_string() })?;
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeEntry {
    phrase: String,
    count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeFile {
    template: String,
    attributes: Vec<AttributeEntry>,
}

/// `{"template": str, "attributes": [{"phrase": str, "count": int}]}`.
pub fn attributes_to_json(attrs: &AttributeSet) -> Vec<u8> {
    let file = AttributeFile {
        template: attrs.template().to_string(),
        attributes: attrs
            .phrases()
            .iter()
            .zip(attrs.counts())
            .map(|(p, &c)| AttributeEntry { phrase: p.clone(), count: c })
            .collect(),
    };
    let mut out = serde_json::to_vec_pretty(&file).expect("attributes serialize");
    out.push(b'\n');
    out
}

pub fn write_attributes(attrs: &AttributeSet, path: &Path) -> Result<(), FormatError> {
    write_atomic(path, &attributes_to_json(attrs))
}

pub fn read_attributes(path: &Path) -> Result<AttributeSet, FormatError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let file: AttributeFile = serde_json::from_slice(&bytes).map_err(|e| FormatError::BadRecord {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    let (phrases, counts) = file.attributes.into_iter().map(|a| (a.phrase, a.count)).unzip();
    AttributeSet::new(phrases, counts, file.template)
        .map_err(|source| FormatError::Attribute { path: path.to_path_buf(), source })
}

/// One stop word per line; blank lines and `#` comments are skipped.
pub fn read_stoplist(path: &Path) -> Result<std::collections::BTreeSet<String>, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(attrdiv_core::attributes::normalize_phrase)
        .collect())
}

/// Writes to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), FormatError> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(bytes).and_then(|_| lock.flush()).map_err(io_err(Path::new("<stdout>")))
        }
    }
}
