//! Logged prediction records: data model, JSONL ingestion and validation.
//!
//! One line of a prediction log describes one (document, question) inference:
//! the answer distribution over a finite candidate set, the predicted and gold
//! answers, token sequences with their embeddings, the pooled anchor embedding
//! and the embedding of the predicted answer. Attention and text-region masks
//! are optional.
//!
//! Distributions whose mass lies in `[0.5, 1.5]` are renormalized on load;
//! anything outside that band is treated as a corrupt log and rejected.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index into a record's answer vocabulary.
pub type AnswerId = u32;

/// Probabilities are floored at this value before any logarithm is taken.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on the total mass of a normalized distribution.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Largest embedding dimension accepted from a log.
pub const MAX_EMBEDDING_DIM: usize = 4096;

const RENORMALIZE_BAND: (f64, f64) = (0.5, 1.5);

/// Sparse answer distribution `P(y | D, Q)` over a vocabulary of `vocab_size`
/// answers. Entries are `(answer_id, prob)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub entries: Vec<(AnswerId, f64)>,
    pub vocab_size: u32,
}

impl AnswerDistribution {
    pub fn new(entries: Vec<(AnswerId, f64)>, vocab_size: u32) -> Self {
        Self { entries, vocab_size }
    }

    /// Builds a distribution from dense probabilities indexed by answer id.
    pub fn from_dense(probs: &[f64]) -> Self {
        let entries = probs.iter().enumerate().map(|(id, &p)| (id as AnswerId, p)).collect();
        Self::new(entries, probs.len() as u32)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn probs(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|&(_, p)| p)
    }

    pub fn total_mass(&self) -> f64 {
        self.probs().sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= NORMALIZATION_TOL
    }

    pub fn prob_of(&self, id: AnswerId) -> Option<f64> {
        self.entries.iter().find(|&&(a, _)| a == id).map(|&(_, p)| p)
    }

    /// Highest-probability answer; ties go to the lowest answer id.
    pub fn argmax(&self) -> Option<AnswerId> {
        let mut best: Option<(AnswerId, f64)> = None;
        for &(id, p) in &self.entries {
            best = match best {
                None => Some((id, p)),
                Some((bid, bp)) if p > bp || (p == bp && id < bid) => Some((id, p)),
                keep => keep,
            };
        }
        best.map(|(id, _)| id)
    }
}

/// Binary raster (attention map or text-region mask), row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    cells: Vec<u8>,
}

impl Mask {
    /// Builds a mask from rows. Rows of unequal length are rejected.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self, Violation> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Violation::RaggedMask);
        }
        Ok(Self {
            width,
            height,
            cells: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        if self.width == 0 {
            return vec![Vec::new(); self.height];
        }
        self.cells.chunks(self.width).map(<[u8]>::to_vec).collect()
    }

    pub fn is_binary(&self) -> bool {
        self.cells.iter().all(|&c| c <= 1)
    }
}

/// One logged inference.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub record_id: String,
    pub distribution: AnswerDistribution,
    pub predicted_id: AnswerId,
    pub gold_id: Option<AnswerId>,
    pub predicted_tokens: Vec<String>,
    pub gold_tokens: Vec<String>,
    pub token_embeddings: BTreeMap<String, Vec<f64>>,
    pub anchor_embedding: Vec<f64>,
    pub answer_embedding: Vec<f64>,
    pub attention_mask: Option<Mask>,
    pub text_region_mask: Option<Mask>,
}

impl PredictionRecord {
    /// `Some(true)` when the prediction matches gold, `None` without gold.
    pub fn is_correct(&self) -> Option<bool> {
        self.gold_id.map(|g| g == self.predicted_id)
    }

    pub fn embedding_dim(&self) -> usize {
        self.anchor_embedding.len()
    }
}

/// First failed record invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("vocab_size > 0")]
    ZeroVocab,
    #[error("entries non-empty")]
    EmptyDistribution,
    #[error("prob finite")]
    NonFiniteProb { answer_id: AnswerId },
    #[error("prob ≥ 0")]
    NegativeProb { answer_id: AnswerId },
    #[error("unique answer_ids")]
    DuplicateAnswerId { answer_id: AnswerId },
    #[error("answer_id < vocab_size")]
    AnswerIdOutOfRange { answer_id: AnswerId },
    #[error("sum of probs = 1 (got {sum})")]
    NotNormalized { sum: f64 },
    #[error("predicted_id = argmax (expected {expected}, got {got})")]
    PredictedNotArgmax { expected: AnswerId, got: AnswerId },
    #[error("gold_id < vocab_size")]
    GoldOutOfRange { gold_id: AnswerId },
    #[error("embedding dimension > 0")]
    EmptyEmbedding,
    #[error("embedding dimension ≤ {MAX_EMBEDDING_DIM}")]
    EmbeddingTooLarge { dim: usize },
    #[error("anchor and answer embeddings share dimension ({anchor} vs {answer})")]
    EmbeddingDimMismatch { anchor: usize, answer: usize },
    #[error("finite embedding entries")]
    NonFiniteEmbedding,
    #[error("token embeddings share dimension (token {token:?})")]
    TokenEmbeddingDim { token: String },
    #[error("mask rows have equal length")]
    RaggedMask,
    #[error("masks have equal dimensions")]
    MaskDimMismatch,
    #[error("mask cells ∈ {{0,1}}")]
    NonBinaryMask,
}

/// Checks every record invariant, reporting the first that fails.
pub fn validate_record(record: &PredictionRecord) -> Result<(), Violation> {
    let dist = &record.distribution;
    if dist.vocab_size == 0 {
        return Err(Violation::ZeroVocab);
    }
    if dist.is_empty() {
        return Err(Violation::EmptyDistribution);
    }
    let mut seen = std::collections::BTreeSet::new();
    for &(id, p) in &dist.entries {
        if !p.is_finite() {
            return Err(Violation::NonFiniteProb { answer_id: id });
        }
        if p < 0.0 {
            return Err(Violation::NegativeProb { answer_id: id });
        }
        if !seen.insert(id) {
            return Err(Violation::DuplicateAnswerId { answer_id: id });
        }
        if id >= dist.vocab_size {
            return Err(Violation::AnswerIdOutOfRange { answer_id: id });
        }
    }
    if !dist.is_normalized() {
        return Err(Violation::NotNormalized { sum: dist.total_mass() });
    }
    let expected = dist.argmax().expect("non-empty");
    if record.predicted_id != expected {
        return Err(Violation::PredictedNotArgmax {
            expected,
            got: record.predicted_id,
        });
    }
    if let Some(gold) = record.gold_id {
        if gold >= dist.vocab_size {
            return Err(Violation::GoldOutOfRange { gold_id: gold });
        }
    }

    let (anchor, answer) = (&record.anchor_embedding, &record.answer_embedding);
    if anchor.is_empty() || answer.is_empty() {
        return Err(Violation::EmptyEmbedding);
    }
    if anchor.len() != answer.len() {
        return Err(Violation::EmbeddingDimMismatch {
            anchor: anchor.len(),
            answer: answer.len(),
        });
    }
    if anchor.len() > MAX_EMBEDDING_DIM {
        return Err(Violation::EmbeddingTooLarge { dim: anchor.len() });
    }
    if anchor.iter().chain(answer).any(|x| !x.is_finite()) {
        return Err(Violation::NonFiniteEmbedding);
    }

    let mut tok_dim = None;
    for (token, emb) in &record.token_embeddings {
        if emb.is_empty() || *tok_dim.get_or_insert(emb.len()) != emb.len() {
            return Err(Violation::TokenEmbeddingDim { token: token.clone() });
        }
        if emb.len() > MAX_EMBEDDING_DIM {
            return Err(Violation::EmbeddingTooLarge { dim: emb.len() });
        }
        if emb.iter().any(|x| !x.is_finite()) {
            return Err(Violation::NonFiniteEmbedding);
        }
    }

    for mask in [&record.attention_mask, &record.text_region_mask].into_iter().flatten() {
        if !mask.is_binary() {
            return Err(Violation::NonBinaryMask);
        }
    }
    if let (Some(a), Some(b)) = (&record.attention_mask, &record.text_region_mask) {
        if a.width() != b.width() || a.height() != b.height() {
            return Err(Violation::MaskDimMismatch);
        }
    }
    Ok(())
}

/// Divides every probability by the total mass.
pub fn normalize_distribution(dist: &AnswerDistribution) -> Result<AnswerDistribution, RecordError> {
    let sum = dist.total_mass();
    if sum <= 0.0 || !sum.is_finite() {
        return Err(RecordError::DegenerateDistribution);
    }
    Ok(AnswerDistribution {
        entries: dist.entries.iter().map(|&(id, p)| (id, p / sum)).collect(),
        vocab_size: dist.vocab_size,
    })
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("degenerate distribution")]
    DegenerateDistribution,
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: probability mass {sum} outside the accepted band [0.5, 1.5]")]
    MassOutOfBand { line: usize, sum: f64 },
    #[error("line {line}: invalid record: {violation}")]
    Invalid { line: usize, violation: Violation },
    #[error("line {line}: embedding sidecar: {message}")]
    Sidecar { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RecordError {
    /// Whether the failure is a problem with the input data (as opposed to I/O).
    pub fn is_validation(&self) -> bool {
        !matches!(self, RecordError::Io { .. })
    }
}

/// Reference into an embedding sidecar file. Row `index` holds the anchor
/// embedding followed by the answer embedding (`dim = 2 · d_in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRef {
    pub file: String,
    pub index: u32,
}

/// Wire form of one JSONL line.
#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    id: String,
    vocab_size: u32,
    dist: Vec<(AnswerId, f64)>,
    #[serde(default)]
    pred_id: Option<AnswerId>,
    #[serde(default)]
    gold_id: Option<AnswerId>,
    #[serde(default)]
    pred_tokens: Vec<String>,
    #[serde(default)]
    gold_tokens: Vec<String>,
    #[serde(default)]
    tok_emb: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchor_emb: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer_emb: Option<Vec<f64>>,
    #[serde(default)]
    attn_mask: Option<Vec<Vec<u8>>>,
    #[serde(default)]
    text_mask: Option<Vec<Vec<u8>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emb_ref: Option<EmbeddingRef>,
}

/// Reads a JSONL prediction log. Sidecar references resolve relative to the
/// log's directory.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>, RecordError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_records(BufReader::new(file), &base)
}

/// Parses JSONL from any reader. Blank lines are skipped.
pub fn parse_records(reader: impl BufRead, base_dir: &Path) -> Result<Vec<PredictionRecord>, RecordError> {
    let mut sidecars: HashMap<PathBuf, EmbeddingSidecar> = HashMap::new();
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| RecordError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: RecordLine = serde_json::from_str(&line).map_err(|e| {
            let message = e.to_string();
            match missing_field_name(&message) {
                Some(field) => RecordError::MissingField { line: line_no, field },
                None => RecordError::Parse { line: line_no, message },
            }
        })?;
        records.push(record_from_wire(wire, line_no, base_dir, &mut sidecars)?);
    }
    Ok(records)
}

fn missing_field_name(message: &str) -> Option<&'static str> {
    ["id", "vocab_size", "dist"]
        .into_iter()
        .find(|f| message.starts_with(&format!("missing field `{f}`")))
}

fn record_from_wire(
    wire: RecordLine,
    line: usize,
    base_dir: &Path,
    sidecars: &mut HashMap<PathBuf, EmbeddingSidecar>,
) -> Result<PredictionRecord, RecordError> {
    let invalid = |violation| RecordError::Invalid { line, violation };

    let raw = AnswerDistribution::new(wire.dist, wire.vocab_size);
    for &(id, p) in &raw.entries {
        if !p.is_finite() {
            return Err(invalid(Violation::NonFiniteProb { answer_id: id }));
        }
        if p < 0.0 {
            return Err(invalid(Violation::NegativeProb { answer_id: id }));
        }
    }
    if raw.is_empty() {
        return Err(invalid(Violation::EmptyDistribution));
    }
    let sum = raw.total_mass();
    if !(RENORMALIZE_BAND.0..=RENORMALIZE_BAND.1).contains(&sum) {
        return Err(RecordError::MassOutOfBand { line, sum });
    }
    let distribution = if raw.is_normalized() {
        raw
    } else {
        normalize_distribution(&raw).map_err(|_| RecordError::MassOutOfBand { line, sum })?
    };

    let (anchor_embedding, answer_embedding) = match (wire.anchor_emb, wire.answer_emb, wire.emb_ref) {
        (Some(a), Some(b), _) => (a, b),
        (None, None, Some(r)) => {
            let path = base_dir.join(&r.file);
            if !sidecars.contains_key(&path) {
                let sc = EmbeddingSidecar::read(&path).map_err(|e| RecordError::Sidecar {
                    line,
                    message: e.to_string(),
                })?;
                sidecars.insert(path.clone(), sc);
            }
            sidecars[&path]
                .split_row(r.index as usize)
                .ok_or_else(|| RecordError::Sidecar {
                    line,
                    message: format!("row {} unavailable or odd row width", r.index),
                })?
        }
        (None, _, _) => {
            return Err(RecordError::MissingField {
                line,
                field: "anchor_emb",
            })
        }
        (Some(_), None, _) => {
            return Err(RecordError::MissingField {
                line,
                field: "answer_emb",
            })
        }
    };

    let attention_mask = wire
        .attn_mask
        .as_deref()
        .map(Mask::from_rows)
        .transpose()
        .map_err(invalid)?;
    let text_region_mask = wire
        .text_mask
        .as_deref()
        .map(Mask::from_rows)
        .transpose()
        .map_err(invalid)?;

    let argmax = distribution.argmax().expect("non-empty");
    let record = PredictionRecord {
        record_id: wire.id,
        predicted_id: wire.pred_id.unwrap_or(argmax),
        distribution,
        gold_id: wire.gold_id,
        predicted_tokens: wire.pred_tokens,
        gold_tokens: wire.gold_tokens,
        token_embeddings: wire.tok_emb,
        anchor_embedding,
        answer_embedding,
        attention_mask,
        text_region_mask,
    };
    validate_record(&record).map_err(invalid)?;
    Ok(record)
}

/// Serializes one record as a JSONL line (without the trailing newline).
/// Embeddings are always written inline.
pub fn record_to_line(record: &PredictionRecord) -> String {
    let wire = RecordLine {
        id: record.record_id.clone(),
        vocab_size: record.distribution.vocab_size,
        dist: record.distribution.entries.clone(),
        pred_id: Some(record.predicted_id),
        gold_id: record.gold_id,
        pred_tokens: record.predicted_tokens.clone(),
        gold_tokens: record.gold_tokens.clone(),
        tok_emb: record.token_embeddings.clone(),
        anchor_emb: Some(record.anchor_embedding.clone()),
        answer_emb: Some(record.answer_embedding.clone()),
        attn_mask: record.attention_mask.as_ref().map(Mask::rows),
        text_mask: record.text_region_mask.as_ref().map(Mask::rows),
        emb_ref: None,
    };
    serde_json::to_string(&wire).expect("record serialization is infallible")
}

pub fn write_records(mut out: impl Write, records: &[PredictionRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", record_to_line(r))?;
    }
    Ok(())
}

const SIDECAR_MAGIC: &[u8; 4] = b"HVQE";
const SIDECAR_VERSION: u32 = 1;

/// Little-endian f32 embedding matrix with a 16-byte header:
/// magic `HVQE`, version, row count, row width (all u32).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSidecar {
    pub count: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl EmbeddingSidecar {
    pub fn from_rows(rows: &[Vec<f32>]) -> Option<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return None;
        }
        Some(Self {
            count: rows.len(),
            dim,
            data: rows.concat(),
        })
    }

    pub fn row(&self, index: usize) -> Option<&[f32]> {
        (index < self.count).then(|| &self.data[index * self.dim..(index + 1) * self.dim])
    }

    fn split_row(&self, index: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        let row = self.row(index)?;
        if row.len() % 2 != 0 {
            return None;
        }
        let (a, b) = row.split_at(row.len() / 2);
        Some((
            a.iter().map(|&x| f64::from(x)).collect(),
            b.iter().map(|&x| f64::from(x)).collect(),
        ))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SidecarError> {
        if bytes.len() < 16 {
            return Err(SidecarError::Truncated);
        }
        if &bytes[0..4] != SIDECAR_MAGIC {
            return Err(SidecarError::BadMagic);
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != SIDECAR_VERSION {
            return Err(SidecarError::UnsupportedVersion(version));
        }
        let (count, dim) = (word(8) as usize, word(12) as usize);
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or(SidecarError::Truncated)?;
        let body = &bytes[16..];
        if body.len() != expected {
            return Err(SidecarError::Truncated);
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { count, dim, data })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(SIDECAR_MAGIC);
        out.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.count as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self, SidecarError> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| SidecarError::Io(e.to_string()))?;
        Self::decode(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SidecarError {
    #[error("file shorter than its header declares")]
    Truncated,
    #[error("bad magic (expected HVQE)")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("{0}")]
    Io(String),
}

impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{} mask", self.width, self.height)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Minimal valid record with a dense distribution.
    pub fn record(id: &str, probs: &[f64], gold: Option<AnswerId>) -> PredictionRecord {
        let distribution = AnswerDistribution::from_dense(probs);
        let predicted_id = distribution.argmax().unwrap();
        PredictionRecord {
            record_id: id.to_string(),
            distribution,
            predicted_id,
            gold_id: gold,
            predicted_tokens: vec![],
            gold_tokens: vec![],
            token_embeddings: BTreeMap::new(),
            anchor_embedding: vec![1.0, 0.0],
            answer_embedding: vec![0.0, 1.0],
            attention_mask: None,
            text_region_mask: None,
        }
    }
}
