//! Dual-rater coding of final feedback for over-praise and over-inference.
//!
//! Label files are JSON lines: a header line, then one label per line.
//! They are only ever appended to; when an id appears more than once the
//! last line wins.

mod agreement;
mod session;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasetio::{partial_shuffle, SAMPLER_ALGORITHM};
use crate::digest::sha256_parts;
use crate::model::{RunMode, RunRecord};
use crate::statlab::IssueLabel;

pub use agreement::{
    agreement, merge_remainder, resolve, Adjudication, Agreement, ConsolidatedLabel, DimensionAgreement, Disagreement,
    Provenance,
};
pub use session::{render_card, AnnotationSession, SessionOutcome};

pub const LABELS_FORMAT: &str = "autofeedback-labels-v1";
pub const DEFAULT_OVERLAP_PERCENT: u32 = 30;

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("unknown record id `{0}`")]
    UnknownRecord(String),
    #[error("label file {0} is already complete for this rater; pass --amend to revise it")]
    AlreadyComplete(PathBuf),
    #[error("label file {path} does not match this session: {reason}")]
    HeaderMismatch { path: PathBuf, reason: String },
    #[error("label sets cover different records; only in first: {only_a:?}; only in second: {only_b:?}")]
    CoverageMismatch { only_a: Vec<String>, only_b: Vec<String> },
    #[error("decision given for `{0}`, which is not a disagreement")]
    NotDisagreement(String),
    #[error("no decision for disagreement `{0}`")]
    MissingDecision(String),
    #[error("record `{0}` labeled twice")]
    Duplicate(String),
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AnnotationError {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io { path: path.to_path_buf(), source }
    }
}

/// One rater's judgement of one record's final feedback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationLabel {
    /// The record key, `mode:response_id`.
    pub record_id: String,
    pub rater_id: String,
    pub over_praise: bool,
    pub over_inference: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub timestamp: String,
}

impl IssueLabel for AnnotationLabel {
    fn over_praise(&self) -> bool {
        self.over_praise
    }
    fn over_inference(&self) -> bool {
        self.over_inference
    }
}

/// How the presented records were chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Selection {
    All,
    Explicit,
    SeededRandom { algorithm: String, seed: u64, percent: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelHeader {
    pub format: String,
    pub rater_id: String,
    pub blind: bool,
    pub run_files: Vec<String>,
    pub records_digest: String,
    pub selection: Selection,
    pub subset: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelFile {
    pub header: LabelHeader,
    /// In file order, superseded lines included.
    pub lines: Vec<AnnotationLabel>,
}

impl LabelFile {
    /// Current label per record, last line winning, sorted by record id.
    pub fn labels(&self) -> Vec<AnnotationLabel> {
        let mut latest: BTreeMap<&str, &AnnotationLabel> = BTreeMap::new();
        for l in &self.lines {
            latest.insert(&l.record_id, l);
        }
        latest.into_values().cloned().collect()
    }

    pub fn is_complete(&self) -> bool {
        let done: BTreeSet<&str> = self.lines.iter().map(|l| l.record_id.as_str()).collect();
        self.header.subset.iter().all(|id| done.contains(id.as_str()))
    }
}

fn malformed(path: &Path, line: usize, e: impl ToString) -> AnnotationError {
    AnnotationError::Malformed { path: path.to_path_buf(), line, message: e.to_string() }
}

pub fn read_label_file(path: &Path) -> Result<LabelFile, AnnotationError> {
    let text = fs::read_to_string(path).map_err(AnnotationError::io(path))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| malformed(path, 1, "missing header line"))?;
    let header: LabelHeader = serde_json::from_str(first).map_err(|e| malformed(path, 1, e))?;
    if header.format != LABELS_FORMAT {
        return Err(malformed(path, 1, format!("unsupported format `{}`", header.format)));
    }
    let labels = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| malformed(path, i + 1, e)))
        .collect::<Result<Vec<AnnotationLabel>, _>>()?;
    if let Some(l) = labels.iter().find(|l| l.rater_id != header.rater_id) {
        return Err(malformed(path, 0, format!("label for `{}` has rater `{}`", l.record_id, l.rater_id)));
    }
    Ok(LabelFile { header, lines: labels })
}

/// Writes a complete label file (header plus current labels).
pub fn write_label_file(path: &Path, file: &LabelFile) -> Result<(), AnnotationError> {
    let mut out = serde_json::to_string(&file.header).expect("header serializes");
    out.push('\n');
    for l in &file.lines {
        out.push_str(&serde_json::to_string(l).expect("label serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(AnnotationError::io(path))
}

/// Digest over the record keys and final feedback a rater is shown.
pub fn records_digest(records: &[RunRecord]) -> String {
    let mut parts: Vec<&[u8]> = vec![b"annotation-records-v1"];
    for r in records {
        parts.push(r.response_id.as_bytes());
        parts.push(r.mode.as_str().as_bytes());
        parts.push(r.response_text.as_bytes());
        parts.push(r.final_feedback.raw_text.as_bytes());
    }
    sha256_parts(parts)
}

/// Seeded `percent` share of the records of each mode, by record key.
/// Each mode draws from its own stream with rounding half up, so a
/// 240-record run at 30 gives 72 keys.
pub fn overlap_subset(records: &[RunRecord], percent: u32, seed: u64) -> Vec<String> {
    let mut keys = Vec::new();
    for (stream, mode) in [RunMode::Single, RunMode::Multi].into_iter().enumerate() {
        let mut members: Vec<String> = records.iter().filter(|r| r.mode == mode).map(|r| r.record_key()).collect();
        members.sort();
        let k = (members.len() * percent.min(100) as usize + 50) / 100;
        partial_shuffle(&mut members, k, seed, stream as u64);
        members.truncate(k);
        keys.extend(members);
    }
    keys.sort();
    keys
}

/// The selection recorded for a seeded overlap subset.
pub fn seeded_selection(percent: u32, seed: u64) -> Selection {
    Selection::SeededRandom { algorithm: SAMPLER_ALGORITHM.to_string(), seed, percent }
}

/// Consolidated labels are written one per line, no header.
pub fn write_consolidated(path: &Path, labels: &[ConsolidatedLabel]) -> Result<(), AnnotationError> {
    let mut out = String::new();
    for l in labels {
        out.push_str(&serde_json::to_string(l).expect("label serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(AnnotationError::io(path))
}

pub fn read_consolidated(path: &Path) -> Result<Vec<ConsolidatedLabel>, AnnotationError> {
    read_jsonl(path)
}

pub fn read_adjudications(path: &Path) -> Result<Vec<Adjudication>, AnnotationError> {
    read_jsonl(path)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, AnnotationError> {
    let text = fs::read_to_string(path).map_err(AnnotationError::io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| malformed(path, i + 1, e)))
        .collect()
}

fn append_line(path: &Path, line: &str) -> Result<(), AnnotationError> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path).map_err(AnnotationError::io(path))?;
    f.write_all(line.as_bytes()).and_then(|_| f.write_all(b"\n")).map_err(AnnotationError::io(path))?;
    f.sync_data().map_err(AnnotationError::io(path))
}
