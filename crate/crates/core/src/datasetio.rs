//! Student-response corpora: loading, saving, and seeded balanced sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::digest::sha256_parts;
use crate::model::{ScoreLevel, StudentResponse};

/// Identifies the sampling procedure in manifests.
pub const SAMPLER_ALGORITHM: &str = "chacha20-stream-per-class/partial-fisher-yates/v1";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: u64, id: String },
    #[error("line {line}: unknown score label `{label}` (expected Beginning or Proficient)")]
    UnknownLabel { line: u64, label: String },
    #[error("class {class} has {have} responses, {need} requested (short by {})", need - have)]
    Insufficient { class: ScoreLevel, have: usize, need: usize },
    #[error("pilot ids not in corpus: {}", .0.join(", "))]
    NotInCorpus(Vec<String>),
    #[error("unknown corpus format for {0} (use .csv or .jsonl)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self, DatasetError> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") => Ok(Format::Csv),
            Some("jsonl") | Some("ndjson") => Ok(Format::Jsonl),
            _ => Err(DatasetError::UnknownFormat(path.display().to_string())),
        }
    }
}

/// An ordered set of responses with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    responses: Vec<StudentResponse>,
    digest: String,
}

impl Corpus {
    pub fn new(responses: Vec<StudentResponse>) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        for (i, r) in responses.iter().enumerate() {
            if !seen.insert(r.id.as_str()) {
                return Err(DatasetError::DuplicateId { line: i as u64 + 1, id: r.id.clone() });
            }
        }
        Ok(Self::from_unique(responses))
    }

    fn from_unique(responses: Vec<StudentResponse>) -> Self {
        let digest = digest_of(&responses);
        Self { responses, digest }
    }

    pub fn responses(&self) -> &[StudentResponse] {
        &self.responses
    }

    pub fn into_responses(self) -> Vec<StudentResponse> {
        self.responses
    }

    /// Content hash over ids, texts and labels in order.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.responses.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn count(&self, level: ScoreLevel) -> usize {
        self.responses.iter().filter(|r| r.score_level == level).count()
    }
}

fn digest_of(responses: &[StudentResponse]) -> String {
    let mut parts: Vec<&[u8]> = vec![b"corpus-v1"];
    for r in responses {
        parts.push(r.id.as_bytes());
        parts.push(r.text.as_bytes());
        parts.push(r.score_level.as_str().as_bytes());
    }
    sha256_parts(parts)
}

#[derive(Deserialize)]
struct Row {
    id: serde_json::Value,
    text: String,
    score_level: String,
}

fn id_string(v: &serde_json::Value, line: u64) -> Result<String, DatasetError> {
    match v {
        serde_json::Value::String(s) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        _ => Err(DatasetError::Malformed { line, message: "id must be a non-empty string or number".into() }),
    }
}

struct Builder {
    responses: Vec<StudentResponse>,
    seen: BTreeSet<String>,
}

impl Builder {
    fn push(&mut self, line: u64, id: String, text: String, label: &str) -> Result<(), DatasetError> {
        if id.is_empty() {
            return Err(DatasetError::Malformed { line, message: "empty id".into() });
        }
        let score_level = ScoreLevel::parse_label(label)
            .ok_or_else(|| DatasetError::UnknownLabel { line, label: label.to_string() })?;
        if !self.seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId { line, id });
        }
        self.responses.push(StudentResponse { id, text, score_level });
        Ok(())
    }
}

/// Parses a corpus from any reader. CSV needs a header row with `id`,
/// `text` and `score_level`; JSONL needs one object per line.
pub fn read_corpus(reader: impl Read, format: Format) -> Result<Corpus, DatasetError> {
    let mut b = Builder { responses: Vec::new(), seen: BTreeSet::new() };
    match format {
        Format::Csv => {
            let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
            let headers =
                rdr.headers().map_err(|e| DatasetError::Malformed { line: 1, message: e.to_string() })?.clone();
            let col = |name: &str| {
                headers
                    .iter()
                    .position(|h| h.trim().eq_ignore_ascii_case(name))
                    .ok_or_else(|| DatasetError::Malformed { line: 1, message: format!("missing column `{name}`") })
            };
            let (id_col, text_col, level_col) = (col("id")?, col("text")?, col("score_level")?);
            for rec in rdr.records() {
                let rec = rec.map_err(|e| DatasetError::Malformed {
                    line: e.position().map_or(0, |p| p.line()),
                    message: e.to_string(),
                })?;
                let line = rec.position().map_or(0, |p| p.line());
                let field = |i: usize| rec.get(i).unwrap_or("");
                b.push(line, field(id_col).trim().to_string(), field(text_col).to_string(), field(level_col))?;
            }
        }
        Format::Jsonl => {
            for (i, line) in BufReader::new(reader).lines().enumerate() {
                let n = i as u64 + 1;
                let line = line.map_err(|e| DatasetError::Malformed { line: n, message: e.to_string() })?;
                if line.trim().is_empty() {
                    continue;
                }
                let row: Row = serde_json::from_str(&line)
                    .map_err(|e| DatasetError::Malformed { line: n, message: e.to_string() })?;
                b.push(n, id_string(&row.id, n)?, row.text, &row.score_level)?;
            }
        }
    }
    Ok(Corpus::from_unique(b.responses))
}

pub fn load_corpus(path: &Path, format: Format) -> Result<Corpus, DatasetError> {
    let file = fs::File::open(path).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    read_corpus(file, format)
}

pub fn write_corpus(corpus: &Corpus, mut out: impl Write, format: Format) -> std::io::Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["id", "text", "score_level"])?;
            for r in corpus.responses() {
                w.write_record([r.id.as_str(), r.text.as_str(), r.score_level.as_str()])?;
            }
            w.flush()
        }
        Format::Jsonl => {
            for r in corpus.responses() {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
            out.flush()
        }
    }
}

pub fn save_corpus(corpus: &Corpus, path: &Path, format: Format) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io { path: path.display().to_string(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let file = fs::File::create(path).map_err(io)?;
    write_corpus(corpus, std::io::BufWriter::new(file), format).map_err(io)
}

/// Uniform draw from `0..n` without modulo bias.
fn bounded(rng: &mut ChaCha20Rng, n: u64) -> u64 {
    let zone = (u64::MAX / n) * n;
    loop {
        let v = rng.next_u64();
        if v < zone {
            return v % n;
        }
    }
}

/// Moves a uniform random `k`-subset of `items` to the front, drawing from
/// ChaCha20 stream `stream` of `seed`.
pub(crate) fn partial_shuffle<T>(items: &mut [T], k: usize, seed: u64, stream: u64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    for i in 0..k.min(items.len()) {
        let j = i + bounded(&mut rng, (items.len() - i) as u64) as usize;
        items.swap(i, j);
    }
}

fn class_stream(level: ScoreLevel) -> u64 {
    match level {
        ScoreLevel::Beginning => 0,
        ScoreLevel::Proficient => 1,
    }
}

/// Draws exactly `n_per_class` responses from each level, returned sorted
/// by id. Depends only on the corpus content, `n_per_class` and `seed`.
pub fn balanced_sample(corpus: &Corpus, n_per_class: usize, seed: u64) -> Result<Corpus, DatasetError> {
    let mut picked = Vec::with_capacity(2 * n_per_class);
    for level in [ScoreLevel::Beginning, ScoreLevel::Proficient] {
        let mut members: Vec<&StudentResponse> = corpus.responses().iter().filter(|r| r.score_level == level).collect();
        if members.len() < n_per_class {
            return Err(DatasetError::Insufficient { class: level, have: members.len(), need: n_per_class });
        }
        members.sort_by(|a, b| a.id.cmp(&b.id));
        partial_shuffle(&mut members, n_per_class, seed, class_stream(level));
        picked.extend(members.into_iter().take(n_per_class).cloned());
    }
    picked.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Corpus::from_unique(picked))
}

/// The corpus without the pilot's ids, order preserved.
pub fn split_disjoint(corpus: &Corpus, pilot: &Corpus) -> Result<Corpus, DatasetError> {
    let ids = corpus.ids();
    let missing: Vec<String> =
        pilot.responses().iter().filter(|r| !ids.contains(r.id.as_str())).map(|r| r.id.clone()).collect();
    if !missing.is_empty() {
        return Err(DatasetError::NotInCorpus(missing));
    }
    let pilot_ids = pilot.ids();
    let rest = corpus.responses().iter().filter(|r| !pilot_ids.contains(r.id.as_str())).cloned().collect();
    Ok(Corpus::from_unique(rest))
}

/// Provenance of one drawn sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub algorithm: String,
    pub seed: u64,
    pub n_per_class: usize,
    pub source_digest: String,
    /// Digest of the pool actually sampled (source minus excluded ids).
    pub pool_digest: String,
    pub sample_digest: String,
    pub counts: BTreeMap<ScoreLevel, usize>,
}

impl SampleManifest {
    pub fn new(source: &Corpus, pool: &Corpus, sample: &Corpus, n_per_class: usize, seed: u64) -> Self {
        let counts =
            [ScoreLevel::Beginning, ScoreLevel::Proficient].into_iter().map(|l| (l, sample.count(l))).collect();
        Self {
            algorithm: SAMPLER_ALGORITHM.to_string(),
            seed,
            n_per_class,
            source_digest: source.digest().to_string(),
            pool_digest: pool.digest().to_string(),
            sample_digest: sample.digest().to_string(),
            counts,
        }
    }
}

/// A pilot set and a disjoint test set drawn from one corpus.
#[derive(Debug, Clone)]
pub struct SampleSplit {
    pub pilot: Option<(Corpus, SampleManifest)>,
    pub test: Corpus,
    pub test_manifest: SampleManifest,
}

/// Draws `pilot_per_class` per level first (skipped when 0), then
/// `n_per_class` per level from what remains, both with `seed`.
pub fn pilot_and_test(
    corpus: &Corpus,
    pilot_per_class: usize,
    n_per_class: usize,
    seed: u64,
) -> Result<SampleSplit, DatasetError> {
    let (pool, pilot) = if pilot_per_class > 0 {
        let pilot = balanced_sample(corpus, pilot_per_class, seed)?;
        let manifest = SampleManifest::new(corpus, corpus, &pilot, pilot_per_class, seed);
        (split_disjoint(corpus, &pilot)?, Some((pilot, manifest)))
    } else {
        (corpus.clone(), None)
    };
    let test = balanced_sample(&pool, n_per_class, seed)?;
    let test_manifest = SampleManifest::new(corpus, &pool, &test, n_per_class, seed);
    Ok(SampleSplit { pilot, test, test_manifest })
}
