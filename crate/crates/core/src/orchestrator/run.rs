use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Pipeline, Stage, StepError};
use crate::datasetio::{load_corpus, DatasetError, Format};
use crate::digest::sha256_hex;
use crate::llm::{ChatBackend, ChatParams, LlmError};
use crate::model::{RunMode, RunRecord, StudentResponse};
use crate::promptkit::{self, load_template, PromptError, PromptTemplate, TemplateKind};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "autofeedback-run-v1";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Everything that determines a run. Unset template/context paths mean the
/// bundled defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: RunMode,
    pub dataset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent1_template: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent2_template: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision_template: Option<PathBuf>,
    pub params: ChatParams,
    pub concurrency: usize,
    pub seed: u64,
    pub max_validation_rounds: u32,
    pub split_role: bool,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn new(mode: RunMode, dataset: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            mode,
            dataset: dataset.into(),
            context: None,
            agent1_template: None,
            agent2_template: None,
            revision_template: None,
            params: ChatParams::default(),
            concurrency: 4,
            seed: 0,
            max_validation_rounds: 1,
            split_role: false,
            output_dir: output_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.concurrency == 0 {
            return Err(RunError::Config("concurrency must be at least 1".into()));
        }
        if self.max_validation_rounds == 0 {
            return Err(RunError::Config("max_validation_rounds must be at least 1".into()));
        }
        for path in [&self.context, &self.agent1_template, &self.agent2_template, &self.revision_template]
            .into_iter()
            .flatten()
            .chain([&self.dataset])
        {
            if !path.is_file() {
                return Err(RunError::Config(format!("{} does not exist", path.display())));
            }
        }
        Ok(())
    }

    /// Loads templates and context, checking template kinds.
    pub fn load_pipeline(&self) -> Result<Pipeline, RunError> {
        let template = |path: &Option<PathBuf>, fallback: fn() -> PromptTemplate, kind: TemplateKind| {
            let t = match path {
                Some(p) => load_template(p)?,
                None => fallback(),
            };
            if t.name != kind {
                return Err(PromptError::WrongTemplate { expected: kind, found: t.name });
            }
            Ok::<_, PromptError>(t)
        };
        let context = match &self.context {
            Some(p) => promptkit::load_context(p)?,
            None => promptkit::bundled_context(),
        };
        Ok(Pipeline {
            mode: self.mode,
            context,
            agent1: template(
                &self.agent1_template,
                || PromptTemplate::bundled(TemplateKind::Agent1),
                TemplateKind::Agent1,
            )?,
            agent2: template(
                &self.agent2_template,
                || PromptTemplate::bundled(TemplateKind::Agent2),
                TemplateKind::Agent2,
            )?,
            revision: template(&self.revision_template, PromptTemplate::bundled_revision, TemplateKind::Agent1)?,
            params: self.params.clone(),
            max_validation_rounds: self.max_validation_rounds,
            split_role: self.split_role,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub response_id: String,
    pub stage: Stage,
    pub error: String,
    pub retryable_exhausted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub inputs: usize,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub config: RunConfig,
    pub template_digests: BTreeMap<String, String>,
    pub context_digest: String,
    pub dataset_digest: String,
    pub backend_fingerprint: String,
    pub started_at: String,
    pub finished_at: String,
    pub counts: Counts,
    pub records_file: String,
    pub records_digest: String,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
    pub failed: usize,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub records: Vec<RunRecord>,
}

/// Processes every response on a bounded worker pool. Records come back
/// sorted by response id whatever the completion order.
pub fn execute(
    pipeline: &Pipeline,
    responses: &[StudentResponse],
    backend: &dyn ChatBackend,
    concurrency: usize,
    progress: Option<&(dyn Fn(Progress) + Sync)>,
) -> (Vec<RunRecord>, Vec<Failure>) {
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<RunRecord, Failure>>> = Mutex::new(Vec::with_capacity(responses.len()));
    let workers = concurrency.clamp(1, responses.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(response) = responses.get(i) else { break };
                let result = pipeline.process(backend, response).map_err(|(stage, e)| Failure {
                    response_id: response.id.clone(),
                    stage,
                    retryable_exhausted: matches!(e, StepError::Llm(LlmError::RetryExhausted { .. })),
                    error: e.to_string(),
                });
                if result.is_err() {
                    failed.fetch_add(1, Ordering::SeqCst);
                }
                results.lock().unwrap().push(result);
                let d = done.fetch_add(1, Ordering::SeqCst) + 1;
                if let Some(report) = progress {
                    report(Progress { done: d, total: responses.len(), failed: failed.load(Ordering::SeqCst) });
                }
            });
        }
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for result in results.into_inner().unwrap() {
        match result {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    records.sort_by(|a, b| a.response_id.cmp(&b.response_id));
    failures.sort_by(|a, b| a.response_id.cmp(&b.response_id));
    (records, failures)
}

/// Serializes records one per line.
pub fn records_jsonl(records: &[RunRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let io = |source| RunError::Io { path: path.to_path_buf(), source };
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Loads inputs, processes them, and writes `records.jsonl` and
/// `manifest.json` under the output directory. Configuration, template and
/// dataset problems abort before any backend call.
pub fn run(
    cfg: &RunConfig,
    backend: &dyn ChatBackend,
    progress: Option<&(dyn Fn(Progress) + Sync)>,
) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let pipeline = cfg.load_pipeline()?;
    let corpus = load_corpus(&cfg.dataset, Format::from_path(&cfg.dataset)?)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|source| RunError::Io { path: cfg.output_dir.clone(), source })?;

    let started_at = now();
    let (records, failures) = execute(&pipeline, corpus.responses(), backend, cfg.concurrency, progress);
    let finished_at = now();

    let jsonl = records_jsonl(&records);
    write_atomic(&cfg.output_dir.join(RECORDS_FILE), jsonl.as_bytes())?;

    let mut template_digests = BTreeMap::new();
    template_digests.insert("agent1".to_string(), pipeline.agent1.digest().to_string());
    if cfg.mode == RunMode::Multi {
        template_digests.insert("agent2".to_string(), pipeline.agent2.digest().to_string());
        if cfg.max_validation_rounds > 1 {
            template_digests.insert("revision".to_string(), pipeline.revision.digest().to_string());
        }
    }
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        template_digests,
        context_digest: sha256_hex(serde_json::to_vec(&pipeline.context).expect("context serializes")),
        dataset_digest: corpus.digest().to_string(),
        backend_fingerprint: backend.fingerprint(),
        started_at,
        finished_at,
        counts: Counts { inputs: corpus.len(), succeeded: records.len(), failed: failures.len() },
        records_file: RECORDS_FILE.to_string(),
        records_digest: sha256_hex(&jsonl),
        failures,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(&cfg.output_dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(RunOutcome { manifest, records })
}

/// Reads a records file, validating every record.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1)))
        .collect()
}
