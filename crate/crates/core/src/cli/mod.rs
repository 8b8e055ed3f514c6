//! The `autofeedback` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime
//! failure (partial artifacts may exist).

pub mod config;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Component, Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::annotator::{
    self, agreement, merge_remainder, read_adjudications, read_consolidated, read_label_file, resolve, Adjudication,
    AnnotationError, AnnotationSession, Selection,
};
use crate::datasetio::{load_corpus, pilot_and_test, save_corpus, Format, SampleManifest};
use crate::digest::sha256_hex;
use crate::llm::{CacheMode, CachedBackend, ChatBackend, HttpBackend, MockBackend, ResponseCache};
use crate::model::{RunMode, RunRecord};
use crate::orchestrator::{self, read_records, RunConfig, RunError, RunManifest, MANIFEST_FILE, RECORDS_FILE};
use crate::report::{self, build_report, render_case, render_table, ReferenceTable, RunRef, TableFormat};
use crate::statlab::{compare_runs_or_zero, tally, Comparison};
pub use config::AppConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

trait Classify<T> {
    fn usage(self) -> Result<T, CliError>;
    fn runtime(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Usage(e.into()))
    }
    fn runtime(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(e.into()))
    }
}

#[derive(Parser, Debug)]
#[command(name = "autofeedback", version, about = "Generate, validate and evaluate formative feedback")]
struct Cli {
    /// TOML settings file.
    #[arg(long, global = true, env = config::CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Override any setting, e.g. `--set backend.model=gpt-4o`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Root directory for everything except run and annotate outputs.
    #[arg(long, global = true)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a balanced pilot set and a disjoint test set from a corpus.
    Sample(SampleArgs),
    /// Generate feedback for every response in a dataset.
    Run(RunArgs),
    /// Label final feedback in the terminal.
    Annotate(AnnotateArgs),
    /// Percent agreement between two raters' label files.
    Agree(AgreeArgs),
    /// Merge two raters' labels with discussion decisions.
    Resolve(ResolveArgs),
    /// Issue rates and chi-square tests for a single and a multi-agent run.
    Stats(StatsArgs),
    /// Write the comparison table and per-case exhibits.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Corpus file (.csv or .jsonl).
    #[arg(long)]
    corpus: PathBuf,
    /// Responses per score level in the test set.
    #[arg(long = "n")]
    n_per_class: Option<usize>,
    /// Responses per score level in the pilot set.
    #[arg(long)]
    pilot: Option<usize>,
    /// Sampling seed [default: sampling.seed].
    #[arg(long)]
    seed: Option<u64>,
    /// Directory under the output root.
    #[arg(long, default_value = "sample")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// `single` (Agent 1 only) or `multi` (Agent 1 reviewed by Agent 2).
    #[arg(long)]
    mode: RunMode,
    /// Responses to process.
    #[arg(long)]
    dataset: PathBuf,
    /// Run directory; defaults to `<output root>/runs/<mode>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Serve every call from the cache; a miss fails the response.
    #[arg(long, conflicts_with = "record")]
    replay: bool,
    /// Call the backend for every request and store the answers.
    #[arg(long)]
    record: bool,
    /// Use the built-in synthetic backend instead of HTTP.
    #[arg(long, conflicts_with = "replay")]
    mock: bool,
    /// Response cache directory [default: paths.cache].
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Responses processed in parallel.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Agent 2 review rounds per response.
    #[arg(long)]
    max_rounds: Option<u32>,
    /// Chat model name.
    #[arg(long)]
    model: Option<String>,
    /// Directory with agent1.txt, agent2.txt and agent1_revision.txt, each
    /// beside a .toml manifest.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Assessment context TOML.
    #[arg(long)]
    context: Option<PathBuf>,
    /// Send the Role section as a system message.
    #[arg(long)]
    split_role: bool,
    /// No progress lines on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct AnnotateArgs {
    /// Run directories or records files.
    #[arg(long = "run", required = true)]
    runs: Vec<PathBuf>,
    /// Rater id stored on every label.
    #[arg(long)]
    rater: String,
    /// Label file; created if missing, resumed if present.
    #[arg(long)]
    labels: PathBuf,
    /// Present a seeded share of each mode's records.
    #[arg(long, conflicts_with_all = ["ids", "remainder_of"])]
    overlap: bool,
    /// Overlap share in percent [default: sampling.overlap_percent].
    #[arg(long)]
    percent: Option<u32>,
    /// Overlap seed [default: sampling.seed].
    #[arg(long)]
    seed: Option<u64>,
    /// File with one record id (`mode:id`) per line.
    #[arg(long, conflicts_with = "remainder_of")]
    ids: Option<PathBuf>,
    /// Present the records outside another label file's subset.
    #[arg(long)]
    remainder_of: Option<PathBuf>,
    /// Show which system produced each feedback.
    #[arg(long)]
    no_blind: bool,
    /// Re-present every case of a finished file; newer labels win.
    #[arg(long)]
    amend: bool,
}

#[derive(Args, Debug)]
struct AgreeArgs {
    /// First rater's label file.
    #[arg(long)]
    a: PathBuf,
    /// Second rater's label file.
    #[arg(long)]
    b: PathBuf,
    /// Directory under the output root.
    #[arg(long, default_value = "agreement")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ResolveArgs {
    /// First rater's label file.
    #[arg(long)]
    a: PathBuf,
    /// Second rater's label file.
    #[arg(long)]
    b: PathBuf,
    /// JSON lines of {record_id, over_praise, over_inference, note?}.
    #[arg(long)]
    decisions: Option<PathBuf>,
    /// Single-rater label files covering the rest of the records.
    #[arg(long)]
    remainder: Vec<PathBuf>,
    /// File under the output root.
    #[arg(long, default_value = "consolidated.jsonl")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// Consolidated labels covering both runs.
    #[arg(long)]
    labels: PathBuf,
    /// Single-agent run directory or records file.
    #[arg(long)]
    single_run: PathBuf,
    /// Multi-agent run directory or records file.
    #[arg(long)]
    multi_run: PathBuf,
    /// File under the output root.
    #[arg(long, default_value = "comparison.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Consolidated labels covering both runs.
    #[arg(long)]
    labels: PathBuf,
    /// Single-agent run directory or records file.
    #[arg(long)]
    single_run: PathBuf,
    /// Multi-agent run directory or records file.
    #[arg(long)]
    multi_run: PathBuf,
    /// Printed values to compare against; mismatches become footnotes.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Also write one exhibit per record.
    #[arg(long)]
    cases: bool,
    /// Directory under the output root.
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

/// Resolves `rel` inside `root`, refusing absolute paths and `..`.
fn under_root(root: &Path, rel: &Path) -> Result<PathBuf, CliError> {
    if rel.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
        return Err(CliError::Usage(anyhow!("{} must be a relative path inside the output root", rel.display())));
    }
    Ok(root.join(rel))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display())).runtime()?;
    }
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display())).runtime()
}

fn json_pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(anyhow!("{} does not exist", path.display())))
    }
}

struct Ctx<'a> {
    cfg: AppConfig,
    root: PathBuf,
    out: &'a mut dyn Write,
    err: &'a mut (dyn Write + Send),
}

/// Runs the CLI with explicit arguments, environment and streams.
pub fn run_cli(
    args: impl IntoIterator<Item = impl Into<OsString> + Clone>,
    env: Vec<(String, String)>,
    stdin: &mut dyn io::BufRead,
    stdout: &mut dyn Write,
    stderr: &mut (dyn Write + Send),
) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 { write!(stdout, "{}", e.render()) } else { write!(stderr, "{}", e.render()) };
            return code;
        }
    };
    match dispatch(cli, env, stdin, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let (CliError::Usage(inner) | CliError::Runtime(inner)) = &e;
            let _ = writeln!(stderr, "error: {inner:#}");
            e.exit_code()
        }
    }
}

pub fn main() -> ExitCode {
    let stdin = io::stdin();
    let code = run_cli(
        std::env::args_os(),
        std::env::vars().collect(),
        &mut stdin.lock(),
        &mut io::stdout().lock(),
        &mut io::stderr(),
    );
    ExitCode::from(code)
}

fn flag<T: ToString>(key: &str, value: &Option<T>) -> Option<(String, String)> {
    value.as_ref().map(|v| (key.to_string(), v.to_string()))
}

fn dispatch(
    cli: Cli,
    env: Vec<(String, String)>,
    stdin: &mut dyn io::BufRead,
    out: &mut dyn Write,
    err: &mut (dyn Write + Send),
) -> Result<(), CliError> {
    let mut flags = Vec::new();
    for s in &cli.set {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::Usage(anyhow!("--set expects KEY=VALUE, got `{s}`")))?;
        flags.push((k.trim().to_string(), v.to_string()));
    }
    flags.extend(flag("paths.output_root", &cli.output_root.as_ref().map(|p| p.display())));
    match &cli.command {
        Command::Sample(a) => {
            flags.extend(flag("sampling.n_per_class", &a.n_per_class));
            flags.extend(flag("sampling.pilot_per_class", &a.pilot));
            flags.extend(flag("sampling.seed", &a.seed));
        }
        Command::Run(a) => {
            flags.extend(flag("run.concurrency", &a.concurrency));
            flags.extend(flag("run.max_validation_rounds", &a.max_rounds));
            flags.extend(flag("backend.model", &a.model));
            flags.extend(flag("paths.cache", &a.cache.as_ref().map(|p| p.display())));
            flags.extend(flag("paths.templates", &a.templates.as_ref().map(|p| p.display())));
            flags.extend(flag("paths.context", &a.context.as_ref().map(|p| p.display())));
            if a.split_role {
                flags.push(("run.split_role".into(), "true".into()));
            }
        }
        Command::Annotate(a) => {
            flags.extend(flag("sampling.overlap_percent", &a.percent));
            flags.extend(flag("sampling.seed", &a.seed));
        }
        _ => {}
    }
    let cfg = AppConfig::load(cli.config.as_deref(), env, &flags).usage()?;
    let root = cfg.paths.output_root.clone();
    let mut ctx = Ctx { cfg, root, out, err };
    match cli.command {
        Command::Sample(a) => cmd_sample(&mut ctx, a),
        Command::Run(a) => cmd_run(&mut ctx, a),
        Command::Annotate(a) => cmd_annotate(&mut ctx, a, stdin),
        Command::Agree(a) => cmd_agree(&mut ctx, a),
        Command::Resolve(a) => cmd_resolve(&mut ctx, a),
        Command::Stats(a) => cmd_stats(&mut ctx, a),
        Command::Report(a) => cmd_report(&mut ctx, a),
    }
}

#[derive(Serialize)]
struct SampleFiles {
    pilot: Option<SampleManifest>,
    test: SampleManifest,
}

fn cmd_sample(ctx: &mut Ctx, a: SampleArgs) -> Result<(), CliError> {
    require_file(&a.corpus)?;
    let dir = under_root(&ctx.root, &a.out)?;
    let format = Format::from_path(&a.corpus).usage()?;
    let corpus = load_corpus(&a.corpus, format).usage()?;
    let s = &ctx.cfg.sampling;
    let ext = a.corpus.extension().and_then(|e| e.to_str()).unwrap_or("csv").to_string();

    let split = pilot_and_test(&corpus, s.pilot_per_class, s.n_per_class, s.seed).usage()?;
    fs::create_dir_all(&dir).runtime()?;
    if let Some((pilot, _)) = &split.pilot {
        save_corpus(pilot, &dir.join(format!("pilot.{ext}")), format).runtime()?;
    }
    save_corpus(&split.test, &dir.join(format!("test.{ext}")), format).runtime()?;
    let manifest = SampleFiles { pilot: split.pilot.map(|(_, m)| m), test: split.test_manifest };
    write_file(&dir.join("sample_manifest.json"), json_pretty(&manifest))?;
    let pilot_len = manifest.pilot.as_ref().map_or(0, |m| m.counts.values().sum::<usize>());
    let _ =
        writeln!(ctx.out, "pilot: {pilot_len} responses, test: {} responses, in {}", split.test.len(), dir.display());
    Ok(())
}

fn run_backend(ctx: &Ctx, a: &RunArgs) -> Result<Box<dyn ChatBackend>, CliError> {
    let cache = ResponseCache::new(&ctx.cfg.paths.cache);
    if a.replay {
        return Ok(Box::new(CachedBackend::replay(cache)));
    }
    let inner: Arc<dyn ChatBackend> = if a.mock {
        Arc::new(MockBackend::synthetic())
    } else {
        Arc::new(HttpBackend::from_env(ctx.cfg.http_config()).usage()?)
    };
    let mode = if a.record { CacheMode::Record } else { CacheMode::ReplayOrRecord };
    Ok(Box::new(CachedBackend::new(cache, mode, Some(inner)).usage()?))
}

fn cmd_run(ctx: &mut Ctx, a: RunArgs) -> Result<(), CliError> {
    let out_dir = a.out.clone().unwrap_or_else(|| ctx.root.join("runs").join(a.mode.as_str()));
    let mut rc = RunConfig::new(a.mode, &a.dataset, &out_dir);
    rc.params = ctx.cfg.chat_params();
    rc.concurrency = ctx.cfg.run.concurrency;
    rc.max_validation_rounds = ctx.cfg.run.max_validation_rounds;
    rc.split_role = ctx.cfg.run.split_role;
    rc.seed = ctx.cfg.sampling.seed;
    rc.context = ctx.cfg.paths.context.clone();
    if let Some(dir) = &ctx.cfg.paths.templates {
        rc.agent1_template = Some(dir.join("agent1.txt"));
        if a.mode == RunMode::Multi {
            rc.agent2_template = Some(dir.join("agent2.txt"));
            if rc.max_validation_rounds > 1 {
                rc.revision_template = Some(dir.join("agent1_revision.txt"));
            }
        }
    }
    // Everything that can be checked is checked before a backend exists.
    rc.validate().usage()?;
    rc.load_pipeline().usage()?;
    let backend = run_backend(ctx, &a)?;

    let quiet = a.quiet;
    let err = std::sync::Mutex::new(&mut *ctx.err);
    let progress = |p: orchestrator::Progress| {
        if !quiet && (p.done == p.total || p.done.is_multiple_of(10)) {
            let _ = writeln!(err.lock().unwrap(), "{}/{} done, {} failed", p.done, p.total, p.failed);
        }
    };
    let outcome = orchestrator::run(&rc, backend.as_ref(), Some(&progress));
    let outcome = match outcome {
        Ok(o) => o,
        Err(e @ RunError::Io { .. }) => return Err(CliError::Runtime(e.into())),
        Err(e) => return Err(CliError::Usage(e.into())),
    };
    write_file(&out_dir.join("app_config.toml"), ctx.cfg.to_toml())?;
    let counts = outcome.manifest.counts;
    let _ = writeln!(
        ctx.out,
        "{} records, {} failures, written to {}",
        counts.succeeded,
        counts.failed,
        out_dir.join(RECORDS_FILE).display()
    );
    if counts.failed > 0 {
        for f in &outcome.manifest.failures {
            let _ = writeln!(ctx.err, "failed {} at {:?}: {}", f.response_id, f.stage, f.error);
        }
        return Err(CliError::Runtime(anyhow!("{} of {} responses failed", counts.failed, counts.inputs)));
    }
    Ok(())
}

fn records_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(RECORDS_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load_records(p: &Path) -> Result<Vec<RunRecord>, CliError> {
    let path = records_path(p);
    require_file(&path)?;
    read_records(&path).map_err(|e| CliError::Usage(anyhow!(e)))
}

fn annotation_error(e: AnnotationError) -> CliError {
    match e {
        AnnotationError::Io { .. } => CliError::Runtime(e.into()),
        other => CliError::Usage(other.into()),
    }
}

fn cmd_annotate(ctx: &mut Ctx, a: AnnotateArgs, stdin: &mut dyn io::BufRead) -> Result<(), CliError> {
    let mut records = Vec::new();
    let mut run_files = Vec::new();
    for r in &a.runs {
        records.extend(load_records(r)?);
        run_files.push(records_path(r).display().to_string());
    }
    let subset = if a.overlap {
        let (pct, seed) = (ctx.cfg.sampling.overlap_percent, ctx.cfg.sampling.seed);
        Some((annotator::overlap_subset(&records, pct, seed), annotator::seeded_selection(pct, seed)))
    } else if let Some(path) = &a.ids {
        require_file(path)?;
        let text = fs::read_to_string(path).usage()?;
        Some((text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(), Selection::Explicit))
    } else if let Some(path) = &a.remainder_of {
        require_file(path)?;
        let taken: BTreeSet<String> =
            read_label_file(path).map_err(annotation_error)?.header.subset.into_iter().collect();
        let rest = records.iter().map(RunRecord::record_key).filter(|k| !taken.contains(k)).collect();
        Some((rest, Selection::Explicit))
    } else {
        None
    };
    if let Some(parent) = a.labels.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).runtime()?;
    }
    let mut session = AnnotationSession::open(&records, run_files, &a.rater, !a.no_blind, subset, &a.labels, a.amend)
        .map_err(annotation_error)?;
    let outcome = session.run(stdin, &mut *ctx.out).map_err(annotation_error)?;
    if outcome.complete {
        let _ = writeln!(ctx.out, "Label file {} is complete.", a.labels.display());
    }
    Ok(())
}

fn load_labels(path: &Path) -> Result<Vec<annotator::AnnotationLabel>, CliError> {
    require_file(path)?;
    Ok(read_label_file(path).map_err(annotation_error)?.labels())
}

fn cmd_agree(ctx: &mut Ctx, a: AgreeArgs) -> Result<(), CliError> {
    let dir = under_root(&ctx.root, &a.out)?;
    let (la, lb) = (load_labels(&a.a)?, load_labels(&a.b)?);
    let agr = agreement(&la, &lb).map_err(annotation_error)?;
    let kappa = |k: Option<f64>| k.map_or("n/a".to_string(), |k| format!("{k:.3}"));
    let _ = writeln!(ctx.out, "records: {}", agr.n);
    let _ = writeln!(
        ctx.out,
        "over-praise agreement: {} (kappa {})",
        agr.over_praise.percent,
        kappa(agr.over_praise.kappa)
    );
    let _ = writeln!(
        ctx.out,
        "over-inference agreement: {} (kappa {})",
        agr.over_inference.percent,
        kappa(agr.over_inference.kappa)
    );
    let _ = writeln!(ctx.out, "overall agreement: {}", agr.overall.percent);
    for d in &agr.disagreements {
        let _ = writeln!(ctx.out, "to discuss: {} first={:?} second={:?}", d.record_id, d.first, d.second);
    }
    let mut todo = String::new();
    for d in &agr.disagreements {
        let adj = Adjudication {
            record_id: d.record_id.clone(),
            over_praise: d.first.0,
            over_inference: d.first.1,
            note: Some(format!("first rater {:?}, second rater {:?}; edit to the agreed codes", d.first, d.second)),
        };
        todo.push_str(&serde_json::to_string(&adj).expect("serializes"));
        todo.push('\n');
    }
    write_file(&dir.join("agreement.json"), json_pretty(&agr))?;
    write_file(&dir.join("decisions.todo.jsonl"), todo)?;
    Ok(())
}

fn cmd_resolve(ctx: &mut Ctx, a: ResolveArgs) -> Result<(), CliError> {
    let path = under_root(&ctx.root, &a.out)?;
    let (la, lb) = (load_labels(&a.a)?, load_labels(&a.b)?);
    let decisions = match &a.decisions {
        Some(p) => {
            require_file(p)?;
            read_adjudications(p).map_err(annotation_error)?
        }
        None => Vec::new(),
    };
    let mut merged = resolve(&la, &lb, &decisions).map_err(annotation_error)?;
    for r in &a.remainder {
        merged = merge_remainder(&merged, &load_labels(r)?).map_err(annotation_error)?;
    }
    fs::create_dir_all(path.parent().unwrap_or(&ctx.root)).runtime()?;
    annotator::write_consolidated(&path, &merged).map_err(annotation_error)?;
    let _ = writeln!(ctx.out, "{} consolidated labels written to {}", merged.len(), path.display());
    Ok(())
}

struct LoadedRun {
    records: Vec<RunRecord>,
    manifest: RunManifest,
    run_ref: RunRef,
}

fn load_run(dir: &Path, mode: RunMode) -> Result<LoadedRun, CliError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    require_file(&manifest_path)?;
    let bytes = fs::read(&manifest_path).usage()?;
    let manifest: RunManifest =
        serde_json::from_slice(&bytes).with_context(|| format!("cannot parse {}", manifest_path.display())).usage()?;
    let records = load_records(dir)?;
    if let Some(r) = records.iter().find(|r| r.mode != mode) {
        return Err(CliError::Usage(anyhow!(
            "{} holds a {} record ({}); expected {mode}",
            dir.display(),
            r.mode,
            r.response_id
        )));
    }
    let run_ref = RunRef { path: dir.display().to_string(), manifest_digest: sha256_hex(&bytes) };
    Ok(LoadedRun { records, manifest, run_ref })
}

fn comparison_inputs(
    labels: &Path,
    single: &Path,
    multi: &Path,
) -> Result<(Comparison, LoadedRun, LoadedRun, Vec<annotator::ConsolidatedLabel>), CliError> {
    require_file(labels)?;
    let labels = read_consolidated(labels).map_err(annotation_error)?;
    let (s, m) = (load_run(single, RunMode::Single)?, load_run(multi, RunMode::Multi)?);
    let keys: BTreeSet<String> = s.records.iter().chain(&m.records).map(RunRecord::record_key).collect();
    if let Some(l) = labels.iter().find(|l| !keys.contains(&l.record_id)) {
        return Err(CliError::Usage(anyhow!("label for `{}` matches no record in the given runs", l.record_id)));
    }
    let by_mode = report::labels_by_mode(&labels);
    let rates = |mode: RunMode, n: usize| {
        let empty = Vec::new();
        tally(by_mode.get(&mode).unwrap_or(&empty).iter().copied(), n as u64).usage()
    };
    let cmp = compare_runs_or_zero(&rates(RunMode::Single, s.records.len())?, &rates(RunMode::Multi, m.records.len())?);
    Ok((cmp, s, m, labels))
}

fn cmd_stats(ctx: &mut Ctx, a: StatsArgs) -> Result<(), CliError> {
    let path = under_root(&ctx.root, &a.out)?;
    let (cmp, s, m, _) = comparison_inputs(&a.labels, &a.single_run, &a.multi_run)?;
    let generated = s.manifest.finished_at.clone().max(m.manifest.finished_at.clone());
    let rep = build_report(cmp, s.run_ref, m.run_ref, None, generated);
    let _ = write!(ctx.out, "{}", render_table(&rep, TableFormat::Markdown));
    write_file(&path, json_pretty(&rep))
}

fn cmd_report(ctx: &mut Ctx, a: ReportArgs) -> Result<(), CliError> {
    let dir = under_root(&ctx.root, &a.out)?;
    let reference: Option<ReferenceTable> = match &a.reference {
        Some(p) => {
            require_file(p)?;
            let text = fs::read_to_string(p).usage()?;
            Some(serde_json::from_str(&text).with_context(|| format!("cannot parse {}", p.display())).usage()?)
        }
        None => None,
    };
    let (cmp, s, m, labels) = comparison_inputs(&a.labels, &a.single_run, &a.multi_run)?;
    let generated = s.manifest.finished_at.clone().max(m.manifest.finished_at.clone());
    let rep = build_report(cmp, s.run_ref.clone(), m.run_ref.clone(), reference.as_ref(), generated);
    let md = render_table(&rep, TableFormat::Markdown);
    write_file(&dir.join("report.md"), &md)?;
    write_file(&dir.join("table.csv"), render_table(&rep, TableFormat::Csv))?;
    write_file(&dir.join("comparison.json"), json_pretty(&rep))?;
    if a.cases {
        for r in s.records.iter().chain(&m.records) {
            let label = labels.iter().find(|l| l.record_id == r.record_key());
            let name = format!("{}_{}.md", r.mode, sanitize(&r.response_id));
            write_file(&dir.join("cases").join(name), render_case(r, label))?;
        }
    }
    let _ = write!(ctx.out, "{md}");
    Ok(())
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> (u8, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_cli(
            std::iter::once("autofeedback").chain(args.iter().copied()),
            vec![],
            &mut "".as_bytes(),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn help_exits_zero_and_bad_usage_exits_one() {
        assert_eq!(cli(&["--help"]).0, 0);
        assert_eq!(cli(&["frobnicate"]).0, 1);
        assert_eq!(cli(&["run", "--mode", "multi"]).0, 1);
    }

    #[test]
    fn out_paths_stay_inside_the_root() {
        let root = Path::new("/r");
        assert_eq!(under_root(root, Path::new("a/b")).unwrap(), Path::new("/r/a/b"));
        assert!(under_root(root, Path::new("../x")).is_err());
        assert!(under_root(root, Path::new("/tmp/x")).is_err());
    }

    #[test]
    fn missing_label_file_names_the_path() {
        let (code, _, err) =
            cli(&["stats", "--labels", "/nonexistent/l.jsonl", "--single-run", "/x", "--multi-run", "/y"]);
        assert_eq!(code, 1);
        assert!(err.contains("/nonexistent/l.jsonl"), "{err}");
    }
}
