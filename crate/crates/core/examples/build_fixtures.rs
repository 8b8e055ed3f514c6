//! Regenerates the synthetic fixtures under `fixtures/`:
//! an 845-response corpus, its pilot and test samples, a replay cache
//! recorded from the synthetic mock backend, and Table-1 style label files.
//!
//! `cargo run --example build_fixtures [-- <fixtures dir>]`

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use autofeedback::annotator::{
    merge_remainder, overlap_subset, records_digest, resolve, seeded_selection, write_consolidated, write_label_file,
    AnnotationLabel, LabelFile, LabelHeader, LABELS_FORMAT,
};
use autofeedback::datasetio::{pilot_and_test, save_corpus, Corpus, Format};
use autofeedback::llm::{CacheMode, CachedBackend, ChatBackend, MockBackend, ResponseCache};
use autofeedback::model::{RunMode, RunRecord, ScoreLevel, StudentResponse};
use autofeedback::orchestrator::{run, RunConfig};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const CORPUS_SEED: u64 = 845;
pub const FIRST_SAMPLE_SEED: u64 = 2024;
pub const N_BEGINNING: usize = 468;
pub const N_PER_CLASS: usize = 120;
pub const PILOT_PER_CLASS: usize = 15;
pub const OVERLAP_SEED: u64 = 33;
const TIMESTAMP: &str = "2026-01-01T00:00:00Z";

/// Responses quoted verbatim in the exhibits.
pub const NAMED: [(&str, &str); 3] = [
    ("40912", "erljhfgefb,jkh"),
    ("36652", "this shows how it dissolves"),
    (
        "19042",
        "This model shows how in cold water the red particle does not dissolve as much, in room temperature it dissolves a fair amount, and in hot water it almost fully dissolves",
    ),
];

const PROFICIENT_OPEN: &[&str] = &[
    "In the hot water the water particles move faster",
    "When thermal energy is transferred to the water its particles speed up",
    "The hot dish has the most thermal energy so the particles move the fastest",
    "Heat makes the water molecules move quicker",
    "The particles in the cool dish move slowly because they have less kinetic energy",
];
const PROFICIENT_LINK: &[&str] = &[
    "and they hit the candy coating more often,",
    "so they bump into the red coating harder,",
    "which spreads the red color out quicker,",
    "and the faster particles pull the dye away,",
];
const PROFICIENT_CLOSE: &[&str] = &[
    "so the color spreads fastest in the hot dish and slowest in the cold one.",
    "which is why the candy loses its color faster at higher temperature.",
    "so higher temperature means more particle motion and faster mixing.",
    "and in the cold water the particles are slow so the dye stays near the candy.",
];
const BEGINNING: &[&str] = &[
    "the candy melts",
    "The red goes into the water.",
    "In the hot one it goes faster i think",
    "it changes color",
    "The water turns red in all the dishes.",
    "the candy dissolves more in hot water",
    "my model shows the cups and the candy",
    "idk",
    "The color comes off the candy and the shell turns white.",
    "Hot water makes it dissolve quicker than cold water.",
    "the dye spreads out over time",
    "Its because of the sugar",
];
const BEGINNING_TAIL: &[&str] = &["", " and then it stops", " because it is hot", " like a rainbow", " in the middle"];

fn pick<'a>(rng: &mut ChaCha20Rng, items: &[&'a str]) -> &'a str {
    items[(rng.next_u32() as usize) % items.len()]
}

/// The 845-response corpus, deterministic in `CORPUS_SEED`.
pub fn corpus() -> Corpus {
    let mut rng = ChaCha20Rng::seed_from_u64(CORPUS_SEED);
    let mut ids: BTreeSet<String> = NAMED.iter().map(|(id, _)| id.to_string()).collect();
    let mut responses: Vec<StudentResponse> = NAMED
        .iter()
        .map(|(id, text)| StudentResponse {
            id: id.to_string(),
            text: text.to_string(),
            score_level: ScoreLevel::Beginning,
        })
        .collect();
    while responses.len() < 845 {
        let id = format!("{}", 10_000 + rng.next_u32() % 90_000);
        if !ids.insert(id.clone()) {
            continue;
        }
        let beginning = responses.iter().filter(|r| r.score_level == ScoreLevel::Beginning).count();
        let level = if beginning < N_BEGINNING && rng.next_u32() % 845 < N_BEGINNING as u32 {
            ScoreLevel::Beginning
        } else if responses.len() - beginning < 845 - N_BEGINNING {
            ScoreLevel::Proficient
        } else {
            ScoreLevel::Beginning
        };
        let text = match level {
            ScoreLevel::Proficient => format!(
                "{} {} {}",
                pick(&mut rng, PROFICIENT_OPEN),
                pick(&mut rng, PROFICIENT_LINK),
                pick(&mut rng, PROFICIENT_CLOSE)
            ),
            ScoreLevel::Beginning => format!("{}{}", pick(&mut rng, BEGINNING), pick(&mut rng, BEGINNING_TAIL)),
        };
        responses.push(StudentResponse { id, text, score_level: level });
    }
    responses.sort_by(|a, b| a.id.cmp(&b.id));
    Corpus::new(responses).expect("ids are unique")
}

/// First seed from `FIRST_SAMPLE_SEED` whose test set holds every named response.
pub fn sample_seed(corpus: &Corpus) -> u64 {
    (FIRST_SAMPLE_SEED..)
        .find(|&seed| {
            let split = pilot_and_test(corpus, PILOT_PER_CLASS, N_PER_CLASS, seed).unwrap();
            let ids = split.test.ids();
            NAMED.iter().all(|(id, _)| ids.contains(id))
        })
        .unwrap()
}

fn label(record_id: &str, rater: &str, op: bool, oi: bool) -> AnnotationLabel {
    AnnotationLabel {
        record_id: record_id.to_string(),
        rater_id: rater.to_string(),
        over_praise: op,
        over_inference: oi,
        note: None,
        timestamp: TIMESTAMP.to_string(),
    }
}

/// Codes for `ids` with exactly (both, praise only, inference only) cases,
/// spread by a fixed stride so they do not cluster by id.
fn planted_codes(ids: &[String], both: usize, praise_only: usize, inference_only: usize) -> Vec<(bool, bool)> {
    let n = ids.len();
    let mut codes = vec![(false, false); n];
    let mut slot = 0usize;
    for (count, code) in [(both, (true, true)), (praise_only, (true, false)), (inference_only, (false, true))] {
        for _ in 0..count {
            codes[(slot * 97) % n] = code;
            slot += 1;
        }
    }
    codes
}

fn label_file(rater: &str, records: &[RunRecord], subset: &[String], codes: &[(String, (bool, bool))]) -> LabelFile {
    LabelFile {
        header: LabelHeader {
            format: LABELS_FORMAT.to_string(),
            rater_id: rater.to_string(),
            blind: true,
            run_files: vec!["runs/multi/records.jsonl".to_string()],
            records_digest: records_digest(records),
            selection: seeded_selection(30, OVERLAP_SEED),
            subset: subset.to_vec(),
        },
        lines: codes.iter().map(|(id, (op, oi))| label(id, rater, *op, *oi)).collect(),
    }
}

fn record_runs(dir: &Path, dataset: &Path) -> (Vec<RunRecord>, Vec<RunRecord>) {
    let cache = dir.join("cache");
    if cache.exists() {
        fs::remove_dir_all(&cache).unwrap();
    }
    let inner: Arc<dyn ChatBackend> = Arc::new(MockBackend::synthetic());
    let backend = CachedBackend::new(ResponseCache::new(&cache), CacheMode::Record, Some(inner)).unwrap();
    let scratch = tempfile::tempdir().unwrap();
    let mut out = Vec::new();
    for mode in [RunMode::Single, RunMode::Multi] {
        let cfg = RunConfig::new(mode, dataset, scratch.path().join(mode.as_str()));
        let outcome = run(&cfg, &backend, None).unwrap();
        assert!(outcome.manifest.failures.is_empty(), "{:?}", outcome.manifest.failures);
        out.push(outcome.records);
    }
    let multi = out.pop().unwrap();
    (out.pop().unwrap(), multi)
}

/// Writes every generated fixture under `dir` and returns the sample seed.
pub fn build(dir: &Path) -> u64 {
    let corpus_dir = dir.join("corpus");
    let table_dir = dir.join("table1");
    fs::create_dir_all(&corpus_dir).unwrap();
    fs::create_dir_all(&table_dir).unwrap();

    let corpus = corpus();
    save_corpus(&corpus, &corpus_dir.join("corpus.csv"), Format::Csv).unwrap();
    let seed = sample_seed(&corpus);
    let split = pilot_and_test(&corpus, PILOT_PER_CLASS, N_PER_CLASS, seed).unwrap();
    let (pilot, pilot_manifest) = split.pilot.clone().unwrap();
    save_corpus(&pilot, &corpus_dir.join("pilot.csv"), Format::Csv).unwrap();
    save_corpus(&split.test, &corpus_dir.join("test.csv"), Format::Csv).unwrap();
    let manifest = serde_json::json!({ "pilot": pilot_manifest, "test": split.test_manifest });
    fs::write(corpus_dir.join("sample_manifest.json"), serde_json::to_string_pretty(&manifest).unwrap() + "\n")
        .unwrap();

    let (single, multi) = record_runs(dir, &corpus_dir.join("test.csv"));

    // Consolidated labels reproducing the Table-1 counts.
    let keys = |records: &[RunRecord]| records.iter().map(RunRecord::record_key).collect::<Vec<_>>();
    let (single_keys, multi_keys) = (keys(&single), keys(&multi));
    let overlap = overlap_subset(&multi, 30, OVERLAP_SEED);
    let multi_codes: Vec<(String, (bool, bool))> =
        multi_keys.iter().cloned().zip(planted_codes(&multi_keys, 2, 1, 15)).collect();
    let single_codes: Vec<(String, (bool, bool))> =
        single_keys.iter().cloned().zip(planted_codes(&single_keys, 23, 14, 45)).collect();

    let in_overlap: Vec<(String, (bool, bool))> =
        multi_codes.iter().filter(|(k, _)| overlap.contains(k)).cloned().collect();
    let rest: Vec<(String, (bool, bool))> = multi_codes.iter().filter(|(k, _)| !overlap.contains(k)).cloned().collect();
    let a = label_file("rater_a", &multi, &overlap, &in_overlap);
    let b = label_file("rater_b", &multi, &overlap, &in_overlap);
    let mut planted = b.clone();
    let flip = &mut planted.lines[40];
    flip.over_inference = !flip.over_inference;
    write_label_file(&table_dir.join("rater_a.jsonl"), &a).unwrap();
    write_label_file(&table_dir.join("rater_b.jsonl"), &b).unwrap();
    write_label_file(&table_dir.join("rater_b_planted.jsonl"), &planted).unwrap();

    let mut remainder: Vec<AnnotationLabel> =
        rest.iter().map(|(id, (op, oi))| label(id, "rater_a", *op, *oi)).collect();
    remainder.extend(single_codes.iter().map(|(id, (op, oi))| label(id, "rater_a", *op, *oi)));
    let consolidated = merge_remainder(&resolve(&a.labels(), &b.labels(), &[]).unwrap(), &remainder).unwrap();
    assert_eq!(consolidated.len(), 480);
    write_consolidated(&table_dir.join("consolidated.jsonl"), &consolidated).unwrap();
    seed
}

#[allow(dead_code)]
fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    let seed = build(&dir);
    println!("fixtures written to {} (sample seed {seed})", dir.display());
}
