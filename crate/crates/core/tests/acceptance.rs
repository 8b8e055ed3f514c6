//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::fs;
use std::panic;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use autofeedback::annotator::{agreement, read_consolidated, read_label_file};
use autofeedback::datasetio::{balanced_sample, load_corpus, pilot_and_test, Format};
use autofeedback::model::{RunMode, ScoreLevel, StudentResponse};
use autofeedback::orchestrator::parse_verdict;
use autofeedback::promptkit::{
    assemble_agent1, assemble_agent2, bundled_context, parse_context, PromptTemplate, TemplateKind,
};
use autofeedback::report::{build_report, labels_by_mode, ReferenceTable, RunRef};
use autofeedback::statlab::{
    chi_square, compare_runs, format_p, format_statistic, p_value, tally, ContingencyTable2x2, Dimension, Hundredths,
};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

const CHI_TOLERANCE: f64 = 0.0005;
const CHI_BUDGET: Duration = Duration::from_millis(1);
const P_TOLERANCE: f64 = 1e-9;
const RUN_BUDGET: Duration = Duration::from_secs(30);
const FUZZ_CASES: usize = 10_000;

/// (single count, multi count, published statistic) per column, N = 240 each.
const TABLE: [(u64, u64, f64); 3] = [(37, 3, 31.527), (68, 17, 37.185), (23, 2, 18.609)];

/// Upper tail of the df=1 chi-square distribution, by 40-digit numerical
/// integration of its density.
#[allow(clippy::excessive_precision)]
const TAIL_ORACLE: &[(f64, f64)] = &[
    (0.1, 0.75182963404584927583),
    (0.5, 0.47950012218695346232),
    (1.0, 0.31731050786291410283),
    (2.0, 0.15729920705028513066),
    (5.0, 0.025347318677468263932),
    (10.0, 0.0015654022580025496775),
    (20.0, 7.7442164310440836377e-6),
    (31.0, 2.5802843041604251871e-8),
    (40.0, 2.5396285894708649707e-10),
];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn ac1() -> Outcome {
    let mut worst = Duration::ZERO;
    for (single, multi, published) in TABLE {
        let table = ContingencyTable2x2::new(single, 240 - single, multi, 240 - multi);
        let start = Instant::now();
        let x = chi_square(&table).map_err(|e| e.to_string())?;
        worst = worst.max(start.elapsed());
        ensure((x - published).abs() <= CHI_TOLERANCE, format!("{x} vs {published}"))?;
        ensure(format_statistic(x) == format!("{published:.3}"), format!("{x} prints as {}", format_statistic(x)))?;
    }
    ensure(worst < CHI_BUDGET, format!("slowest call {worst:?}"))?;
    Ok(format!("31.527 37.185 18.609 within {CHI_TOLERANCE}, slowest {worst:?}"))
}

fn ac2() -> Outcome {
    let expect = [(37, "15.42"), (3, "1.25"), (17, "7.08"), (23, "9.58"), (2, "0.83"), (68, "28.33")];
    for (count, text) in expect {
        let got = Hundredths::percent(count, 240).to_string();
        ensure(got == text, format!("{count}/240 gave {got}, want {text}"))?;
    }
    let labels = read_consolidated(&fixtures().join("table1/consolidated.jsonl")).map_err(|e| e.to_string())?;
    let by_mode = labels_by_mode(&labels);
    let single = tally(by_mode[&RunMode::Single].iter().copied(), 240).map_err(|e| e.to_string())?;
    let multi = tally(by_mode[&RunMode::Multi].iter().copied(), 240).map_err(|e| e.to_string())?;
    ensure(single.cell(Dimension::OverInference) == "68/28.33", single.cell(Dimension::OverInference))?;
    ensure(multi.cell(Dimension::Both) == "2/0.83", multi.cell(Dimension::Both))?;
    let cmp = compare_runs(&single, &multi).map_err(|e| e.to_string())?;
    let reference: ReferenceTable =
        serde_json::from_str(&fs::read_to_string(fixtures().join("table1/reference.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let run = |mode: &str| RunRef { path: format!("runs/{mode}"), manifest_digest: String::new() };
    let report = build_report(cmp, run("single"), run("multi"), Some(&reference), "fixed");
    let flagged = report.footnotes.iter().any(|f| f.contains("27.20") && f.contains("28.33"));
    ensure(flagged, format!("no 27.20 footnote in {:?}", report.footnotes))?;
    Ok("15.42 1.25 7.08 9.58 0.83 exact; 27.20 flagged as 28.33".into())
}

fn ac3() -> Outcome {
    let mut worst = 0.0_f64;
    for &(x, oracle) in TAIL_ORACLE {
        let p = p_value(x).map_err(|e| e.to_string())?;
        worst = worst.max((p - oracle).abs());
    }
    ensure(worst < P_TOLERANCE, format!("max error {worst:e}"))?;
    for (_, _, stat) in TABLE {
        let p = format_p(p_value(stat).map_err(|e| e.to_string())?);
        ensure(p == "0.000", format!("p for {stat} prints {p}"))?;
    }
    Ok(format!("max error {worst:.1e} on {} points; all three print 0.000", TAIL_ORACLE.len()))
}

fn replay_run(root: &Path, concurrency: u32) -> Result<(Vec<u8>, Duration), String> {
    let fx = fixtures();
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_autofeedback"))
        .arg("--output-root")
        .arg(root)
        .args(["run", "--mode", "multi", "--replay", "--quiet", "--concurrency", &concurrency.to_string()])
        .arg("--dataset")
        .arg(fx.join("corpus/test.csv"))
        .arg("--cache")
        .arg(fx.join("cache"))
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(out.status.success(), format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))?;
    let dir = root.join("runs/multi");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure(manifest["counts"]["succeeded"] == 240, format!("counts {}", manifest["counts"]))?;
    ensure(manifest["counts"]["failed"] == 0, format!("counts {}", manifest["counts"]))?;
    let records = fs::read(dir.join("records.jsonl")).map_err(|e| e.to_string())?;
    Ok((records, elapsed))
}

fn ac4() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (one, t1) = replay_run(&tmp.path().join("c1"), 1)?;
    let (eight, t8) = replay_run(&tmp.path().join("c8"), 8)?;
    let (again, t8b) = replay_run(&tmp.path().join("c8b"), 8)?;
    let lines = one.iter().filter(|&&b| b == b'\n').count();
    ensure(lines == 240, format!("{lines} records"))?;
    ensure(one == eight, "records differ between concurrency 1 and 8")?;
    ensure(eight == again, "records differ between two invocations")?;
    let slowest = t1.max(t8).max(t8b);
    ensure(slowest < RUN_BUDGET, format!("slowest run {slowest:?}"))?;
    Ok(format!("240 records, 0 failures, byte-identical at 1/8 and across runs, slowest {slowest:.2?}"))
}

fn ac5() -> Outcome {
    const OMITTED: &str = "…(contents are omitted)…";
    let response = StudentResponse { id: "r1".into(), text: OMITTED.into(), score_level: ScoreLevel::Beginning };
    let golden = |name: &str| fs::read_to_string(fixtures().join("golden").join(name)).map_err(|e| e.to_string());

    let a1 = assemble_agent1(&PromptTemplate::bundled(TemplateKind::Agent1), &bundled_context(), &response)
        .map_err(|e| e.to_string())?
        .text();
    ensure(a1 == golden("agent1_fig_a1.txt")?, "Agent 1 prompt differs from its golden transcription")?;

    let ctx = parse_context(&golden("ms_ps1_4_fig_a2.toml")?).map_err(|e| e.to_string())?;
    let a2 = assemble_agent2(&PromptTemplate::bundled(TemplateKind::Agent2), &ctx, &response, OMITTED)
        .map_err(|e| e.to_string())?
        .text();
    ensure(a2 == golden("agent2_fig_a2.txt")?, "Agent 2 prompt differs from its golden transcription")?;
    Ok("Agent 1 and Agent 2 prompts equal their golden transcriptions".into())
}

fn ac6() -> Outcome {
    #[derive(serde::Deserialize)]
    struct Case {
        name: String,
        input: String,
        decision: String,
    }
    let cases: Vec<Case> =
        serde_json::from_str(&fs::read_to_string(fixtures().join("verdicts/cases.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure(cases.len() == 50, format!("{} cases", cases.len()))?;
    for case in &cases {
        let label = match parse_verdict(&case.input) {
            Err(_) => "Error",
            Ok(v) if v.needs_review() => "ParseWarning",
            Ok(v) if v.decision() == autofeedback::model::Decision::GoodEnough => "GoodEnough",
            Ok(_) => "Revised",
        };
        ensure(label == case.decision, format!("case `{}` gave {label}", case.name))?;
    }

    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let alphabet: Vec<char> = "abcxyz ABC:*#-_>\n\t.,!“”–…é😀019".chars().collect();
    let words = ["the feedback now is good enough", "Revised feedback:", "over-inference", "OVERPRAISED", "**"];
    let mut inputs = Vec::with_capacity(FUZZ_CASES);
    for _ in 0..FUZZ_CASES {
        let len = rng.next_u32() % 200;
        let mut s = String::new();
        for _ in 0..len {
            let r = rng.next_u32();
            if r % 13 == 0 {
                s.push_str(words[(r as usize / 13) % words.len()]);
            } else {
                s.push(alphabet[r as usize % alphabet.len()]);
            }
        }
        inputs.push(s);
    }
    let crashes = inputs.iter().filter(|s| panic::catch_unwind(|| parse_verdict(s)).is_err()).count();
    ensure(crashes == 0, format!("{crashes} inputs panicked"))?;
    Ok(format!("50/50 fixture cases; {FUZZ_CASES} random strings, no crash"))
}

fn ac7() -> Outcome {
    let corpus = load_corpus(&fixtures().join("corpus/corpus.csv"), Format::Csv).map_err(|e| e.to_string())?;
    ensure(corpus.len() == 845, format!("{} rows", corpus.len()))?;
    let first = balanced_sample(&corpus, 120, 7).map_err(|e| e.to_string())?;
    let second = balanced_sample(&corpus, 120, 7).map_err(|e| e.to_string())?;
    for level in [ScoreLevel::Beginning, ScoreLevel::Proficient] {
        ensure(first.count(level) == 120, format!("{level:?}: {}", first.count(level)))?;
    }
    ensure(first.ids() == second.ids(), "ids differ under the same seed")?;

    let split = pilot_and_test(&corpus, 15, 120, 7).map_err(|e| e.to_string())?;
    let (pilot, _) = split.pilot.ok_or("no pilot drawn")?;
    ensure(pilot.len() == 30 && split.test.len() == 240, format!("{} + {}", pilot.len(), split.test.len()))?;
    let overlap = pilot.ids().intersection(&split.test.ids()).count();
    ensure(overlap == 0, format!("{overlap} ids in both pilot and test"))?;
    Ok("120/120 with identical ids on rerun; pilot 30 and test 240 disjoint".into())
}

fn ac8() -> Outcome {
    let read = |name: &str| read_label_file(&fixtures().join("table1").join(name)).map_err(|e| e.to_string());
    let (a, b, planted) = (read("rater_a.jsonl")?, read("rater_b.jsonl")?, read("rater_b_planted.jsonl")?);
    let same = agreement(&a.labels(), &b.labels()).map_err(|e| e.to_string())?;
    ensure(same.n == 72, format!("{} overlap cases", same.n))?;
    ensure(same.overall.percent.to_string() == "100.00", same.overall.percent.to_string())?;
    let one_off = agreement(&a.labels(), &planted.labels()).map_err(|e| e.to_string())?;
    ensure(one_off.overall.percent.to_string() == "98.61", one_off.overall.percent.to_string())?;
    ensure(one_off.disagreements.len() == 1, format!("{} disagreements", one_off.disagreements.len()))?;
    Ok(format!("identical 100.00; planted 98.61 (71/72), flagged {}", one_off.disagreements[0].record_id))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("AC1 chi-square reproduction", ac1),
        ("AC2 percentage reproduction", ac2),
        ("AC3 p-value correctness", ac3),
        ("AC4 end-to-end determinism", ac4),
        ("AC5 prompt fidelity", ac5),
        ("AC6 verdict parser robustness", ac6),
        ("AC7 sampling protocol", ac7),
        ("AC8 annotation protocol", ac8),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
