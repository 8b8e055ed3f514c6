//! Comparison tables and per-case exhibits.
//!
//! Every number printed here comes from a [`Comparison`]; the renderers
//! only format.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotator::{ConsolidatedLabel, Provenance};
use crate::model::{Decision, IssueFlag, RunMode, RunRecord};
use crate::statlab::{format_p, format_statistic, Comparison, Dimension, Hundredths};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

/// Which run a set of numbers came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRef {
    pub path: String,
    pub manifest_digest: String,
}

/// Previously printed values to check the computed table against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub label: String,
    /// `count/percent` cells keyed by dimension.
    pub single: BTreeMap<Dimension, String>,
    pub multi: BTreeMap<Dimension, String>,
    #[serde(default)]
    pub chi_square: BTreeMap<Dimension, String>,
    /// Reductions in percentage points.
    #[serde(default)]
    pub deltas: BTreeMap<Dimension, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub single_run: RunRef,
    pub multi_run: RunRef,
    pub comparison: Comparison,
    pub footnotes: Vec<String>,
    pub generated_at: String,
}

fn system_name(mode: RunMode) -> &'static str {
    match mode {
        RunMode::Single => "Single agent",
        RunMode::Multi => "Multi-agent",
    }
}

fn parse_cell(cell: &str) -> Option<(u64, Hundredths)> {
    let (count, pct) = cell.split_once('/')?;
    Some((count.trim().parse().ok()?, parse_hundredths(pct)?))
}

fn parse_hundredths(text: &str) -> Option<Hundredths> {
    let text = text.trim();
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, "0"));
    if frac.len() > 2 || int.is_empty() {
        return None;
    }
    let v = int.parse::<i64>().ok()? * 100 + format!("{frac:0<2}").parse::<i64>().ok()?;
    Some(Hundredths(if neg { -v } else { v }))
}

/// Notes for every reference value that differs from the computed one.
pub fn reference_footnotes(cmp: &Comparison, reference: &ReferenceTable) -> Vec<String> {
    let mut notes = Vec::new();
    let label = &reference.label;
    for (mode, rates, cells) in
        [(RunMode::Single, &cmp.single, &reference.single), (RunMode::Multi, &cmp.multi, &reference.multi)]
    {
        for (&dim, printed) in cells {
            let ours = rates.cell(dim);
            if parse_cell(printed) == Some((rates.count(dim), rates.percent(dim))) {
                continue;
            }
            let why = match parse_cell(printed) {
                Some((count, _)) if count == rates.count(dim) => {
                    format!("{count}/{} rounds to {}", rates.n(), rates.percent(dim))
                }
                _ => format!("the labels give {ours}"),
            };
            notes.push(format!("{label} prints {printed} for {} / {}; {why}.", system_name(mode), dim.title()));
        }
    }
    for (&dim, printed) in &reference.chi_square {
        let ours = format_statistic(cmp.dimension(dim).statistic);
        if printed.trim() != ours {
            notes.push(format!("{label} prints a chi-square of {printed} for {}; computed {ours}.", dim.title()));
        }
    }
    for (&dim, printed) in &reference.deltas {
        let ours = cmp.dimension(dim).delta;
        if parse_hundredths(printed) != Some(ours) {
            notes.push(format!(
                "{label} prints a reduction of {printed} points for {}; the counts give {} - {} = {ours}.",
                dim.title(),
                cmp.single.percent(dim),
                cmp.multi.percent(dim),
            ));
        }
    }
    notes
}

/// Collects footnotes (degenerate columns, then reference mismatches).
pub fn build_report(
    comparison: Comparison,
    single_run: RunRef,
    multi_run: RunRef,
    reference: Option<&ReferenceTable>,
    generated_at: impl Into<String>,
) -> ComparisonReport {
    let mut footnotes: Vec<String> = comparison
        .dimensions
        .iter()
        .filter(|d| d.degenerate)
        .map(|d| format!("No {} cases in either system; chi-square set to 0 and p to 1.", d.dimension.title()))
        .collect();
    if let Some(r) = reference {
        footnotes.extend(reference_footnotes(&comparison, r));
    }
    ComparisonReport { single_run, multi_run, comparison, footnotes, generated_at: generated_at.into() }
}

/// The table body as (row label, three cells), shared by both formats.
fn table_rows(cmp: &Comparison) -> Vec<(&'static str, [String; 3])> {
    let cells = |f: &dyn Fn(Dimension) -> String| Dimension::ALL.map(f);
    vec![
        (system_name(RunMode::Single), cells(&|d| cmp.single.cell(d))),
        (system_name(RunMode::Multi), cells(&|d| cmp.multi.cell(d))),
        ("Chi-square", cells(&|d| format_statistic(cmp.dimension(d).statistic))),
        ("p", cells(&|d| format_p(cmp.dimension(d).p_value))),
        ("Reduction (points)", cells(&|d| cmp.dimension(d).delta.to_string())),
    ]
}

fn csv_key(row: &str) -> &'static str {
    match row {
        "Single agent" => "single_agent",
        "Multi-agent" => "multi_agent",
        "Chi-square" => "chi_square",
        "p" => "p",
        _ => "reduction_points",
    }
}

pub fn render_table(report: &ComparisonReport, format: TableFormat) -> String {
    match format {
        TableFormat::Markdown => render_markdown(report),
        TableFormat::Csv => render_csv(report),
    }
}

fn render_markdown(report: &ComparisonReport) -> String {
    let cmp = &report.comparison;
    let mut out = String::from("# Single-agent vs multi-agent feedback\n\n");
    let titles: Vec<&str> = Dimension::ALL.iter().map(|d| d.title()).collect();
    let _ = writeln!(out, "| | {} |", titles.join(" | "));
    out.push_str("|---|---:|---:|---:|\n");
    for (label, cells) in table_rows(cmp) {
        let _ = writeln!(out, "| {label} | {} |", cells.join(" | "));
    }
    let _ = writeln!(
        out,
        "\nCells are count/percent of N = {} (single agent) and N = {} (multi-agent). \
         Chi-square is Pearson's statistic on each 2x2 table without continuity correction, df = 1.",
        cmp.single.n(),
        cmp.multi.n()
    );
    if !report.footnotes.is_empty() {
        out.push_str("\nNotes:\n\n");
        for (i, note) in report.footnotes.iter().enumerate() {
            let _ = writeln!(out, "{}. {note}", i + 1);
        }
    }
    let _ = writeln!(out, "\nRuns:\n");
    for (name, run) in [("single", &report.single_run), ("multi", &report.multi_run)] {
        let _ = writeln!(out, "- {name}: `{}` (manifest sha256 {})", run.path, run.manifest_digest);
    }
    let _ = writeln!(out, "\nGenerated: {}", report.generated_at);
    out
}

fn render_csv(report: &ComparisonReport) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = vec!["row".to_string()];
    header.extend(Dimension::ALL.iter().map(|d| d.as_str().to_string()));
    w.write_record(&header).expect("in-memory write");
    for (label, cells) in table_rows(&report.comparison) {
        let mut row = vec![csv_key(label).to_string()];
        row.extend(cells);
        w.write_record(&row).expect("in-memory write");
    }
    for note in &report.footnotes {
        w.write_record([String::from("footnote"), note.clone(), String::new(), String::new()])
            .expect("in-memory write");
    }
    w.write_record(["single_manifest", &report.single_run.manifest_digest, "", ""]).expect("in-memory write");
    w.write_record(["multi_manifest", &report.multi_run.manifest_digest, "", ""]).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Table cells read back from a rendered table, keyed by csv row name.
pub type TableCells = BTreeMap<String, [String; 3]>;

pub fn parse_csv_table(text: &str) -> Result<TableCells, csv::Error> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = TableCells::new();
    for rec in r.records() {
        let rec = rec?;
        let key = &rec[0];
        if matches!(key, "footnote" | "single_manifest" | "multi_manifest") {
            continue;
        }
        out.insert(key.to_string(), [rec[1].to_string(), rec[2].to_string(), rec[3].to_string()]);
    }
    Ok(out)
}

pub fn parse_markdown_table(text: &str) -> TableCells {
    let mut out = TableCells::new();
    for line in text.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| |")) {
        let cols: Vec<&str> = line.trim_matches('|').split('|').map(str::trim).collect();
        if cols.len() == 4 {
            out.insert(csv_key(cols[0]).to_string(), [cols[1].to_string(), cols[2].to_string(), cols[3].to_string()]);
        }
    }
    out
}

/// The cells the renderers should print for `cmp`, straight from statlab.
pub fn expected_cells(cmp: &Comparison) -> TableCells {
    table_rows(cmp).into_iter().map(|(k, v)| (csv_key(k).to_string(), v)).collect()
}

fn quote(text: &str) -> String {
    if text.is_empty() {
        return "> (empty)\n".to_string();
    }
    text.split('\n').map(|l| if l.is_empty() { ">\n".to_string() } else { format!("> {l}\n") }).collect()
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// A markdown exhibit tracing one response through the pipeline.
pub fn render_case(record: &RunRecord, label: Option<&ConsolidatedLabel>) -> String {
    let mut out = format!(
        "## Response {} ({}, {})\n\n",
        record.response_id,
        system_name(record.mode).to_lowercase(),
        record.score_level
    );
    if let Some(warning) = record.verdict.as_ref().and_then(|v| v.parse_warning()) {
        let _ = writeln!(out, "**Needs human review:** {warning}\n");
    }
    out.push_str("### Student response\n\n");
    out.push_str(&quote(&record.response_text));
    for (i, round) in record.prior_rounds.iter().enumerate() {
        let _ = writeln!(out, "\n### Round {}: Agent 1 feedback\n", i + 1);
        out.push_str(&quote(&round.agent1_feedback.raw_text));
        let _ = writeln!(out, "\n### Round {}: Agent 2 output\n", i + 1);
        out.push_str(&quote(&round.agent2_raw));
    }
    out.push_str("\n### Agent 1 feedback\n\n");
    out.push_str(&quote(&record.agent1_feedback.raw_text));
    if let Some(verdict) = &record.verdict {
        out.push_str("\n### Agent 2 reasons\n\n");
        out.push_str(&quote(verdict.reasons()));
        let issues: Vec<&str> = verdict
            .detected_issues()
            .iter()
            .map(|i| match i {
                IssueFlag::OverPraise => "over-praise",
                IssueFlag::OverInference => "over-inference",
            })
            .collect();
        let decision = match verdict.decision() {
            Decision::GoodEnough => "good enough".to_string(),
            Decision::Revised if issues.is_empty() => "revised".to_string(),
            Decision::Revised => format!("revised ({})", issues.join(", ")),
        };
        let _ = writeln!(out, "\nAgent 2 decision: {decision}");
        if let Some(revised) = verdict.revised_feedback() {
            out.push_str("\n### Revised feedback\n\n");
            out.push_str(&quote(&revised.raw_text));
        }
    }
    if record.over_word_limit {
        out.push_str("\nFinal feedback is over the word limit.\n");
    }
    if let Some(l) = label {
        let provenance = match l.provenance {
            Provenance::Agreed => "raters agreed",
            Provenance::Adjudicated => "adjudicated",
            Provenance::SingleRater => "single rater",
        };
        let _ = writeln!(
            out,
            "\n### Human labels\n\nOver-praise: {}. Over-inference: {}. ({provenance}: {})",
            yes_no(l.over_praise),
            yes_no(l.over_inference),
            l.raters.join(", ")
        );
    }
    out
}

/// Splits consolidated labels by the mode prefix of their record ids.
pub fn labels_by_mode(labels: &[ConsolidatedLabel]) -> BTreeMap<RunMode, Vec<&ConsolidatedLabel>> {
    let mut out: BTreeMap<RunMode, Vec<&ConsolidatedLabel>> = BTreeMap::new();
    for l in labels {
        if let Some(mode) = l.record_id.split_once(':').and_then(|(m, _)| m.parse().ok()) {
            out.entry(mode).or_default().push(l);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeedbackDocument, ScoreLevel, TokenUsage, ValidationVerdict};
    use crate::statlab::{compare_runs_or_zero, IssueRates};
    use proptest::prelude::*;

    fn run(name: &str) -> RunRef {
        RunRef { path: format!("runs/{name}"), manifest_digest: "ab".repeat(32) }
    }

    fn table1() -> Comparison {
        compare_runs_or_zero(&IssueRates::new(240, 37, 68, 23).unwrap(), &IssueRates::new(240, 3, 17, 2).unwrap())
    }

    fn reference() -> ReferenceTable {
        serde_json::from_str(include_str!("../fixtures/table1/reference.json")).unwrap()
    }

    #[test]
    fn markdown_table_matches_printed_cells() {
        let rep = build_report(table1(), run("single"), run("multi"), Some(&reference()), "2026-01-01T00:00:00Z");
        let md = render_table(&rep, TableFormat::Markdown);
        assert!(md.contains("| Single agent | 37/15.42 | 68/28.33 | 23/9.58 |"), "{md}");
        assert!(md.contains("| Multi-agent | 3/1.25 | 17/7.08 | 2/0.83 |"));
        assert!(md.contains("| Chi-square | 31.527 | 37.185 | 18.609 |"));
        assert!(md.contains("| p | 0.000 | 0.000 | 0.000 |"));
        assert!(md.contains(&"ab".repeat(32)));
    }

    #[test]
    fn discrepancies_become_footnotes() {
        let rep = build_report(table1(), run("single"), run("multi"), Some(&reference()), "t");
        assert_eq!(rep.footnotes.len(), 2, "{:?}", rep.footnotes);
        assert!(rep.footnotes[0].contains("68/27.20") && rep.footnotes[0].contains("28.33"));
        assert!(rep.footnotes[1].contains("20.21") && rep.footnotes[1].contains("21.25"));
    }

    #[test]
    fn csv_parses_back_to_the_same_cells_as_markdown() {
        let rep = build_report(table1(), run("single"), run("multi"), Some(&reference()), "t");
        let csv = parse_csv_table(&render_table(&rep, TableFormat::Csv)).unwrap();
        let md = parse_markdown_table(&render_table(&rep, TableFormat::Markdown));
        assert_eq!(csv, expected_cells(&rep.comparison));
        assert_eq!(md, csv);
    }

    #[test]
    fn all_zero_comparison_is_zero_filled() {
        let zero = IssueRates::new(240, 0, 0, 0).unwrap();
        let rep = build_report(compare_runs_or_zero(&zero, &zero), run("s"), run("m"), None, "t");
        let cells = parse_csv_table(&render_table(&rep, TableFormat::Csv)).unwrap();
        assert_eq!(cells["single_agent"], ["0/0.00", "0/0.00", "0/0.00"]);
        assert_eq!(cells["chi_square"], ["0.000", "0.000", "0.000"]);
        assert_eq!(cells["reduction_points"], ["0.00", "0.00", "0.00"]);
        assert_eq!(rep.footnotes.len(), 3);
    }

    fn case(mode: RunMode) -> RunRecord {
        let a1 = FeedbackDocument::from_text("**Strength:** Your response attempted to address the question.");
        RunRecord {
            response_id: "40912".into(),
            mode,
            score_level: ScoreLevel::Beginning,
            response_text: "erljhfgefb,jkh".into(),
            agent1_prompt: "p".into(),
            agent1_feedback: a1.clone(),
            agent2_prompt: None,
            agent2_raw: None,
            verdict: None,
            prior_rounds: vec![],
            final_feedback: a1,
            over_word_limit: false,
            token_usage: TokenUsage::default(),
            wall_time_ms: 0,
            backend_fingerprint: "replay".into(),
        }
    }

    #[test]
    fn gibberish_case_shows_revision_path() {
        let mut r = case(RunMode::Multi);
        let revised = FeedbackDocument::from_text("**Strength:** You submitted a response.");
        let v = ValidationVerdict::revised(
            "The feedback praises the attempt, but the response is gibberish; this is over-praised.",
            [IssueFlag::OverPraise].into(),
            revised.clone(),
        )
        .unwrap();
        r.agent2_prompt = Some("p2".into());
        r.agent2_raw = Some("raw".into());
        r.verdict = Some(v);
        r.final_feedback = revised;
        let label = ConsolidatedLabel {
            record_id: r.record_key(),
            over_praise: false,
            over_inference: false,
            provenance: Provenance::Agreed,
            raters: vec!["r1".into(), "r2".into()],
            note: None,
        };
        let text = render_case(&r, Some(&label));
        assert!(text.contains("> erljhfgefb,jkh"));
        assert!(text.contains("### Agent 2 reasons"));
        assert!(text.contains("Agent 2 decision: revised (over-praise)"));
        assert!(text.contains("> **Strength:** You submitted a response."));
        assert!(text.contains("Over-praise: no. Over-inference: no. (raters agreed: r1, r2)"));
        assert!(!text.contains("Needs human review"));
    }

    #[test]
    fn single_case_has_no_agent2_block() {
        let text = render_case(&case(RunMode::Single), None);
        assert!(!text.contains("Agent 2"));
        assert!(text.contains("single agent"));
    }

    #[test]
    fn parse_warning_case_is_flagged() {
        let mut r = case(RunMode::Multi);
        let v = crate::orchestrator::parse_verdict("I would tone this down, it is a bit much.").unwrap();
        r.final_feedback = v.revised_feedback().unwrap().clone();
        r.agent2_raw = Some("x".into());
        r.agent2_prompt = Some("x".into());
        r.verdict = Some(v);
        assert!(render_case(&r, None).contains("**Needs human review:**"));
    }

    proptest! {
        #[test]
        fn rendered_cells_equal_statlab_outputs(
            n1 in 1u64..500, n2 in 1u64..500,
            f in proptest::array::uniform6(0.0f64..1.0),
        ) {
            let pick = |n: u64, x: f64| ((n as f64) * x) as u64;
            let (op1, oi1) = (pick(n1, f[0]), pick(n1, f[1]));
            let (op2, oi2) = (pick(n2, f[2]), pick(n2, f[3]));
            let b1 = pick(op1.min(oi1), f[4]);
            let b2 = pick(op2.min(oi2), f[5]);
            let cmp = compare_runs_or_zero(&IssueRates::new(n1, op1, oi1, b1).unwrap(), &IssueRates::new(n2, op2, oi2, b2).unwrap());
            let rep = build_report(cmp, run("s"), run("m"), None, "t");
            let from_csv = parse_csv_table(&render_table(&rep, TableFormat::Csv)).unwrap();
            let from_md = parse_markdown_table(&render_table(&rep, TableFormat::Markdown));
            for (i, dim) in Dimension::ALL.into_iter().enumerate() {
                let d = rep.comparison.dimension(dim);
                prop_assert_eq!(&from_csv["single_agent"][i], &rep.comparison.single.cell(dim));
                prop_assert_eq!(&from_csv["chi_square"][i], &format_statistic(d.statistic));
                prop_assert_eq!(&from_csv["p"][i], &format_p(d.p_value));
                prop_assert_eq!(parse_hundredths(&from_csv["reduction_points"][i]), Some(d.delta));
            }
            prop_assert_eq!(from_csv, from_md);
        }
    }
}
