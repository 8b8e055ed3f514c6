use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use super::{
    append_line, read_label_file, records_digest, AnnotationError, AnnotationLabel, LabelHeader, Selection,
    LABELS_FORMAT,
};
use crate::digest::sha256_hex;
use crate::model::{RunMode, RunRecord};

fn indent(text: &str) -> String {
    text.lines().map(|l| format!("    {l}")).collect::<Vec<_>>().join("\n")
}

/// The text shown to a rater for one record. Blind cards carry only the
/// response and the final feedback.
pub fn render_card(record: &RunRecord, position: usize, total: usize, blind: bool) -> String {
    let mut out = format!("==== Case {position} of {total} | response {} ====\n", record.response_id);
    if !blind {
        let system = match record.mode {
            RunMode::Single => "single agent",
            RunMode::Multi => "multi-agent",
        };
        out.push_str(&format!("System: {system}\nScore level: {}\n", record.score_level));
    }
    out.push_str("\nStudent response:\n");
    out.push_str(&indent(&record.response_text));
    out.push_str("\n\nFeedback:\n");
    out.push_str(&indent(&record.final_feedback.raw_text));
    out.push_str("\n\n");
    out.push_str(&"-".repeat(40));
    out.push('\n');
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionOutcome {
    pub labeled: usize,
    pub remaining: usize,
    pub complete: bool,
}

/// An interactive labeling pass over a fixed queue of records. Labels are
/// appended to the label file as soon as each card is answered, so an
/// interrupted session resumes where it stopped.
pub struct AnnotationSession<'a> {
    queue: Vec<&'a RunRecord>,
    rater_id: String,
    blind: bool,
    label_path: PathBuf,
    done: BTreeSet<String>,
    clock: Box<dyn Fn() -> String + 'a>,
}

enum Answer {
    Yes,
    No,
    Stop,
}

impl<'a> AnnotationSession<'a> {
    /// Opens or resumes the label file at `label_path`. `subset` holds
    /// record keys (`mode:id`); `None` presents every record.
    #[allow(clippy::too_many_arguments)]
    pub fn open(
        records: &'a [RunRecord],
        run_files: Vec<String>,
        rater_id: &str,
        blind: bool,
        subset: Option<(Vec<String>, Selection)>,
        label_path: &Path,
        amend: bool,
    ) -> Result<Self, AnnotationError> {
        let by_key: BTreeMap<String, &RunRecord> = records.iter().map(|r| (r.record_key(), r)).collect();
        let (ids, selection) = match subset {
            Some((ids, sel)) => (ids, sel),
            None => (by_key.keys().cloned().collect(), Selection::All),
        };
        let mut queue = Vec::with_capacity(ids.len());
        for id in &ids {
            queue.push(*by_key.get(id).ok_or_else(|| AnnotationError::UnknownRecord(id.clone()))?);
        }
        // A fixed, mode-interleaving order that does not depend on the rater.
        queue.sort_by_cached_key(|r| sha256_hex(r.record_key()));
        let mut subset: Vec<String> = ids;
        subset.sort();
        let header = LabelHeader {
            format: LABELS_FORMAT.to_string(),
            rater_id: rater_id.to_string(),
            blind,
            run_files,
            records_digest: records_digest(records),
            selection,
            subset,
        };

        let exists = label_path.metadata().map(|m| m.len() > 0).unwrap_or(false);
        let mut done = BTreeSet::new();
        if exists {
            let file = read_label_file(label_path)?;
            let mismatch = |reason: &str| AnnotationError::HeaderMismatch {
                path: label_path.to_path_buf(),
                reason: reason.to_string(),
            };
            if file.header.rater_id != header.rater_id {
                return Err(mismatch("different rater"));
            }
            if file.header.records_digest != header.records_digest {
                return Err(mismatch("run records changed"));
            }
            if file.header.subset != header.subset {
                return Err(mismatch("different record subset"));
            }
            if file.header.blind != header.blind {
                return Err(mismatch("different blind setting"));
            }
            if file.is_complete() && !amend {
                return Err(AnnotationError::AlreadyComplete(label_path.to_path_buf()));
            }
            if !amend {
                done = file.lines.into_iter().map(|l| l.record_id).collect();
            }
        } else {
            append_line(label_path, &serde_json::to_string(&header).expect("header serializes"))?;
        }
        Ok(Self {
            queue,
            rater_id: rater_id.to_string(),
            blind,
            label_path: label_path.to_path_buf(),
            done,
            clock: Box::new(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
        })
    }

    pub fn with_clock(mut self, clock: impl Fn() -> String + 'a) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn total(&self) -> usize {
        self.queue.len()
    }

    /// Index of the first record still waiting for a label.
    pub fn cursor(&self) -> usize {
        self.queue.iter().position(|r| !self.done.contains(&r.record_key())).unwrap_or(self.queue.len())
    }

    fn ask<R: BufRead, W: Write>(&self, input: &mut R, out: &mut W, question: &str) -> std::io::Result<Answer> {
        loop {
            write!(out, "{question} [y/n, q to stop]: ")?;
            out.flush()?;
            let mut line = String::new();
            if input.read_line(&mut line)? == 0 {
                writeln!(out)?;
                return Ok(Answer::Stop);
            }
            match line.trim().to_ascii_lowercase().as_str() {
                "y" | "yes" => return Ok(Answer::Yes),
                "n" | "no" => return Ok(Answer::No),
                "q" | "quit" => return Ok(Answer::Stop),
                _ => writeln!(out, "Please answer y or n.")?,
            }
        }
    }

    /// Presents the remaining cards until the queue is done, the rater
    /// types `q`, or input ends.
    pub fn run<R: BufRead, W: Write>(&mut self, mut input: R, mut out: W) -> Result<SessionOutcome, AnnotationError> {
        let io = |e| AnnotationError::Io { path: PathBuf::from("<terminal>"), source: e };
        let total = self.queue.len();
        let mut labeled = 0;
        let start = self.cursor();
        for (i, record) in self.queue.clone().into_iter().enumerate().skip(start) {
            let key = record.record_key();
            if self.done.contains(&key) {
                continue;
            }
            out.write_all(render_card(record, i + 1, total, self.blind).as_bytes()).map_err(io)?;
            let over_praise = match self.ask(&mut input, &mut out, "Over-praise?").map_err(io)? {
                Answer::Stop => break,
                a => matches!(a, Answer::Yes),
            };
            let over_inference = match self.ask(&mut input, &mut out, "Over-inference?").map_err(io)? {
                Answer::Stop => break,
                a => matches!(a, Answer::Yes),
            };
            write!(out, "Note (optional): ").map_err(io)?;
            out.flush().map_err(io)?;
            let mut note = String::new();
            input.read_line(&mut note).map_err(io)?;
            let note = Some(note.trim().to_string()).filter(|n| !n.is_empty());
            let label = AnnotationLabel {
                record_id: key.clone(),
                rater_id: self.rater_id.clone(),
                over_praise,
                over_inference,
                note,
                timestamp: (self.clock)(),
            };
            append_line(&self.label_path, &serde_json::to_string(&label).expect("label serializes"))?;
            self.done.insert(key);
            labeled += 1;
        }
        let remaining = total - self.queue.iter().filter(|r| self.done.contains(&r.record_key())).count();
        writeln!(out, "{labeled} labeled this session, {remaining} remaining.").map_err(io)?;
        Ok(SessionOutcome { labeled, remaining, complete: remaining == 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::record;
    use super::super::{overlap_subset, seeded_selection};
    use super::*;
    use proptest::prelude::*;

    fn runs() -> Vec<RunRecord> {
        let mut v = Vec::new();
        for i in 0..10 {
            v.push(record(&format!("{}", 100 + i), RunMode::Single));
            v.push(record(&format!("{}", 100 + i), RunMode::Multi));
        }
        v
    }

    fn open<'a>(recs: &'a [RunRecord], path: &Path, subset: Option<Vec<String>>, amend: bool) -> AnnotationSession<'a> {
        AnnotationSession::open(recs, vec![], "r1", true, subset.map(|s| (s, Selection::Explicit)), path, amend)
            .unwrap()
            .with_clock(|| "2026-01-01T00:00:00Z".to_string())
    }

    #[test]
    fn session_collects_labels_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r1.jsonl");
        let recs = runs();
        let subset = overlap_subset(&recs, 30, 5);
        assert_eq!(subset.len(), 6);

        let mut s = open(&recs, &path, Some(subset.clone()), false);
        let mut screen = Vec::new();
        let outcome = s.run("y\nn\ngibberish\n\nmaybe\nn\nn\n\nq\n".as_bytes(), &mut screen).unwrap();
        assert_eq!(outcome, SessionOutcome { labeled: 2, remaining: 4, complete: false });
        assert!(String::from_utf8(screen).unwrap().contains("Please answer y or n."));

        let mut s = open(&recs, &path, Some(subset.clone()), false);
        assert_eq!(s.cursor(), 2);
        let answers = "n\ny\nlooks inferred\n".repeat(4);
        let outcome = s.run(answers.as_bytes(), Vec::new()).unwrap();
        assert!(outcome.complete);

        let file = read_label_file(&path).unwrap();
        assert_eq!(file.labels().len(), 6);
        assert!(file.labels().iter().all(|l| subset.contains(&l.record_id)));
        assert_eq!(file.lines[0].note.as_deref(), Some("gibberish"));
        assert!(file.lines[0].over_praise && !file.lines[0].over_inference);
    }

    #[test]
    fn complete_file_needs_amend() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r1.jsonl");
        let recs = runs();
        let subset = vec!["multi:101".to_string()];
        open(&recs, &path, Some(subset.clone()), false).run("n\nn\n\n".as_bytes(), Vec::new()).unwrap();
        let again = AnnotationSession::open(
            &recs,
            vec![],
            "r1",
            true,
            Some((subset.clone(), Selection::Explicit)),
            &path,
            false,
        );
        assert!(matches!(again, Err(AnnotationError::AlreadyComplete(_))));

        let mut s = open(&recs, &path, Some(subset), true);
        s.run("y\nn\n\n".as_bytes(), Vec::new()).unwrap();
        let file = read_label_file(&path).unwrap();
        assert_eq!(file.lines.len(), 2);
        assert!(file.labels()[0].over_praise);
    }

    #[test]
    fn unknown_id_and_foreign_file_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r1.jsonl");
        let recs = runs();
        let bad = AnnotationSession::open(
            &recs,
            vec![],
            "r1",
            true,
            Some((vec!["multi:999".into()], Selection::Explicit)),
            &path,
            false,
        );
        assert!(matches!(bad, Err(AnnotationError::UnknownRecord(_))));
        open(&recs, &path, None, false);
        let other = AnnotationSession::open(&recs, vec![], "r2", true, None, &path, false);
        assert!(matches!(other, Err(AnnotationError::HeaderMismatch { .. })));
    }

    #[test]
    fn empty_subset_gives_header_only_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r1.jsonl");
        let recs = runs();
        let mut s =
            AnnotationSession::open(&recs, vec![], "r1", true, Some((vec![], seeded_selection(0, 1))), &path, false)
                .unwrap();
        assert!(s.run("".as_bytes(), Vec::new()).unwrap().complete);
        let file = read_label_file(&path).unwrap();
        assert!(file.lines.is_empty());
        assert!(file.header.subset.is_empty());
    }

    #[test]
    fn unblind_card_names_the_system() {
        let card = render_card(&record("7", RunMode::Multi), 1, 1, false);
        assert!(card.contains("System: multi-agent"));
    }

    proptest! {
        #[test]
        fn blind_cards_leak_no_mode(
            response in "[a-z ,.]{0,80}",
            feedback in "[a-z ,.*:\n]{1,200}",
            multi in any::<bool>(),
        ) {
            prop_assume!(!response.contains("single") && !response.contains("multi"));
            prop_assume!(!feedback.contains("single") && !feedback.contains("multi"));
            let mut r = record("42", if multi { RunMode::Multi } else { RunMode::Single });
            r.response_text = response;
            r.final_feedback = crate::model::FeedbackDocument::from_text(feedback);
            let card = render_card(&r, 3, 72, true).to_lowercase();
            prop_assert!(!card.contains("single"));
            prop_assert!(!card.contains("multi"));
            prop_assert!(!card.contains(&r.backend_fingerprint));
        }
    }
}
