use std::collections::BTreeSet;

use crate::model::{scan_headers, FeedbackDocument, IssueFlag, ValidationVerdict};

/// The phrase Agent 2 is told to say when no revision is needed.
pub const SENTINEL: &str = "the feedback now is good enough";

pub const PARSE_WARNING: &str =
    "Agent 2 asked for a revision but no feedback section header was found; needs human review";

const ISSUE_STEMS: &[(&str, IssueFlag)] = &[
    ("over prais", IssueFlag::OverPraise),
    ("overprais", IssueFlag::OverPraise),
    ("over infer", IssueFlag::OverInference),
    ("overinfer", IssueFlag::OverInference),
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("Agent 2 output is empty")]
pub struct EmptyVerdict;

/// Lowercase alphanumerics with every other run collapsed to one space,
/// plus the byte offset in the source for each output byte.
fn normalize(text: &str) -> (String, Vec<usize>) {
    let mut norm = String::with_capacity(text.len());
    let mut map = Vec::with_capacity(text.len());
    let mut gap = true;
    for (at, c) in text.char_indices() {
        if c.is_alphanumeric() {
            for lc in c.to_lowercase() {
                let before = norm.len();
                norm.push(lc);
                map.extend(std::iter::repeat_n(at, norm.len() - before));
            }
            gap = false;
        } else if !gap {
            norm.push(' ');
            map.push(at);
            gap = true;
        }
    }
    (norm, map)
}

/// Byte offset in `text` where the sentinel phrase first starts.
pub fn find_sentinel(text: &str) -> Option<usize> {
    let (norm, map) = normalize(text);
    let mut from = 0;
    while let Some(i) = norm[from..].find(SENTINEL).map(|i| i + from) {
        let end = i + SENTINEL.len();
        let bounded_left = i == 0 || norm.as_bytes()[i - 1] == b' ';
        let bounded_right = end == norm.len() || norm.as_bytes()[end] == b' ';
        if bounded_left && bounded_right {
            return Some(map[i]);
        }
        from = i + 1;
    }
    None
}

/// Issue flags whose keyword stems occur in `text`.
pub fn scan_issues(text: &str) -> BTreeSet<IssueFlag> {
    let (norm, _) = normalize(text);
    ISSUE_STEMS.iter().filter(|(stem, _)| norm.contains(stem)).map(|&(_, flag)| flag).collect()
}

/// Splits Agent 2 output into a verdict.
///
/// Good enough when the sentinel appears with no section header after it.
/// Otherwise the revision starts at the first header (after the sentinel,
/// if there is one) and everything before it is the reasons text. With no
/// header at all, the whole text becomes the revision and the verdict is
/// flagged for review.
pub fn parse_verdict(raw: &str) -> Result<ValidationVerdict, EmptyVerdict> {
    if raw.is_empty() {
        return Err(EmptyVerdict);
    }
    let headers = scan_headers(raw);
    let sentinel = find_sentinel(raw);
    let start = match sentinel {
        Some(pos) => match headers.iter().find(|h| h.content_start > pos) {
            None => return Ok(ValidationVerdict::good_enough(raw[..pos].trim())),
            Some(h) => Some(h.line_start),
        },
        None => headers.first().map(|h| h.line_start),
    };
    let verdict = match start {
        Some(at) => {
            let reasons = raw[..at].trim();
            let revised = FeedbackDocument::from_text(raw[at..].trim());
            ValidationVerdict::revised(reasons, scan_issues(reasons), revised)
        }
        None => ValidationVerdict::revised(raw.trim(), scan_issues(raw), FeedbackDocument::from_text(raw))
            .map(|v| v.with_parse_warning(PARSE_WARNING)),
    };
    Ok(verdict.expect("revision text is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Decision, FeedbackSection};
    use proptest::prelude::*;

    #[test]
    fn sentinel_alone_is_good_enough() {
        let v = parse_verdict("STEP 1: … no issues. STEP 2: The feedback now is good enough").unwrap();
        assert_eq!(v.decision(), Decision::GoodEnough);
        assert_eq!(v.reasons(), "STEP 1: … no issues. STEP 2:");
        assert!(v.revised_feedback().is_none());
        assert!(v.detected_issues().is_empty());
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(parse_verdict(""), Err(EmptyVerdict));
    }

    #[test]
    fn over_praise_then_decorated_revision() {
        let raw = "STEP 1: Given the gibberish response, this is over-praised.\nSTEP 2:\n**Aim of the Item** \nExplain particle motion.\n**Strength:** You tried.";
        let v = parse_verdict(raw).unwrap();
        assert_eq!(v.decision(), Decision::Revised);
        assert_eq!(v.detected_issues().iter().copied().collect::<Vec<_>>(), [IssueFlag::OverPraise]);
        let doc = v.revised_feedback().unwrap();
        assert!(doc.raw_text.starts_with("**Aim of the Item**"));
        assert_eq!(doc.section(FeedbackSection::Strength), Some("You tried."));
        assert!(v.reasons().ends_with("STEP 2:"));
    }

    #[test]
    fn header_after_sentinel_means_revision() {
        let raw = "The feedback now is good enough, but here is a cleaner version.\nStrength: concise.";
        let v = parse_verdict(raw).unwrap();
        assert_eq!(v.decision(), Decision::Revised);
        assert_eq!(v.revised_feedback().unwrap().raw_text, "Strength: concise.");
    }

    #[test]
    fn headers_only_before_sentinel_stay_good_enough() {
        let raw = "Strength: the feedback names a real strength.\nSTEP 2: “The feedback now is good enough.”";
        assert_eq!(parse_verdict(raw).unwrap().decision(), Decision::GoodEnough);
    }

    #[test]
    fn sentinel_needs_word_boundaries_and_exact_words() {
        assert!(find_sentinel("the feedback now is good enoughly").is_none());
        assert!(find_sentinel("the feedback now is not good enough").is_none());
        assert_eq!(find_sentinel("x THE-FEEDBACK  now, is GOOD enough!"), Some(2));
    }

    #[test]
    fn no_header_and_no_sentinel_is_a_parse_warning() {
        let v = parse_verdict("I would soften the praise; it overinfers.").unwrap();
        assert_eq!(v.decision(), Decision::Revised);
        assert!(v.needs_review());
        assert_eq!(v.detected_issues().iter().copied().collect::<Vec<_>>(), [IssueFlag::OverInference]);
    }

    #[test]
    fn whitespace_only_is_a_parse_warning() {
        assert!(parse_verdict(" \n").unwrap().needs_review());
    }

    #[test]
    fn issue_stems_tolerate_spacing_and_hyphens() {
        let both = scan_issues("Over – praise and OVER‐INFERENCE");
        assert_eq!(both.len(), 2);
        assert!(scan_issues("praise over time").is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn total_on_non_empty_text(raw in "(?s).{1,300}") {
            let v = parse_verdict(&raw).unwrap();
            if v.decision() == Decision::Revised {
                prop_assert!(v.revised_feedback().is_some());
            }
        }

        #[test]
        fn total_on_header_heavy_text(
            parts in proptest::collection::vec(
                prop_oneof![
                    Just("**Strength:**".to_string()),
                    Just("The feedback now is good enough".to_string()),
                    Just("over-praise".to_string()),
                    Just("\n".to_string()),
                    "[ -~]{0,12}",
                ],
                1..12,
            )
        ) {
            let raw = parts.concat();
            prop_assume!(!raw.is_empty());
            let v = parse_verdict(&raw).unwrap();
            prop_assert!(serde_json::to_string(&v).is_ok());
        }
    }
}
