use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Upper bound on feedback length requested by the Agent 1 prompt.
pub const WORD_LIMIT: usize = 300;

/// The five named parts a feedback text is asked to contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeedbackSection {
    #[serde(rename = "Aim of the Item")]
    AimOfTheItem,
    #[serde(rename = "Your Performance")]
    YourPerformance,
    #[serde(rename = "Strength")]
    Strength,
    #[serde(rename = "Area for improvement")]
    AreaForImprovement,
    #[serde(rename = "Suggestions for further learning")]
    SuggestionsForFurtherLearning,
}

impl FeedbackSection {
    pub const ALL: [FeedbackSection; 5] = [
        Self::AimOfTheItem,
        Self::YourPerformance,
        Self::Strength,
        Self::AreaForImprovement,
        Self::SuggestionsForFurtherLearning,
    ];

    pub fn title(self) -> &'static str {
        match self {
            Self::AimOfTheItem => "Aim of the Item",
            Self::YourPerformance => "Your Performance",
            Self::Strength => "Strength",
            Self::AreaForImprovement => "Area for improvement",
            Self::SuggestionsForFurtherLearning => "Suggestions for further learning",
        }
    }
}

impl fmt::Display for FeedbackSection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

// Longest spellings first so "strengths" wins over "strength".
const HEADER_SPELLINGS: &[(&str, FeedbackSection)] = &[
    ("suggestions for further learning", FeedbackSection::SuggestionsForFurtherLearning),
    ("suggestion for further learning", FeedbackSection::SuggestionsForFurtherLearning),
    ("areas for improvement", FeedbackSection::AreaForImprovement),
    ("areas of improvement", FeedbackSection::AreaForImprovement),
    ("area for improvement", FeedbackSection::AreaForImprovement),
    ("area of improvement", FeedbackSection::AreaForImprovement),
    ("aim of the item", FeedbackSection::AimOfTheItem),
    ("aim of this item", FeedbackSection::AimOfTheItem),
    ("your performance", FeedbackSection::YourPerformance),
    ("strengths", FeedbackSection::Strength),
    ("strength", FeedbackSection::Strength),
];

/// A section header found at the start of a line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeaderMatch {
    pub section: FeedbackSection,
    /// Byte offset of the start of the header's line.
    pub line_start: usize,
    /// Byte offset where the section's own text begins.
    pub content_start: usize,
}

fn is_decoration(c: char) -> bool {
    matches!(c, '*' | '_' | '#' | '-' | '>' | '•' | '`') || c.is_whitespace()
}

/// Matches a single line (no newline) against the header spellings.
/// Returns the section and the byte offset inside the line where content
/// starts.
fn match_header_line(line: &str) -> Option<(FeedbackSection, usize)> {
    let mut rest = line.trim_start_matches(is_decoration);
    // "1." / "2)" style numbering
    let digits = rest.len() - rest.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let after = &rest[digits..];
        if let Some(stripped) = after.strip_prefix('.').or_else(|| after.strip_prefix(')')) {
            rest = stripped.trim_start_matches(is_decoration);
        }
    }
    for &(spelling, section) in HEADER_SPELLINGS {
        let Some(head) = rest.get(..spelling.len()) else {
            continue;
        };
        if !head.eq_ignore_ascii_case(spelling) {
            continue;
        }
        let after = &rest[spelling.len()..];
        let trimmed = after.trim_start_matches(['*', '_', ' ', '\t']);
        if let Some(after_colon) = trimmed.strip_prefix(':') {
            let content = after_colon.trim_start_matches(['*', '_']);
            return Some((section, line.len() - content.len()));
        }
        if trimmed.trim().is_empty() {
            return Some((section, line.len()));
        }
    }
    None
}

/// Finds every line that opens one of the five feedback sections.
///
/// Matching is case-insensitive and tolerates markdown decoration such as
/// `**Strength:**`, `## Strength`, or `- Strength:`.
pub fn scan_headers(text: &str) -> Vec<HeaderMatch> {
    let mut found = Vec::new();
    let mut offset = 0;
    for raw_line in text.split_inclusive('\n') {
        let line = raw_line.trim_end_matches(['\n', '\r']);
        if let Some((section, content_at)) = match_header_line(line) {
            found.push(HeaderMatch { section, line_start: offset, content_start: offset + content_at });
        }
        offset += raw_line.len();
    }
    found
}

/// Model-written feedback plus whatever named sections could be recognized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFeedback")]
pub struct FeedbackDocument {
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sections: Option<BTreeMap<FeedbackSection, String>>,
    pub word_count: usize,
}

#[derive(Deserialize)]
struct RawFeedback {
    raw_text: String,
    #[serde(default)]
    sections: Option<BTreeMap<FeedbackSection, String>>,
    word_count: usize,
}

impl TryFrom<RawFeedback> for FeedbackDocument {
    type Error = ModelError;

    fn try_from(raw: RawFeedback) -> Result<Self, Self::Error> {
        let doc = FeedbackDocument { raw_text: raw.raw_text, sections: raw.sections, word_count: raw.word_count };
        doc.validate()?;
        Ok(doc)
    }
}

impl FeedbackDocument {
    pub fn from_text(raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let sections = extract_sections(&raw_text);
        let word_count = count_words(&raw_text);
        Self { raw_text, sections, word_count }
    }

    pub fn is_blank(&self) -> bool {
        self.raw_text.trim().is_empty()
    }

    pub fn exceeds_word_limit(&self) -> bool {
        self.word_count > WORD_LIMIT
    }

    pub fn section(&self, section: FeedbackSection) -> Option<&str> {
        self.sections.as_ref()?.get(&section).map(String::as_str)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let expected = count_words(&self.raw_text);
        if self.word_count != expected {
            return Err(ModelError::Feedback(format!(
                "word_count {} does not match text ({expected})",
                self.word_count
            )));
        }
        if let Some(sections) = &self.sections {
            for (name, body) in sections {
                if !self.raw_text.contains(body.as_str()) {
                    return Err(ModelError::Feedback(format!(
                        "section `{name}` is not a substring of the feedback text"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Whitespace-delimited token count (Unicode whitespace).
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Splits feedback text at recognized headers. The first occurrence of a
/// section wins; `None` when no header is recognized.
pub fn extract_sections(text: &str) -> Option<BTreeMap<FeedbackSection, String>> {
    let headers = scan_headers(text);
    if headers.is_empty() {
        return None;
    }
    let mut sections = BTreeMap::new();
    for (i, header) in headers.iter().enumerate() {
        let end = headers.get(i + 1).map_or(text.len(), |next| next.line_start);
        let body = text[header.content_start..end].trim();
        sections.entry(header.section).or_insert_with(|| body.to_string());
    }
    Some(sections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DECORATED: &str = "**Aim of the Item:**\nThis item asks you to explain particle motion.\n\n\
**Your Performance:**\n**Strength:**\nYour response attempted to address the question.\n\
**Area for improvement:**\nAdd detail about how particles move.\n\
**Suggestions for further learning:**\nTry heating water and watching food coloring spread.\n";

    #[test]
    fn decorated_headers_are_extracted() {
        let doc = FeedbackDocument::from_text(DECORATED);
        let sections = doc.sections.as_ref().expect("sections");
        assert_eq!(sections.len(), 5);
        assert_eq!(doc.section(FeedbackSection::Strength), Some("Your response attempted to address the question."));
        assert_eq!(doc.section(FeedbackSection::YourPerformance), Some(""));
        doc.validate().unwrap();
    }

    #[test]
    fn inline_content_after_colon() {
        let text = "Strength: good start.\n- area for improvement: more detail\n";
        let doc = FeedbackDocument::from_text(text);
        assert_eq!(doc.section(FeedbackSection::Strength), Some("good start."));
        assert_eq!(doc.section(FeedbackSection::AreaForImprovement), Some("more detail"));
    }

    #[test]
    fn prose_that_starts_with_a_section_word_is_not_a_header() {
        let text = "Strengthening your model would help.\nStrength section praises the attempt.\n";
        assert!(scan_headers(text).is_empty());
        assert!(FeedbackDocument::from_text(text).sections.is_none());
    }

    #[test]
    fn numbered_and_hash_headers() {
        let text = "## 1. Aim of the Item\nabc\n3) Suggestions for further learning -\n";
        let found: Vec<_> = scan_headers(text).into_iter().map(|h| h.section).collect();
        assert_eq!(found, vec![FeedbackSection::AimOfTheItem]);
        let text = "## 1. Aim of the Item\nabc\n3) Suggestions for further learning\nxyz";
        let found: Vec<_> = scan_headers(text).into_iter().map(|h| h.section).collect();
        assert_eq!(found, vec![FeedbackSection::AimOfTheItem, FeedbackSection::SuggestionsForFurtherLearning]);
    }

    #[test]
    fn word_count_uses_unicode_whitespace() {
        assert_eq!(count_words(""), 0);
        assert_eq!(count_words("  one\u{00a0}two\tthree\nfour "), 4);
        let doc = FeedbackDocument::from_text("word ".repeat(301));
        assert_eq!(doc.word_count, 301);
        assert!(doc.exceeds_word_limit());
        assert!(!FeedbackDocument::from_text("word ".repeat(300)).exceeds_word_limit());
    }

    #[test]
    fn deserialization_rejects_bad_word_count() {
        let json = r#"{"raw_text":"a b c","word_count":2}"#;
        assert!(serde_json::from_str::<FeedbackDocument>(json).is_err());
        let json = r#"{"raw_text":"a b c","word_count":3,"sections":{"Strength":"zzz"}}"#;
        assert!(serde_json::from_str::<FeedbackDocument>(json).is_err());
    }

    proptest! {
        #[test]
        fn extraction_is_idempotent_and_sections_are_substrings(
            parts in proptest::collection::vec(
                prop_oneof![
                    Just("**Strength:**\n".to_string()),
                    Just("Aim of the Item\n".to_string()),
                    Just("- Area for improvement: ".to_string()),
                    "[a-zA-Z ,.!*:\n-]{0,40}",
                ],
                0..12,
            )
        ) {
            let text: String = parts.concat();
            let first = extract_sections(&text);
            let second = extract_sections(&text);
            prop_assert_eq!(&first, &second);
            let doc = FeedbackDocument::from_text(text.clone());
            prop_assert!(doc.validate().is_ok());
        }
    }
}
