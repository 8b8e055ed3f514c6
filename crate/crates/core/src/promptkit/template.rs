use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::Deserialize;

use super::PromptError;
use crate::digest::sha256_parts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, Deserialize)]
pub enum TemplateKind {
    Agent1,
    Agent2,
}

impl TemplateKind {
    /// The standard sections this kind must contain, in order.
    pub fn standard_sections(self) -> &'static [SectionTag] {
        use SectionTag::*;
        match self {
            Self::Agent1 => {
                &[Role, Task, Item, ScoringRubric, StudentResponse, TeachingContext, LearningGoal, FeedbackCriteria]
            }
            Self::Agent2 => &[
                Role,
                Task,
                Item,
                ScoringRubric,
                StudentResponse,
                TeachingContext,
                LearningGoal,
                FeedbackFromAgent1,
                PossibleProblems,
            ],
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Agent1 => "Agent1",
            Self::Agent2 => "Agent2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SectionTag {
    Role,
    Task,
    Item,
    ScoringRubric,
    StudentResponse,
    TeachingContext,
    LearningGoal,
    FeedbackCriteria,
    FeedbackFromAgent1,
    PossibleProblems,
    Extension(String),
}

const STANDARD_NAMES: &[(&str, SectionTag)] = &[
    ("Role", SectionTag::Role),
    ("Task", SectionTag::Task),
    ("ITEM", SectionTag::Item),
    ("SCORING RUBRIC 1", SectionTag::ScoringRubric),
    ("STUDENT RESPONSE", SectionTag::StudentResponse),
    ("TEACHING AND LEARNING CONTEXT", SectionTag::TeachingContext),
    ("3D LEARNING GOAL", SectionTag::LearningGoal),
    ("CRITERIA FOR THE FEEDBACK", SectionTag::FeedbackCriteria),
    ("FEEDBACK FROM AGENT1", SectionTag::FeedbackFromAgent1),
    ("POSSIBLE PROBLEM OF FEEDBACK", SectionTag::PossibleProblems),
];

impl SectionTag {
    /// Maps a standard section name; anything else becomes an extension.
    pub fn from_name(name: &str) -> Self {
        let name = name.trim();
        STANDARD_NAMES
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, tag)| tag.clone())
            .unwrap_or_else(|| SectionTag::Extension(name.to_string()))
    }

    pub fn name(&self) -> &str {
        match self {
            SectionTag::Extension(name) => name,
            tag => STANDARD_NAMES.iter().find(|(_, t)| t == tag).map(|(n, _)| *n).expect("standard tag has a name"),
        }
    }

    pub fn is_extension(&self) -> bool {
        matches!(self, SectionTag::Extension(_))
    }

    /// The line that opens this section in an assembled prompt.
    pub fn header_line(&self) -> String {
        match self {
            SectionTag::Role => "Role:".to_string(),
            SectionTag::Task => "TASK:".to_string(),
            tag => format!("<<{}>>", tag.name()),
        }
    }
}

impl fmt::Display for SectionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a placeholder's value comes from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    ItemId,
    ProblemStatement,
    Question,
    RubricRules,
    ProficiencyLogic,
    TeachingContext,
    CoreConcept,
    CrosscuttingConcept,
    Practice,
    FeedbackCriteria,
    PossibleProblems,
    ContextExtension(String),
    ResponseId,
    ResponseText,
    ScoreLevel,
    Agent1Feedback,
    PreviousFeedback,
    Critique,
}

impl Source {
    pub fn parse(path: &str) -> Result<Self, PromptError> {
        let path = path.trim();
        let source = match path {
            "context.item_id" => Self::ItemId,
            "context.problem_statement" => Self::ProblemStatement,
            "context.question" => Self::Question,
            "context.rubric_rules" => Self::RubricRules,
            "context.proficiency_logic" => Self::ProficiencyLogic,
            "context.teaching_context" => Self::TeachingContext,
            "context.learning_goals.core_concept" => Self::CoreConcept,
            "context.learning_goals.crosscutting_concept" => Self::CrosscuttingConcept,
            "context.learning_goals.practice" => Self::Practice,
            "context.feedback_criteria" => Self::FeedbackCriteria,
            "context.possible_problems" => Self::PossibleProblems,
            "response.id" => Self::ResponseId,
            "response.text" => Self::ResponseText,
            "response.score_level" => Self::ScoreLevel,
            "feedback.agent1" => Self::Agent1Feedback,
            "revision.previous_feedback" => Self::PreviousFeedback,
            "revision.critique" => Self::Critique,
            other => match other.strip_prefix("context.extensions.") {
                Some(key) if !key.is_empty() => Self::ContextExtension(key.to_string()),
                _ => return Err(PromptError::UnknownSource(other.to_string())),
            },
        };
        Ok(source)
    }

    pub fn path(&self) -> String {
        match self {
            Self::ItemId => "context.item_id".into(),
            Self::ProblemStatement => "context.problem_statement".into(),
            Self::Question => "context.question".into(),
            Self::RubricRules => "context.rubric_rules".into(),
            Self::ProficiencyLogic => "context.proficiency_logic".into(),
            Self::TeachingContext => "context.teaching_context".into(),
            Self::CoreConcept => "context.learning_goals.core_concept".into(),
            Self::CrosscuttingConcept => "context.learning_goals.crosscutting_concept".into(),
            Self::Practice => "context.learning_goals.practice".into(),
            Self::FeedbackCriteria => "context.feedback_criteria".into(),
            Self::PossibleProblems => "context.possible_problems".into(),
            Self::ContextExtension(key) => format!("context.extensions.{key}"),
            Self::ResponseId => "response.id".into(),
            Self::ResponseText => "response.text".into(),
            Self::ScoreLevel => "response.score_level".into(),
            Self::Agent1Feedback => "feedback.agent1".into(),
            Self::PreviousFeedback => "revision.previous_feedback".into(),
            Self::Critique => "revision.critique".into(),
        }
    }

    /// Text written by students or models; fenced when it could forge a header.
    pub fn is_untrusted(&self) -> bool {
        matches!(self, Self::ResponseText | Self::Agent1Feedback | Self::PreviousFeedback | Self::Critique)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct TemplateSection {
    pub tag: SectionTag,
    pub body: String,
}

/// A parsed, validated prompt template. Immutable once loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateKind,
    pub role_block: String,
    pub task_block: String,
    /// Standard sections in canonical order, then extensions.
    pub section_order: Vec<SectionTag>,
    pub placeholder_map: BTreeMap<String, Source>,
    pub(crate) sections: Vec<TemplateSection>,
    digest: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    name: TemplateKind,
    section_order: Vec<String>,
    #[serde(default)]
    placeholders: BTreeMap<String, String>,
}

fn header_tag(line: &str) -> Option<SectionTag> {
    let line = line.trim();
    if line.eq_ignore_ascii_case("role:") {
        return Some(SectionTag::Role);
    }
    if line.eq_ignore_ascii_case("task:") {
        return Some(SectionTag::Task);
    }
    let inner = line.strip_prefix("<<")?.strip_suffix(">>")?;
    Some(SectionTag::from_name(inner))
}

/// True when a line would be read as a section header.
pub(crate) fn looks_like_header(line: &str) -> bool {
    header_tag(line).is_some()
}

/// Iterates `{{name}}` placeholders as (byte range, name).
pub(crate) fn placeholders(body: &str) -> Vec<(std::ops::Range<usize>, &str)> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(open) = body[from..].find("{{").map(|i| i + from) {
        let Some(close) = body[open + 2..].find("}}").map(|i| i + open + 2) else {
            break;
        };
        let name = body[open + 2..close].trim();
        if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            out.push((open..close + 2, name));
            from = close + 2;
        } else {
            from = open + 2;
        }
    }
    out
}

fn split_sections(body: &str) -> Result<Vec<TemplateSection>, PromptError> {
    let mut sections: Vec<TemplateSection> = Vec::new();
    let mut current: Option<(SectionTag, Vec<&str>)> = None;
    for line in body.lines() {
        if let Some(tag) = header_tag(line) {
            if let Some((tag, lines)) = current.take() {
                sections.push(TemplateSection { tag, body: lines.join("\n").trim_end().to_string() });
            }
            current = Some((tag, Vec::new()));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line);
        } else if !line.trim().is_empty() {
            return Err(PromptError::TextOutsideSection);
        }
    }
    if let Some((tag, lines)) = current {
        sections.push(TemplateSection { tag, body: lines.join("\n").trim_end().to_string() });
    }
    Ok(sections)
}

fn tag_list(tags: &[SectionTag]) -> String {
    tags.iter().map(SectionTag::name).collect::<Vec<_>>().join(", ")
}

impl PromptTemplate {
    /// Builds a template from a body and its TOML manifest.
    pub fn from_parts(body: &str, manifest: &str) -> Result<Self, PromptError> {
        let manifest: Manifest = toml::from_str(manifest).map_err(|e| PromptError::Manifest(e.to_string()))?;
        let kind = manifest.name;

        let mut declared: Vec<SectionTag> = Vec::new();
        for name in &manifest.section_order {
            let tag = SectionTag::from_name(name);
            if declared.contains(&tag) {
                return Err(PromptError::DuplicateSection(tag.name().to_string()));
            }
            declared.push(tag);
        }
        let standard: Vec<SectionTag> = declared.iter().filter(|t| !t.is_extension()).cloned().collect();
        if standard != kind.standard_sections() {
            return Err(PromptError::SectionOrder {
                kind,
                expected: tag_list(kind.standard_sections()),
                found: tag_list(&standard),
            });
        }
        let extensions: Vec<SectionTag> = declared.iter().filter(|t| t.is_extension()).cloned().collect();
        let section_order: Vec<SectionTag> = standard.into_iter().chain(extensions).collect();

        let parsed = split_sections(body)?;
        let mut seen = BTreeSet::new();
        for section in &parsed {
            if !seen.insert(section.tag.clone()) {
                return Err(PromptError::DuplicateSection(section.tag.name().to_string()));
            }
            if !section_order.contains(&section.tag) {
                return Err(PromptError::UnknownSection(section.tag.name().to_string()));
            }
        }
        if let Some(missing) = section_order.iter().find(|t| !seen.contains(*t)) {
            return Err(PromptError::MissingSection(missing.name().to_string()));
        }

        let mut placeholder_map = BTreeMap::new();
        for (name, path) in &manifest.placeholders {
            placeholder_map.insert(name.clone(), Source::parse(path)?);
        }
        for section in &parsed {
            for (_, name) in placeholders(&section.body) {
                if !placeholder_map.contains_key(name) {
                    return Err(PromptError::UnmappedPlaceholder {
                        placeholder: name.to_string(),
                        section: section.tag.name().to_string(),
                    });
                }
            }
        }

        let sections: Vec<TemplateSection> = section_order
            .iter()
            .map(|tag| parsed.iter().find(|s| &s.tag == tag).cloned().expect("checked above"))
            .collect();
        let block =
            |tag: SectionTag| sections.iter().find(|s| s.tag == tag).map(|s| s.body.clone()).unwrap_or_default();
        let role_block = block(SectionTag::Role);
        let task_block = block(SectionTag::Task);

        Ok(Self {
            name: kind,
            role_block,
            task_block,
            section_order,
            placeholder_map,
            sections,
            digest: sha256_parts([
                body.as_bytes(),
                toml_bytes(&manifest.section_order, &manifest.placeholders).as_slice(),
            ]),
        })
    }

    pub fn bundled(kind: TemplateKind) -> Self {
        let (body, manifest) = match kind {
            TemplateKind::Agent1 => {
                (include_str!("../../templates/agent1.txt"), include_str!("../../templates/agent1.toml"))
            }
            TemplateKind::Agent2 => {
                (include_str!("../../templates/agent2.txt"), include_str!("../../templates/agent2.toml"))
            }
        };
        Self::from_parts(body, manifest).expect("bundled template is valid")
    }

    /// The Agent 1 variant that takes an Agent 2 critique (loopback rounds).
    pub fn bundled_revision() -> Self {
        Self::from_parts(
            include_str!("../../templates/agent1_revision.txt"),
            include_str!("../../templates/agent1_revision.toml"),
        )
        .expect("bundled revision template is valid")
    }

    /// Content digest of the body and its declared layout.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn sources(&self) -> impl Iterator<Item = &Source> {
        self.placeholder_map.values()
    }
}

// Digest over the manifest's meaningful content, independent of its formatting.
fn toml_bytes(order: &[String], placeholders: &BTreeMap<String, String>) -> Vec<u8> {
    let mut out = order.join("\n").into_bytes();
    out.push(0);
    for (k, v) in placeholders {
        out.extend_from_slice(k.as_bytes());
        out.push(b'=');
        out.extend_from_slice(v.as_bytes());
        out.push(b'\n');
    }
    out
}

/// Loads a template body and its sidecar manifest (`<stem>.toml`).
pub fn load_template(path: &Path) -> Result<PromptTemplate, PromptError> {
    let read =
        |p: &Path| std::fs::read_to_string(p).map_err(|source| PromptError::Io { path: p.to_path_buf(), source });
    let body = read(path)?;
    let manifest = read(&path.with_extension("toml"))?;
    PromptTemplate::from_parts(&body, &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    const A1_BODY: &str = include_str!("../../templates/agent1.txt");
    const A1_MANIFEST: &str = include_str!("../../templates/agent1.toml");

    #[test]
    fn bundled_agent1_has_the_eight_sections_in_order() {
        let t = PromptTemplate::bundled(TemplateKind::Agent1);
        let names: Vec<&str> = t.section_order.iter().map(SectionTag::name).collect();
        assert_eq!(
            names,
            [
                "Role",
                "Task",
                "ITEM",
                "SCORING RUBRIC 1",
                "STUDENT RESPONSE",
                "TEACHING AND LEARNING CONTEXT",
                "3D LEARNING GOAL",
                "CRITERIA FOR THE FEEDBACK"
            ]
        );
        assert!(t.role_block.starts_with("You are a middle school science teacher"));
        assert!(t.task_block.contains("suggest the student with feedback"));
    }

    #[test]
    fn bundled_agent2_swaps_criteria_for_feedback_and_problems() {
        let t = PromptTemplate::bundled(TemplateKind::Agent2);
        assert!(!t.section_order.contains(&SectionTag::FeedbackCriteria));
        assert!(t.section_order.ends_with(&[SectionTag::FeedbackFromAgent1, SectionTag::PossibleProblems]));
        PromptTemplate::bundled_revision();
    }

    #[test]
    fn duplicate_student_response_section_is_rejected() {
        let body = A1_BODY.replace("<<TEACHING AND LEARNING CONTEXT>>", "<<STUDENT RESPONSE>>");
        let err = PromptTemplate::from_parts(&body, A1_MANIFEST).unwrap_err();
        assert!(matches!(err, PromptError::DuplicateSection(ref s) if s == "STUDENT RESPONSE"), "{err}");
    }

    #[test]
    fn undeclared_section_is_unknown() {
        let body = format!("{A1_BODY}\n<<SCHOOL POLICY>>\nbe kind\n");
        let err = PromptTemplate::from_parts(&body, A1_MANIFEST).unwrap_err();
        assert!(matches!(err, PromptError::UnknownSection(ref s) if s == "SCHOOL POLICY"), "{err}");
    }

    #[test]
    fn extension_section_is_appended_after_standard_order() {
        // declared in the middle of the manifest, placed first in the body
        let body = format!("<<SCHOOL POLICY>>\n{{{{policy}}}}\n\n{A1_BODY}");
        let manifest = A1_MANIFEST
            .replace("\"ITEM\",", "\"ITEM\",\n    \"SCHOOL POLICY\",")
            .replace("[placeholders]", "[placeholders]\npolicy = \"context.extensions.school_policy\"");
        let t = PromptTemplate::from_parts(&body, &manifest).unwrap();
        assert_eq!(t.section_order.last(), Some(&SectionTag::Extension("SCHOOL POLICY".into())));
        assert_eq!(t.section_order.len(), 9);
    }

    #[test]
    fn placeholder_without_mapping_is_rejected() {
        let body = A1_BODY.replace("{{question}}", "{{question}} {{grade}}");
        let err = PromptTemplate::from_parts(&body, A1_MANIFEST).unwrap_err();
        assert!(matches!(err, PromptError::UnmappedPlaceholder { ref placeholder, .. } if placeholder == "grade"));
    }

    #[test]
    fn wrong_standard_order_is_rejected() {
        let manifest = A1_MANIFEST
            .replace("    \"ITEM\",\n", "")
            .replace("    \"STUDENT RESPONSE\",\n", "    \"STUDENT RESPONSE\",\n    \"ITEM\",\n");
        let err = PromptTemplate::from_parts(A1_BODY, &manifest).unwrap_err();
        assert!(matches!(err, PromptError::SectionOrder { .. }), "{err}");
    }

    #[test]
    fn missing_section_body_is_reported() {
        let body = A1_BODY.split("<<CRITERIA FOR THE FEEDBACK>>").next().unwrap();
        let err = PromptTemplate::from_parts(body, A1_MANIFEST).unwrap_err();
        assert!(matches!(err, PromptError::MissingSection(ref s) if s == "CRITERIA FOR THE FEEDBACK"));
    }

    #[test]
    fn unknown_source_path_is_rejected() {
        let manifest = A1_MANIFEST.replace("\"context.question\"", "\"context.nope\"");
        assert!(matches!(PromptTemplate::from_parts(A1_BODY, &manifest), Err(PromptError::UnknownSource(_))));
    }

    #[test]
    fn text_before_first_header_is_rejected() {
        let body = format!("stray preamble\n{A1_BODY}");
        assert!(matches!(PromptTemplate::from_parts(&body, A1_MANIFEST), Err(PromptError::TextOutsideSection)));
    }

    #[test]
    fn load_template_reads_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a1.txt"), A1_BODY).unwrap();
        let missing = load_template(&dir.path().join("a1.txt")).unwrap_err();
        assert!(matches!(missing, PromptError::Io { .. }));
        std::fs::write(dir.path().join("a1.toml"), A1_MANIFEST).unwrap();
        let t = load_template(&dir.path().join("a1.txt")).unwrap();
        assert_eq!(t, PromptTemplate::bundled(TemplateKind::Agent1));
    }

    #[test]
    fn placeholder_scanner_skips_non_identifiers() {
        let found: Vec<&str> = placeholders("{{a}} {{ b_2 }} {{not valid}} {{").into_iter().map(|(_, n)| n).collect();
        assert_eq!(found, ["a", "b_2"]);
    }
}
