//! Shared domain types. Nothing in here performs I/O or talks to a backend.

mod feedback;
mod record;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use feedback::{scan_headers, FeedbackDocument, FeedbackSection, HeaderMatch, WORD_LIMIT};
pub use record::{
    AgentRole, CallUsage, Decision, IssueFlag, RoundTrace, RunMode, RunRecord, TokenUsage, ValidationVerdict,
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown rubric rule label `{0}`")]
    UnknownRule(String),
    #[error("rubric does not declare rule `{0}`")]
    MissingRule(String),
    #[error("assessment context is incomplete: {0}")]
    IncompleteContext(String),
    #[error("duplicate rubric rule label `{0}`")]
    DuplicateRule(String),
    #[error("verdict invariant violated: {0}")]
    Verdict(String),
    #[error("run record invariant violated: {0}")]
    Record(String),
    #[error("feedback document invariant violated: {0}")]
    Feedback(String),
}

/// Human-assigned proficiency level of a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScoreLevel {
    Beginning,
    Proficient,
}

impl ScoreLevel {
    /// Matches a dataset label case-insensitively, ignoring surrounding whitespace.
    pub fn parse_label(label: &str) -> Option<Self> {
        let label = label.trim();
        if label.eq_ignore_ascii_case("beginning") {
            Some(Self::Beginning)
        } else if label.eq_ignore_ascii_case("proficient") {
            Some(Self::Proficient)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Beginning => "Beginning",
            Self::Proficient => "Proficient",
        }
    }
}

impl fmt::Display for ScoreLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentResponse {
    pub id: String,
    pub text: String,
    pub score_level: ScoreLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricRule {
    pub label: String,
    pub text: String,
}

/// The NGSS triad attached to an item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearningGoals {
    pub core_concept: String,
    pub crosscutting_concept: String,
    pub practice: String,
}

/// Everything about the assessment item that gets injected into prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentContext {
    pub item_id: String,
    pub problem_statement: String,
    pub question: String,
    pub rubric_rules: Vec<RubricRule>,
    /// Verbatim sentence describing how rules combine into a level.
    pub proficiency_logic: String,
    pub teaching_context: String,
    pub learning_goals: LearningGoals,
    /// Agent 1 only.
    #[serde(default)]
    pub feedback_criteria: String,
    /// Agent 2 only.
    #[serde(default)]
    pub possible_problems: String,
    /// Extra named texts that custom template sections can map onto.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extensions: BTreeMap<String, String>,
}

impl AssessmentContext {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.problem_statement.trim().is_empty() {
            return Err(ModelError::IncompleteContext("problem_statement is empty".into()));
        }
        if self.question.trim().is_empty() {
            return Err(ModelError::IncompleteContext("question is empty".into()));
        }
        if !self.rubric_rules.iter().any(|r| !r.text.trim().is_empty()) {
            return Err(ModelError::IncompleteContext("at least one non-empty rubric rule is required".into()));
        }
        let mut seen = BTreeSet::new();
        for rule in &self.rubric_rules {
            if rule.label.trim().is_empty() {
                return Err(ModelError::IncompleteContext("rubric rule with empty label".into()));
            }
            if !seen.insert(rule.label.as_str()) {
                return Err(ModelError::DuplicateRule(rule.label.clone()));
            }
        }
        Ok(())
    }

    /// Rubric rules rendered one per line as `-[Rule 1]: ...`.
    pub fn render_rubric_rules(&self) -> String {
        self.rubric_rules.iter().map(|r| format!("-[{}]: {}", r.label, r.text)).collect::<Vec<_>>().join("\n")
    }
}

/// Applies the MS-PS1-4 rubric combination: Proficient iff
/// (`Rule 1` or `Rule 2`) and `Rule 3`.
///
/// Only meant for checking that dataset labels agree with rule-hit
/// annotations; raw response text is never scored.
pub fn classify_by_rubric(rule_hits: &BTreeSet<String>, rules: &[RubricRule]) -> Result<ScoreLevel, ModelError> {
    let declared: BTreeSet<&str> = rules.iter().map(|r| r.label.as_str()).collect();
    for required in ["Rule 1", "Rule 2", "Rule 3"] {
        if !declared.contains(required) {
            return Err(ModelError::MissingRule(required.to_string()));
        }
    }
    if let Some(unknown) = rule_hits.iter().find(|h| !declared.contains(h.as_str())) {
        return Err(ModelError::UnknownRule(unknown.clone()));
    }
    let hit = |label: &str| rule_hits.contains(label);
    if (hit("Rule 1") || hit("Rule 2")) && hit("Rule 3") {
        Ok(ScoreLevel::Proficient)
    } else {
        Ok(ScoreLevel::Beginning)
    }
}

/// A response whose dataset label disagrees with its rule-hit annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMismatch {
    pub response_id: String,
    pub labeled: ScoreLevel,
    pub derived: ScoreLevel,
}

/// Checks dataset labels against rule-hit annotations where those exist.
pub fn check_label_consistency(
    responses: &[StudentResponse],
    hits: &BTreeMap<String, BTreeSet<String>>,
    rules: &[RubricRule],
) -> Result<Vec<LabelMismatch>, ModelError> {
    let mut mismatches = Vec::new();
    for resp in responses {
        let Some(resp_hits) = hits.get(&resp.id) else {
            continue;
        };
        let derived = classify_by_rubric(resp_hits, rules)?;
        if derived != resp.score_level {
            mismatches.push(LabelMismatch { response_id: resp.id.clone(), labeled: resp.score_level, derived });
        }
    }
    Ok(mismatches)
}
