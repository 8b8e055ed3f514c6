use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{FeedbackDocument, ModelError, ScoreLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IssueFlag {
    OverPraise,
    OverInference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    GoodEnough,
    Revised,
}

/// Agent 2's judgement on a piece of Agent 1 feedback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVerdict")]
pub struct ValidationVerdict {
    decision: Decision,
    reasons: String,
    detected_issues: BTreeSet<IssueFlag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    revised_feedback: Option<FeedbackDocument>,
    /// Set when the output could not be split cleanly and needs a human look.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parse_warning: Option<String>,
}

#[derive(Deserialize)]
struct RawVerdict {
    decision: Decision,
    reasons: String,
    #[serde(default)]
    detected_issues: BTreeSet<IssueFlag>,
    #[serde(default)]
    revised_feedback: Option<FeedbackDocument>,
    #[serde(default)]
    parse_warning: Option<String>,
}

impl TryFrom<RawVerdict> for ValidationVerdict {
    type Error = ModelError;

    fn try_from(raw: RawVerdict) -> Result<Self, Self::Error> {
        let verdict = match raw.decision {
            Decision::GoodEnough => {
                if raw.revised_feedback.is_some() {
                    return Err(ModelError::Verdict("good-enough verdict carries revised feedback".into()));
                }
                Self::good_enough(raw.reasons)
            }
            Decision::Revised => {
                let revised = raw
                    .revised_feedback
                    .ok_or_else(|| ModelError::Verdict("revised verdict without revised feedback".into()))?;
                Self::revised(raw.reasons, raw.detected_issues.clone(), revised)?
            }
        };
        Ok(Self { detected_issues: raw.detected_issues, parse_warning: raw.parse_warning, ..verdict })
    }
}

impl ValidationVerdict {
    pub fn good_enough(reasons: impl Into<String>) -> Self {
        Self {
            decision: Decision::GoodEnough,
            reasons: reasons.into(),
            detected_issues: BTreeSet::new(),
            revised_feedback: None,
            parse_warning: None,
        }
    }

    pub fn revised(
        reasons: impl Into<String>,
        detected_issues: BTreeSet<IssueFlag>,
        revised_feedback: FeedbackDocument,
    ) -> Result<Self, ModelError> {
        if revised_feedback.raw_text.is_empty() {
            return Err(ModelError::Verdict("revised feedback is empty".into()));
        }
        Ok(Self {
            decision: Decision::Revised,
            reasons: reasons.into(),
            detected_issues,
            revised_feedback: Some(revised_feedback),
            parse_warning: None,
        })
    }

    pub fn with_parse_warning(mut self, warning: impl Into<String>) -> Self {
        self.parse_warning = Some(warning.into());
        self
    }

    pub fn decision(&self) -> Decision {
        self.decision
    }

    pub fn reasons(&self) -> &str {
        &self.reasons
    }

    pub fn detected_issues(&self) -> &BTreeSet<IssueFlag> {
        &self.detected_issues
    }

    pub fn revised_feedback(&self) -> Option<&FeedbackDocument> {
        self.revised_feedback.as_ref()
    }

    pub fn parse_warning(&self) -> Option<&str> {
        self.parse_warning.as_deref()
    }

    pub fn needs_review(&self) -> bool {
        self.parse_warning.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Single,
    Multi,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Single => "single",
            Self::Multi => "multi",
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" => Ok(Self::Single),
            "multi" => Ok(Self::Multi),
            other => Err(format!("unknown run mode `{other}` (expected single or multi)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Agent1,
    Agent2,
    /// Agent 1 regenerating from an Agent 2 critique.
    Agent1Revision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallUsage {
    pub agent: AgentRole,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub calls: Vec<CallUsage>,
}

impl TokenUsage {
    pub fn push(&mut self, agent: AgentRole, prompt_tokens: u64, completion_tokens: u64) {
        self.calls.push(CallUsage { agent, prompt_tokens, completion_tokens });
    }

    pub fn total_prompt_tokens(&self) -> u64 {
        self.calls.iter().map(|c| c.prompt_tokens).sum()
    }

    pub fn total_completion_tokens(&self) -> u64 {
        self.calls.iter().map(|c| c.completion_tokens).sum()
    }
}

/// One validation round that was superseded by a later loopback round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub agent1_prompt: String,
    pub agent1_feedback: FeedbackDocument,
    pub agent2_prompt: String,
    pub agent2_raw: String,
    pub verdict: ValidationVerdict,
}

/// Provenance of one response through the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRunRecord")]
pub struct RunRecord {
    pub response_id: String,
    pub mode: RunMode,
    pub score_level: ScoreLevel,
    pub response_text: String,
    pub agent1_prompt: String,
    pub agent1_feedback: FeedbackDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent2_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent2_raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<ValidationVerdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prior_rounds: Vec<RoundTrace>,
    pub final_feedback: FeedbackDocument,
    pub over_word_limit: bool,
    pub token_usage: TokenUsage,
    pub wall_time_ms: u64,
    pub backend_fingerprint: String,
}

#[derive(Deserialize)]
struct RawRunRecord {
    response_id: String,
    mode: RunMode,
    score_level: ScoreLevel,
    response_text: String,
    agent1_prompt: String,
    agent1_feedback: FeedbackDocument,
    #[serde(default)]
    agent2_prompt: Option<String>,
    #[serde(default)]
    agent2_raw: Option<String>,
    #[serde(default)]
    verdict: Option<ValidationVerdict>,
    #[serde(default)]
    prior_rounds: Vec<RoundTrace>,
    final_feedback: FeedbackDocument,
    over_word_limit: bool,
    token_usage: TokenUsage,
    wall_time_ms: u64,
    backend_fingerprint: String,
}

impl TryFrom<RawRunRecord> for RunRecord {
    type Error = ModelError;

    fn try_from(raw: RawRunRecord) -> Result<Self, Self::Error> {
        let record = RunRecord {
            response_id: raw.response_id,
            mode: raw.mode,
            score_level: raw.score_level,
            response_text: raw.response_text,
            agent1_prompt: raw.agent1_prompt,
            agent1_feedback: raw.agent1_feedback,
            agent2_prompt: raw.agent2_prompt,
            agent2_raw: raw.agent2_raw,
            verdict: raw.verdict,
            prior_rounds: raw.prior_rounds,
            final_feedback: raw.final_feedback,
            over_word_limit: raw.over_word_limit,
            token_usage: raw.token_usage,
            wall_time_ms: raw.wall_time_ms,
            backend_fingerprint: raw.backend_fingerprint,
        };
        record.validate()?;
        Ok(record)
    }
}

impl RunRecord {
    /// Checks the mode/field co-occurrence rules and final-feedback selection.
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: &str| Err(ModelError::Record(format!("{}: {msg}", self.response_id)));
        match self.mode {
            RunMode::Single => {
                if self.agent2_prompt.is_some() || self.agent2_raw.is_some() || self.verdict.is_some() {
                    return fail("single-mode record carries Agent 2 artifacts");
                }
                if !self.prior_rounds.is_empty() {
                    return fail("single-mode record carries validation rounds");
                }
                if self.final_feedback != self.agent1_feedback {
                    return fail("single-mode final feedback differs from Agent 1 feedback");
                }
            }
            RunMode::Multi => {
                let (Some(_), Some(_), Some(verdict)) = (&self.agent2_prompt, &self.agent2_raw, &self.verdict) else {
                    return fail("multi-mode record is missing Agent 2 artifacts");
                };
                let expected = match verdict.decision() {
                    Decision::GoodEnough => &self.agent1_feedback,
                    Decision::Revised => match verdict.revised_feedback() {
                        Some(doc) => doc,
                        None => return fail("revised verdict without revised feedback"),
                    },
                };
                if &self.final_feedback != expected {
                    return fail("final feedback does not follow the verdict");
                }
            }
        }
        if self.over_word_limit != self.final_feedback.exceeds_word_limit() {
            return fail("over_word_limit flag disagrees with final feedback length");
        }
        Ok(())
    }

    /// Key used by label files: `<mode>:<response_id>`.
    pub fn record_key(&self) -> String {
        format!("{}:{}", self.mode, self.response_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_record() -> RunRecord {
        let fb = FeedbackDocument::from_text("**Strength:**\nNice.");
        RunRecord {
            response_id: "1".into(),
            mode: RunMode::Single,
            score_level: ScoreLevel::Beginning,
            response_text: "x".into(),
            agent1_prompt: "p".into(),
            agent1_feedback: fb.clone(),
            agent2_prompt: None,
            agent2_raw: None,
            verdict: None,
            prior_rounds: vec![],
            final_feedback: fb,
            over_word_limit: false,
            token_usage: TokenUsage::default(),
            wall_time_ms: 0,
            backend_fingerprint: "m".into(),
        }
    }

    #[test]
    fn single_record_round_trips_without_agent2_keys() {
        let rec = single_record();
        let json = serde_json::to_string(&rec).unwrap();
        assert!(!json.contains("agent2"));
        assert!(!json.contains("verdict"));
        let back: RunRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn deserialization_enforces_mode_invariants() {
        let mut value = serde_json::to_value(single_record()).unwrap();
        value["agent2_raw"] = serde_json::json!("sneaky");
        let err = serde_json::from_value::<RunRecord>(value).unwrap_err();
        assert!(err.to_string().contains("Agent 2"), "{err}");

        let mut value = serde_json::to_value(single_record()).unwrap();
        value["mode"] = serde_json::json!("multi");
        assert!(serde_json::from_value::<RunRecord>(value).is_err());
    }

    #[test]
    fn verdict_invariants_hold_on_deserialize() {
        let bad = r#"{"decision":"Revised","reasons":"r","detected_issues":[]}"#;
        assert!(serde_json::from_str::<ValidationVerdict>(bad).is_err());
        let bad = r#"{"decision":"GoodEnough","reasons":"r","revised_feedback":{"raw_text":"a","word_count":1}}"#;
        assert!(serde_json::from_str::<ValidationVerdict>(bad).is_err());
        let ok = r#"{"decision":"Revised","reasons":"r","detected_issues":["OverPraise"],"revised_feedback":{"raw_text":"a","word_count":1}}"#;
        let v: ValidationVerdict = serde_json::from_str(ok).unwrap();
        assert!(v.detected_issues().contains(&IssueFlag::OverPraise));
    }

    #[test]
    fn revised_requires_text() {
        let empty = FeedbackDocument::from_text("");
        assert!(ValidationVerdict::revised("r", BTreeSet::new(), empty).is_err());
    }
}
