//! Single- and multi-agent pipelines over a dataset.

mod run;
mod verdict;

pub use run::{
    execute, read_records, records_jsonl, run, Counts, Failure, Progress, RunConfig, RunError, RunManifest, RunOutcome,
    MANIFEST_FILE, RECORDS_FILE,
};
pub use verdict::{find_sentinel, parse_verdict, scan_issues, EmptyVerdict, PARSE_WARNING, SENTINEL};

use crate::llm::{ChatBackend, ChatMessage, ChatParams, ChatRequest, ChatResponse, LlmError};
use crate::model::{
    AgentRole, AssessmentContext, Decision, FeedbackDocument, ModelError, RoundTrace, RunMode, RunRecord,
    StudentResponse, TokenUsage, ValidationVerdict,
};
use crate::promptkit::{
    assemble_agent1, assemble_agent2, assemble_revision, Assembled, PromptError, PromptTemplate, TemplateKind,
};

/// Where in the pipeline a response failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Agent1Prompt,
    Agent1Call,
    Agent2Prompt,
    Agent2Call,
    VerdictParse,
    RevisionPrompt,
    RevisionCall,
    Finalize,
}

#[derive(Debug, thiserror::Error)]
pub enum StepError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Verdict(#[from] EmptyVerdict),
    #[error("Agent 1 returned empty feedback")]
    EmptyFeedback,
    #[error("internal invariant violated: {0}")]
    Internal(#[from] ModelError),
}

/// Pieces collected for one response, before final selection.
#[derive(Debug, Clone)]
pub struct RecordParts<'a> {
    pub response: &'a StudentResponse,
    pub mode: RunMode,
    pub agent1_prompt: String,
    pub agent1_feedback: FeedbackDocument,
    pub agent2: Option<(String, String, ValidationVerdict)>,
    pub prior_rounds: Vec<RoundTrace>,
    pub token_usage: TokenUsage,
    pub wall_time_ms: u64,
    pub backend_fingerprint: String,
}

/// Picks the final feedback and annotates its length. Any inconsistency is a
/// bug and comes back as an error rather than being repaired.
pub fn finalize(parts: RecordParts<'_>) -> Result<RunRecord, ModelError> {
    let final_feedback = match (&parts.mode, &parts.agent2) {
        (RunMode::Single, _) => parts.agent1_feedback.clone(),
        (RunMode::Multi, Some((_, _, verdict))) => match verdict.decision() {
            Decision::GoodEnough => parts.agent1_feedback.clone(),
            Decision::Revised => verdict
                .revised_feedback()
                .cloned()
                .ok_or_else(|| ModelError::Record("revised verdict without revised feedback".into()))?,
        },
        (RunMode::Multi, None) => {
            return Err(ModelError::Record(format!(
                "{}: multi-mode record is missing Agent 2 artifacts",
                parts.response.id
            )))
        }
    };
    let (agent2_prompt, agent2_raw, verdict) = match parts.agent2 {
        Some((p, r, v)) => (Some(p), Some(r), Some(v)),
        None => (None, None, None),
    };
    let record = RunRecord {
        response_id: parts.response.id.clone(),
        mode: parts.mode,
        score_level: parts.response.score_level,
        response_text: parts.response.text.clone(),
        agent1_prompt: parts.agent1_prompt,
        agent1_feedback: parts.agent1_feedback,
        agent2_prompt,
        agent2_raw,
        verdict,
        prior_rounds: parts.prior_rounds,
        over_word_limit: final_feedback.exceeds_word_limit(),
        final_feedback,
        token_usage: parts.token_usage,
        wall_time_ms: parts.wall_time_ms,
        backend_fingerprint: parts.backend_fingerprint,
    };
    record.validate()?;
    Ok(record)
}

/// Loaded templates and settings; everything needed to process one response.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub mode: RunMode,
    pub context: AssessmentContext,
    pub agent1: PromptTemplate,
    pub agent2: PromptTemplate,
    pub revision: PromptTemplate,
    pub params: ChatParams,
    pub max_validation_rounds: u32,
    /// Send the Role block as a system message instead of inline.
    pub split_role: bool,
}

impl Pipeline {
    /// Bundled templates and context with default parameters.
    pub fn bundled(mode: RunMode) -> Self {
        Self {
            mode,
            context: crate::promptkit::bundled_context(),
            agent1: PromptTemplate::bundled(TemplateKind::Agent1),
            agent2: PromptTemplate::bundled(TemplateKind::Agent2),
            revision: PromptTemplate::bundled_revision(),
            params: ChatParams::default(),
            max_validation_rounds: 1,
            split_role: false,
        }
    }

    fn request(&self, prompt: &Assembled) -> Result<ChatRequest, LlmError> {
        let messages = if self.split_role {
            let (system, user) = prompt.split_role();
            vec![ChatMessage::system(system), ChatMessage::user(user)]
        } else {
            vec![ChatMessage::user(prompt.text())]
        };
        ChatRequest::new(&self.params, messages)
    }

    fn call(
        &self,
        backend: &dyn ChatBackend,
        prompt: &Assembled,
        role: AgentRole,
        usage: &mut TokenUsage,
        wall: &mut u64,
    ) -> Result<ChatResponse, LlmError> {
        let resp = backend.complete(&self.request(prompt)?)?;
        usage.push(role, resp.prompt_tokens, resp.completion_tokens);
        *wall += resp.latency_ms;
        Ok(resp)
    }

    /// Runs one response through the configured mode.
    pub fn process(
        &self,
        backend: &dyn ChatBackend,
        response: &StudentResponse,
    ) -> Result<RunRecord, (Stage, StepError)> {
        let ctx = &self.context;
        let mut usage = TokenUsage::default();
        let mut wall = 0;

        let mut a1_prompt = assemble_agent1(&self.agent1, ctx, response).map_err(fail(Stage::Agent1Prompt))?;
        let resp = self
            .call(backend, &a1_prompt, AgentRole::Agent1, &mut usage, &mut wall)
            .map_err(fail(Stage::Agent1Call))?;
        let mut feedback = non_empty(resp.text).map_err(fail(Stage::Agent1Call))?;

        let mut agent2 = None;
        let mut prior_rounds = Vec::new();
        if self.mode == RunMode::Multi {
            let rounds = self.max_validation_rounds.max(1);
            for round in 1..=rounds {
                let a2_prompt = assemble_agent2(&self.agent2, ctx, response, &feedback.raw_text)
                    .map_err(fail(Stage::Agent2Prompt))?;
                let raw = self
                    .call(backend, &a2_prompt, AgentRole::Agent2, &mut usage, &mut wall)
                    .map_err(fail(Stage::Agent2Call))?
                    .text;
                let verdict = parse_verdict(&raw).map_err(fail(Stage::VerdictParse))?;
                if verdict.decision() == Decision::GoodEnough || round == rounds {
                    agent2 = Some((a2_prompt.text(), raw, verdict));
                    break;
                }
                let revision_prompt = assemble_revision(&self.revision, ctx, response, &feedback.raw_text, &raw)
                    .map_err(fail(Stage::RevisionPrompt))?;
                let resp = self
                    .call(backend, &revision_prompt, AgentRole::Agent1Revision, &mut usage, &mut wall)
                    .map_err(fail(Stage::RevisionCall))?;
                let revised = non_empty(resp.text).map_err(fail(Stage::RevisionCall))?;
                prior_rounds.push(RoundTrace {
                    agent1_prompt: a1_prompt.text(),
                    agent1_feedback: std::mem::replace(&mut feedback, revised),
                    agent2_prompt: a2_prompt.text(),
                    agent2_raw: raw,
                    verdict,
                });
                a1_prompt = revision_prompt;
            }
        }

        finalize(RecordParts {
            response,
            mode: self.mode,
            agent1_prompt: a1_prompt.text(),
            agent1_feedback: feedback,
            agent2,
            prior_rounds,
            token_usage: usage,
            wall_time_ms: wall,
            backend_fingerprint: backend.fingerprint(),
        })
        .map_err(fail(Stage::Finalize))
    }
}

fn fail<E: Into<StepError>>(stage: Stage) -> impl FnOnce(E) -> (Stage, StepError) {
    move |e| (stage, e.into())
}

fn non_empty(text: String) -> Result<FeedbackDocument, StepError> {
    if text.trim().is_empty() {
        return Err(StepError::EmptyFeedback);
    }
    Ok(FeedbackDocument::from_text(text))
}
