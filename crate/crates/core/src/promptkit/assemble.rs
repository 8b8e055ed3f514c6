use super::template::{looks_like_header, placeholders, PromptTemplate, SectionTag, Source, TemplateKind};
use super::PromptError;
use crate::model::{AssessmentContext, StudentResponse};

/// Everything a template may draw values from.
#[derive(Debug, Clone, Copy)]
pub struct PromptInputs<'a> {
    pub ctx: &'a AssessmentContext,
    pub response: &'a StudentResponse,
    pub agent1_feedback: Option<&'a str>,
    pub previous_feedback: Option<&'a str>,
    pub critique: Option<&'a str>,
}

impl<'a> PromptInputs<'a> {
    pub fn new(ctx: &'a AssessmentContext, response: &'a StudentResponse) -> Self {
        Self { ctx, response, agent1_feedback: None, previous_feedback: None, critique: None }
    }

    fn value(&self, source: &Source) -> Option<String> {
        let ctx = self.ctx;
        let v = match source {
            Source::ItemId => ctx.item_id.clone(),
            Source::ProblemStatement => ctx.problem_statement.clone(),
            Source::Question => ctx.question.clone(),
            Source::RubricRules => ctx.render_rubric_rules(),
            Source::ProficiencyLogic => ctx.proficiency_logic.clone(),
            Source::TeachingContext => ctx.teaching_context.clone(),
            Source::CoreConcept => ctx.learning_goals.core_concept.clone(),
            Source::CrosscuttingConcept => ctx.learning_goals.crosscutting_concept.clone(),
            Source::Practice => ctx.learning_goals.practice.clone(),
            Source::FeedbackCriteria => ctx.feedback_criteria.clone(),
            Source::PossibleProblems => ctx.possible_problems.clone(),
            Source::ContextExtension(key) => ctx.extensions.get(key)?.clone(),
            Source::ResponseId => self.response.id.clone(),
            Source::ResponseText => self.response.text.clone(),
            Source::ScoreLevel => self.response.score_level.as_str().to_string(),
            Source::Agent1Feedback => self.agent1_feedback?.to_string(),
            Source::PreviousFeedback => self.previous_feedback?.to_string(),
            Source::Critique => self.critique?.to_string(),
        };
        Some(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedSection {
    pub tag: SectionTag,
    pub body: String,
}

/// An assembled prompt, kept section by section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembled {
    pub kind: TemplateKind,
    pub template_digest: String,
    pub sections: Vec<RenderedSection>,
}

impl Assembled {
    /// The full prompt as a single user message.
    pub fn text(&self) -> String {
        render(self.sections.iter())
    }

    /// The Role block as a system message and the rest as the user message.
    pub fn split_role(&self) -> (String, String) {
        let role = self.sections.iter().find(|s| s.tag == SectionTag::Role).map(|s| s.body.clone()).unwrap_or_default();
        let rest = render(self.sections.iter().filter(|s| s.tag != SectionTag::Role));
        (role, rest)
    }
}

fn render<'a>(sections: impl Iterator<Item = &'a RenderedSection>) -> String {
    let mut out = sections
        .map(|s| if s.body.is_empty() { s.tag.header_line() } else { format!("{}\n{}", s.tag.header_line(), s.body) })
        .collect::<Vec<_>>()
        .join("\n\n");
    out.push('\n');
    out
}

fn needs_fence(value: &str) -> bool {
    value.contains("<<") || value.lines().any(|l| looks_like_header(l) || l.trim_start().starts_with('>'))
}

/// Quotes untrusted text line by line when it could be mistaken for
/// template structure.
pub(crate) fn fence(value: &str) -> String {
    if !needs_fence(value) {
        return value.to_string();
    }
    value.split('\n').map(|l| format!("> {l}")).collect::<Vec<_>>().join("\n")
}

fn fill(template: &PromptTemplate, inputs: &PromptInputs) -> Result<Assembled, PromptError> {
    let mut sections = Vec::with_capacity(template.sections.len());
    for section in &template.sections {
        let mut body = String::with_capacity(section.body.len());
        let mut last = 0;
        for (range, name) in placeholders(&section.body) {
            let source = &template.placeholder_map[name];
            let missing =
                || PromptError::MissingField { section: section.tag.name().to_string(), field: source.path() };
            let raw = inputs.value(source).ok_or_else(missing)?;
            if raw.trim().is_empty() && *source != Source::ResponseText {
                if *source == Source::Agent1Feedback {
                    return Err(PromptError::EmptyFeedback);
                }
                return Err(missing());
            }
            let value = if source.is_untrusted() { fence(&raw) } else { raw };
            body.push_str(&section.body[last..range.start]);
            body.push_str(&value);
            last = range.end;
        }
        body.push_str(&section.body[last..]);
        sections.push(RenderedSection { tag: section.tag.clone(), body });
    }
    Ok(Assembled { kind: template.name, template_digest: template.digest().to_string(), sections })
}

fn expect_kind(template: &PromptTemplate, kind: TemplateKind) -> Result<(), PromptError> {
    if template.name != kind {
        return Err(PromptError::WrongTemplate { expected: kind, found: template.name });
    }
    Ok(())
}

pub fn assemble_agent1(
    template: &PromptTemplate,
    ctx: &AssessmentContext,
    response: &StudentResponse,
) -> Result<Assembled, PromptError> {
    expect_kind(template, TemplateKind::Agent1)?;
    fill(template, &PromptInputs::new(ctx, response))
}

pub fn assemble_agent2(
    template: &PromptTemplate,
    ctx: &AssessmentContext,
    response: &StudentResponse,
    agent1_feedback: &str,
) -> Result<Assembled, PromptError> {
    expect_kind(template, TemplateKind::Agent2)?;
    if agent1_feedback.trim().is_empty() {
        return Err(PromptError::EmptyFeedback);
    }
    let inputs = PromptInputs { agent1_feedback: Some(agent1_feedback), ..PromptInputs::new(ctx, response) };
    fill(template, &inputs)
}

/// Agent 1 prompt for a loopback round, carrying the previous feedback and
/// the reviewer's critique.
pub fn assemble_revision(
    template: &PromptTemplate,
    ctx: &AssessmentContext,
    response: &StudentResponse,
    previous_feedback: &str,
    critique: &str,
) -> Result<Assembled, PromptError> {
    expect_kind(template, TemplateKind::Agent1)?;
    let inputs = PromptInputs {
        previous_feedback: Some(previous_feedback),
        critique: Some(critique),
        ..PromptInputs::new(ctx, response)
    };
    fill(template, &inputs)
}
