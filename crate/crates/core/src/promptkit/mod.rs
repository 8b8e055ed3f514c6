//! Prompt templates and assembly for the generator (Agent 1) and validator
//! (Agent 2).
//!
//! A template is a UTF-8 body file with `Role:` / `TASK:` blocks followed by
//! `<<NAME>>` section markers, each on its own line, and `{{field}}`
//! placeholders. A sidecar `.toml` manifest next to the body gives the
//! template kind, the section order, and where each placeholder's value comes
//! from.

mod assemble;
mod template;

use std::path::{Path, PathBuf};

pub use assemble::{assemble_agent1, assemble_agent2, assemble_revision, Assembled, PromptInputs, RenderedSection};
pub use template::{load_template, PromptTemplate, SectionTag, Source, TemplateKind};

use crate::model::{AssessmentContext, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid template manifest: {0}")]
    Manifest(String),
    #[error("invalid assessment context: {0}")]
    ContextFile(String),
    #[error("unknown section tag `{0}`")]
    UnknownSection(String),
    #[error("duplicate section `{0}`")]
    DuplicateSection(String),
    #[error("section `{0}` is declared but missing from the template body")]
    MissingSection(String),
    #[error("{kind} template sections must be exactly [{expected}], found [{found}]")]
    SectionOrder { kind: TemplateKind, expected: String, found: String },
    #[error("placeholder `{{{{{placeholder}}}}}` in section `{section}` has no mapping")]
    UnmappedPlaceholder { placeholder: String, section: String },
    #[error("unknown placeholder source `{0}`")]
    UnknownSource(String),
    #[error("template body has text before the first section header")]
    TextOutsideSection,
    #[error("expected a {expected} template, got {found}")]
    WrongTemplate { expected: TemplateKind, found: TemplateKind },
    #[error("section `{section}` needs `{field}`, which is missing or empty")]
    MissingField { section: String, field: String },
    #[error("Agent 1 feedback is empty; nothing to validate")]
    EmptyFeedback,
    #[error(transparent)]
    Context(#[from] ModelError),
}

const BUNDLED_CONTEXT: &str = include_str!("../../templates/ms_ps1_4.toml");

/// Parses an assessment context from TOML text.
pub fn parse_context(text: &str) -> Result<AssessmentContext, PromptError> {
    let ctx: AssessmentContext = toml::from_str(text).map_err(|e| PromptError::ContextFile(e.to_string()))?;
    ctx.validate()?;
    Ok(ctx)
}

pub fn load_context(path: &Path) -> Result<AssessmentContext, PromptError> {
    let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io { path: path.to_path_buf(), source })?;
    parse_context(&text)
}

/// The MS-PS1-4 thermal-energy item shipped with the crate.
pub fn bundled_context() -> AssessmentContext {
    parse_context(BUNDLED_CONTEXT).expect("bundled context is valid")
}

/// The raw TOML of the bundled context (for digests).
pub fn bundled_context_text() -> &'static str {
    BUNDLED_CONTEXT
}
