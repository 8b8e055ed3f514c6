//! Two-agent feedback generation for student constructed responses, plus
//! the tooling to evaluate it: balanced sampling, dual-rater annotation,
//! and chi-square comparison of issue rates.

pub mod annotator;
pub mod cli;
pub mod datasetio;
pub mod digest;
pub mod llm;
pub mod model;
pub mod orchestrator;
pub mod promptkit;
pub mod report;
pub mod statlab;
