use std::collections::BTreeMap;

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};
use crate::digest::sha256_hex;

/// Offline backend: answers from a fixture table keyed by request digest,
/// falling back to a deterministic synthetic responder when one is set.
pub struct MockBackend {
    fixtures: BTreeMap<String, String>,
    responder: Option<SyntheticResponder>,
}

impl MockBackend {
    pub fn fixtures(fixtures: BTreeMap<String, String>) -> Self {
        Self { fixtures, responder: None }
    }

    pub fn synthetic() -> Self {
        Self { fixtures: BTreeMap::new(), responder: Some(SyntheticResponder) }
    }

    pub fn insert(&mut self, req: &ChatRequest, text: impl Into<String>) {
        self.fixtures.insert(req.digest(), text.into());
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let digest = req.digest();
        let text = match (self.fixtures.get(&digest), &self.responder) {
            (Some(text), _) => text.clone(),
            (None, Some(r)) => r.respond(&req.prompt_text()),
            (None, None) => return Err(LlmError::NoFixture { digest }),
        };
        Ok(ChatResponse { text, prompt_tokens: 0, completion_tokens: 0, latency_ms: 0 })
    }

    fn fingerprint(&self) -> String {
        match self.responder {
            Some(_) => format!("mock:{}", SyntheticResponder::VERSION),
            None => format!("mock:fixtures:{}", self.fixtures.len()),
        }
    }
}

/// Produces plausible Agent 1 feedback and Agent 2 verdicts from the prompt
/// text alone, so the whole pipeline can run without a model.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticResponder;

fn section_body<'a>(prompt: &'a str, header: &str) -> Option<&'a str> {
    let start = prompt.find(&format!("\n{header}\n"))? + header.len() + 2;
    let rest = &prompt[start..];
    let end = rest.find("\n\n<<").unwrap_or(rest.len());
    Some(rest[..end].trim())
}

fn pick<'a>(seed: &[u8], slot: usize, options: &[&'a str]) -> &'a str {
    options[seed[slot % seed.len()] as usize % options.len()]
}

const AIMS: &[&str] = &[
    "This question asks you to use a model to explain how adding or removing thermal energy changes the way particles move.",
    "The goal of this item is to describe how heating or cooling water changes the motion of its particles and its temperature.",
    "This item checks whether you can connect a transfer of thermal energy to the speed of the particles in a liquid.",
];
const STRENGTHS: &[&str] = &[
    "You gave a clear answer and wrote it as a complete sentence.",
    "You noticed that the three dishes behave differently.",
    "You tried to explain what happens in the warm dish.",
    "You used your own words to describe what you observed.",
];
const IMPROVEMENTS: &[&str] = &[
    "Think about what the particles are doing, not only what the candy looks like.",
    "Try to explain why the temperature makes a difference to the particles.",
    "Your answer could say more about the link between energy and particle motion.",
];
const SUGGESTIONS: &[&str] = &[
    "Put a drop of food coloring into cold and warm water and time how fast it spreads.",
    "Draw a particle model of each dish and use arrows to show how fast the particles move.",
    "Watch a simulation of particles at different temperatures and write down what changes.",
];
const PRAISE: &[&str] = &["Great job!", "You're doing great!", "You're on the right path!"];

impl SyntheticResponder {
    pub const VERSION: &'static str = "synthetic-v1";

    pub fn respond(&self, prompt: &str) -> String {
        let seed = hex_bytes(&sha256_hex(prompt));
        if let Some(feedback) = section_body(prompt, "<<FEEDBACK FROM AGENT1>>") {
            self.verdict(&seed, feedback)
        } else {
            let response = section_body(prompt, "<<STUDENT RESPONSE>>").unwrap_or("");
            self.feedback(&seed, response)
        }
    }

    fn feedback(&self, seed: &[u8], response: &str) -> String {
        let praise = if seed[0].is_multiple_of(3) { format!("{} ", pick(seed, 1, PRAISE)) } else { String::new() };
        let performance = if response.split_whitespace().count() < 4 {
            "Your answer is very short, so it is hard to see your thinking yet."
        } else {
            "Your answer shows some of your thinking about the dishes."
        };
        format!(
            "**Aim of the Item:** {}\n\n**Your Performance:** {praise}{performance}\n\n**Strength:** {}\n\n**Area for improvement:** {}\n\n**Suggestions for further learning:** {}",
            pick(seed, 2, AIMS),
            pick(seed, 3, STRENGTHS),
            pick(seed, 4, IMPROVEMENTS),
            pick(seed, 5, SUGGESTIONS),
        )
    }

    fn verdict(&self, seed: &[u8], feedback: &str) -> String {
        let praised = PRAISE.iter().any(|p| feedback.contains(p));
        let inferred = seed[6].is_multiple_of(5);
        if !praised && !inferred {
            return "STEP 1: The feedback matches what the student wrote and keeps an encouraging tone. It does not need revision.\nSTEP 2: The feedback now is good enough.".to_string();
        }
        let mut reasons = vec!["STEP 1: The feedback should be revised."];
        if praised {
            reasons.push("It is over-praised: the tone is more positive than the response supports.");
        }
        if inferred {
            reasons.push("It shows over-inference: it credits ideas the student did not write.");
        }
        let revised = feedback
            .lines()
            .map(|line| {
                let mut line = line.to_string();
                for p in PRAISE {
                    line = line.replace(&format!("{p} "), "");
                }
                line
            })
            .collect::<Vec<_>>()
            .join("\n");
        format!("{}\nSTEP 2: Revised feedback:\n\n{revised}", reasons.join(" "))
    }
}

fn hex_bytes(hex: &str) -> Vec<u8> {
    (0..hex.len()).step_by(2).map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap_or(0)).collect()
}
