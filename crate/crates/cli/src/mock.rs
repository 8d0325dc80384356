//! Scripted session file for offline runs. One JSON document holds the
//! per-document agent turns plus substring-keyed verifier verdicts:
//!
//! ```json
//! {
//!   "sessions": {
//!     "report_stem": ["Thought: ...", "Final Answer: [...]"],
//!     "*": ["Final Answer: []"]
//!   },
//!   "verifier": [
//!     {"contains": "water immersion", "answer": "KEEP\nsupported"}
//!   ],
//!   "verifier_default": "REVISE\nno scripted verdict matched"
//! }
//! ```
//!
//! Sessions are keyed by source file stem, with `"*"` as the fallback; the
//! token `{doc_id}` inside a turn is replaced with the document's id so
//! scripts can emit id-bearing records without hardcoding hashes.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

use extractor_core::agent::{AgentError, ChatMessage, LlmBackend};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub sessions: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub verifier: Vec<VerifierRule>,
    #[serde(default)]
    pub verifier_default: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierRule {
    pub contains: String,
    pub answer: String,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<MockScript> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read mock script {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("invalid mock script {}", path.display()))
    }

    /// Turns for one document, `{doc_id}` substituted.
    pub fn session_turns(&self, stem: &str, doc_id: &str) -> Option<Vec<String>> {
        self.sessions
            .get(stem)
            .or_else(|| self.sessions.get("*"))
            .map(|turns| turns.iter().map(|t| t.replace("{doc_id}", doc_id)).collect())
    }

    pub fn verifier(&self) -> KeyedVerifier {
        KeyedVerifier {
            rules: self.verifier.clone(),
            fallback: self
                .verifier_default
                .clone()
                .unwrap_or_else(|| "REVISE\nno scripted verdict matched".to_string()),
        }
    }
}

/// Verifier backend answering with the first rule whose `contains` string
/// appears in the last message. Content-keyed, so verdicts are independent
/// of record order.
pub struct KeyedVerifier {
    rules: Vec<VerifierRule>,
    fallback: String,
}

impl LlmBackend for KeyedVerifier {
    fn complete(&self, _temperature: f64, messages: &[ChatMessage]) -> Result<String, AgentError> {
        let last = messages.last().map(|m| m.content.as_str()).unwrap_or("");
        for rule in &self.rules {
            if last.contains(&rule.contains) {
                return Ok(rule.answer.clone());
            }
        }
        Ok(self.fallback.clone())
    }
}
