//! Deterministic fixture-driven backend for offline runs and tests.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{LlmBackend, LlmRequest, LlmResponse, PromptKind};
use crate::error::BackendError;

/// One canned response: matches when the request has `kind` and the payload
/// contains `pattern`. An empty pattern matches every payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub kind: PromptKind,
    pub pattern: String,
    pub response: String,
}

/// What to do when no fixture entry matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Fail with [`BackendError::NoFixtureMatch`].
    Error,
    /// Answer with the built-in rule-based policy, a pure function of the
    /// payload.
    #[default]
    RuleBased,
}

/// Immutable after construction and safely shareable across threads.
/// Lookup is first-match-wins in declaration order, so any sequence of
/// requests is a pure function of (fixture, request sequence).
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    entries: Vec<FixtureEntry>,
    fallback: FallbackPolicy,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<FixtureEntry>, fallback: FallbackPolicy) -> Self {
        ScriptedBackend { entries, fallback }
    }

    /// Rule-based policy only, no fixture entries.
    pub fn rule_based() -> Self {
        ScriptedBackend::new(Vec::new(), FallbackPolicy::RuleBased)
    }

    /// Load a fixture file: a JSON array of `{kind, pattern, response}`
    /// objects, UTF-8.
    pub fn from_file(path: &Path, fallback: FallbackPolicy) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path)?;
        let entries: Vec<FixtureEntry> = serde_json::from_str(&text)?;
        Ok(ScriptedBackend::new(entries, fallback))
    }

    pub fn entries(&self) -> &[FixtureEntry] {
        &self.entries
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError> {
        for entry in &self.entries {
            if entry.kind == request.kind && request.payload.contains(&entry.pattern) {
                return Ok(LlmResponse {
                    raw: entry.response.clone(),
                    backend_id: self.id().to_string(),
                    latency: Duration::ZERO,
                });
            }
        }
        match self.fallback {
            FallbackPolicy::Error => Err(BackendError::NoFixtureMatch {
                kind: request.kind.name(),
            }),
            FallbackPolicy::RuleBased => {
                let raw = super::rulebased::respond(request.kind, &request.payload);
                if raw.trim().is_empty() {
                    return Err(BackendError::EmptyResponse);
                }
                Ok(LlmResponse {
                    raw,
                    backend_id: self.id().to_string(),
                    latency: Duration::ZERO,
                })
            }
        }
    }

    fn id(&self) -> &str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(kind: PromptKind, payload: &str) -> LlmRequest {
        LlmRequest::new(kind, payload)
    }

    #[test]
    fn fixture_entry_wins_over_fallback() {
        let backend = ScriptedBackend::new(
            vec![FixtureEntry {
                kind: PromptKind::Summarization,
                pattern: "apple".into(),
                response: "Summary: took apple".into(),
            }],
            FallbackPolicy::Error,
        );
        let got = backend
            .complete(&request(PromptKind::Summarization, "something about an apple"))
            .unwrap();
        assert_eq!(got.raw, "Summary: took apple");
    }

    #[test]
    fn empty_fixture_with_error_fallback_fails() {
        let backend = ScriptedBackend::new(Vec::new(), FallbackPolicy::Error);
        let err = backend
            .complete(&request(PromptKind::Summarization, "anything"))
            .unwrap_err();
        assert!(matches!(err, BackendError::NoFixtureMatch { .. }));
    }

    #[test]
    fn identical_requests_get_identical_responses() {
        let backend = ScriptedBackend::new(
            vec![
                FixtureEntry {
                    kind: PromptKind::Compare,
                    pattern: "".into(),
                    response: "1: first".into(),
                },
                FixtureEntry {
                    kind: PromptKind::Compare,
                    pattern: "never reached".into(),
                    response: "2: second".into(),
                },
            ],
            FallbackPolicy::Error,
        );
        let req = request(PromptKind::Compare, "never reached, but entry one matches first");
        let a = backend.complete(&req).unwrap();
        let b = backend.complete(&req).unwrap();
        assert_eq!(a.raw, b.raw);
        assert_eq!(a.raw, "1: first");
    }

    #[test]
    fn kind_must_match() {
        let backend = ScriptedBackend::new(
            vec![FixtureEntry {
                kind: PromptKind::Summarization,
                pattern: "".into(),
                response: "Summary: x".into(),
            }],
            FallbackPolicy::Error,
        );
        assert!(backend.complete(&request(PromptKind::Compare, "x")).is_err());
    }
}
