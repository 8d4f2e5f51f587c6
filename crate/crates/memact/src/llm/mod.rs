//! Uniform contract for issuing prompts to an LLM backend.
//!
//! A backend receives an [`LlmRequest`] (a prompt kind, its verbatim
//! instruction template, and a payload) and returns raw text. Two backends
//! are provided: [`ScriptedBackend`] for deterministic offline runs and
//! [`HttpBackend`] for chat-completions-style endpoints. Response grammars
//! live in [`parse`]; all parsers are total over arbitrary text.

pub mod parse;
pub mod prompts;
pub mod rulebased;
pub mod scripted;

#[cfg(feature = "http-backend")]
pub mod http;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{BackendError, ParseError};

/// The prompt kinds understood by the gateway. Each maps onto one
/// instruction template in [`prompts`]; `FinalChoice` has no counterpart in
/// the original prompt set and uses a template of our own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Evaluation,
    Summarization,
    ClusterGoals,
    ClusterObservations,
    IndexGoal,
    IndexObservation,
    Action,
    TreeExploration,
    Compare,
    FinalChoice,
}

impl PromptKind {
    pub fn name(self) -> &'static str {
        match self {
            PromptKind::Evaluation => "evaluation",
            PromptKind::Summarization => "summarization",
            PromptKind::ClusterGoals => "cluster_goals",
            PromptKind::ClusterObservations => "cluster_observations",
            PromptKind::IndexGoal => "index_goal",
            PromptKind::IndexObservation => "index_observation",
            PromptKind::Action => "action",
            PromptKind::TreeExploration => "tree_exploration",
            PromptKind::Compare => "compare",
            PromptKind::FinalChoice => "final_choice",
        }
    }
}

/// A single completion request. `instruction` is the verbatim template for
/// `kind`; `payload` is appended after it.
#[derive(Debug, Clone)]
pub struct LlmRequest {
    pub kind: PromptKind,
    pub instruction: String,
    pub payload: String,
    /// Maximum response tokens the backend may spend.
    pub budget: usize,
}

pub const DEFAULT_BUDGET: usize = 256;

impl LlmRequest {
    pub fn new(kind: PromptKind, payload: impl Into<String>) -> Self {
        LlmRequest {
            kind,
            instruction: prompts::template(kind).to_string(),
            payload: payload.into(),
            budget: DEFAULT_BUDGET,
        }
    }

    /// Full prompt text as sent to a live model.
    pub fn full_text(&self) -> String {
        format!("{}\n\n{}", self.instruction, self.payload)
    }
}

#[derive(Debug, Clone)]
pub struct LlmResponse {
    pub raw: String,
    pub backend_id: String,
    pub latency: Duration,
}

/// A completion backend. Implementations must tolerate concurrent
/// `complete` calls.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, BackendError>;

    fn id(&self) -> &str;
}

/// Suffix appended to the payload when a response failed to parse and the
/// request is retried once.
pub const STRICT_FORMAT_SUFFIX: &str = "\nstrictly follow the format";

/// Issue a request and parse the response; on a parse failure, retry once
/// with [`STRICT_FORMAT_SUFFIX`] appended to the payload, then give up.
pub fn complete_parsed<T>(
    backend: &dyn LlmBackend,
    kind: PromptKind,
    payload: &str,
    parse: impl Fn(&str) -> Result<T, ParseError>,
) -> Result<T, crate::Error> {
    let response = backend.complete(&LlmRequest::new(kind, payload))?;
    match parse(&response.raw) {
        Ok(value) => Ok(value),
        Err(_) => {
            let retry_payload = format!("{payload}{STRICT_FORMAT_SUFFIX}");
            let response = backend.complete(&LlmRequest::new(kind, retry_payload))?;
            parse(&response.raw).map_err(Into::into)
        }
    }
}

pub use scripted::{FallbackPolicy, FixtureEntry, ScriptedBackend};

#[cfg(feature = "http-backend")]
pub use http::{HttpBackend, HttpBackendConfig};
