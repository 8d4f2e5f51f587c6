//! Memory-augmented decision agents over deterministic text environments.
//!
//! The pipeline has two stages. Formation turns demonstration trajectories
//! into state-action tuples with summarized histories and builds a
//! two-level (goal type, observation type) index per batch of
//! demonstrations. At inference the agent classifies its current goal and
//! observation against that index, retrieves the matching tuples as a
//! context prompt, and asks the backend for the next action. Refinement
//! then improves the memory: a confidence-scored tree exploration searches
//! for better decision processes, and the suffix of a strictly better
//! process after its key step is inserted back into the memory.
//!
//! Everything runs offline against a scripted backend; an OpenAI-compatible
//! HTTP backend is available behind the same trait.

pub mod agent;
pub mod env;
pub mod error;
pub mod explorer;
pub mod formation;
pub mod llm;
pub mod memory;
pub mod pipeline;
pub mod policy;
pub mod retrieval;
pub mod seed;

pub use error::{BackendError, EnvError, Error, MemoryError, ParseError, Result};
