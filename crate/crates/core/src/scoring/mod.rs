//! Persona-contrast scoring: per-token log-probability differences between
//! persona-conditioned and persona-removed contexts.

mod backend;
mod pir;
mod template;
pub mod wire;

pub use backend::{RemoteConfig, RemoteScorer, ScorerBackend, AUTH_TOKEN_ENV};
pub use pir::{classify_personal, pir, PirScores, DEFAULT_PERSONAL_THRESHOLD};
pub use template::{render_contexts, CompiledTemplate, PersonaPosition, PromptTemplate, RenderedExample};
