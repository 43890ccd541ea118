//! Generation backends: a deterministic scripted mock for tests and an
//! OpenAI-compatible streaming client, plus the trigger matchers shared by
//! the intervention policies.

pub mod matcher;
mod remote;
mod scripted;

pub use matcher::{MarkerScanner, WaitMatcher};
pub use remote::{RemoteBackend, RemoteEndpoint, DEFAULT_API_KEY_ENV};
pub use scripted::{ScriptToken, ScriptedModel};
