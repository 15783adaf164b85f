//! Runs the elicitation pipeline for live sessions: plans on session start,
//! then detects, re-plans and responds turn by turn. Exposed over HTTP and a
//! command-line tool.

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod http;
pub mod session;
pub mod store;

pub use session::{DialogueSession, Engine, EngineSettings, SessionConfig, TurnOutcome};
