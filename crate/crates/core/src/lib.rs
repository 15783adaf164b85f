//! Two-phase conversational requirement elicitation.
//!
//! Phase one plans a requirement sequence from a user's profile and personal
//! knowledge base ([`planner`]) over a transition graph mined from past
//! dialogues ([`graph`]), then tracks the live requirement and its completion
//! turn by turn ([`detector`]). Phase two picks a knowledge triple and writes
//! the reply with a copy-capable decoder ([`responder`]).

pub mod checkpoint;
pub mod corpus;
pub mod detector;
pub mod error;
pub mod graph;
pub mod labels;
pub mod metrics;
pub mod nn;
pub mod planner;
pub mod responder;
pub mod text;

pub use error::{Error, Result};
pub use labels::{Domain, Requirement};
