//! Persona persuasion experiments over misinformation corpora.

pub mod corpus;
pub mod persona;
pub mod gateway;
pub mod session;
pub mod plan;
pub mod metrics;
pub mod stats;
pub mod runner;
