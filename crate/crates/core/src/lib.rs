//! Dyadic turn-taking analytics: affective alignment, semantic exploration
//! and information dynamics over user/AI transcripts.

pub mod corpus;
pub mod preprocess;
pub mod providers;
pub mod sentiment;
pub mod alignment;
pub mod exploration;
pub mod infodynamics;
pub mod synthbench;
pub mod simulator;
pub mod report;
pub mod pipeline;
