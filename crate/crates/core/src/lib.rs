//! Controlled analogical-reasoning and in-context-learning environment.
//!
//! Task generators (`raven`, `salt`, `listfn`), difficulty annotation,
//! chat-model access (`gateway`), the System 1 / System 2 inference
//! pipelines (`pipeline`) and the scoring/report layer (`scoring`).

pub mod dataset;
pub mod difficulty;
pub mod gateway;
pub mod listfn;
pub mod model;
pub mod pipeline;
pub mod raven;
pub mod salt;
pub mod scoring;
pub mod seeding;
