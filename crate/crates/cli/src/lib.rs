//! Library surface of the `seqsmooth` CLI: stage entry points, pipeline
//! orchestration with content-hash caching, and the ablation runner.

pub mod ablate;
pub mod commands;
pub mod config;
pub mod pipeline;
