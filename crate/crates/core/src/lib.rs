//! Order-dependent test detection for Jest projects.

pub mod config;
pub mod extract;
pub mod permute;
pub mod rewrite;
pub mod discovery;
pub mod orchestrate;
pub mod analysis;
pub mod campaign;
