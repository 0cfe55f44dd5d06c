//! Persistence, exchange format, HTTP API and operator CLI for the PII
//! annotation quality pipeline.

pub mod api;
pub mod cli;
pub mod exchange;
pub mod simulate;
pub mod store;
