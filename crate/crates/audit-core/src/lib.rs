//! Core pipeline for auditing LLMs as scholar recommenders.
//!
//! Stages, each behind its own module and file format:
//! factorial prompt grid ([`grid`]) -> raw model replies ([`response`]) ->
//! five-way output classification ([`classify`]) -> ground-truth linkage
//! ([`corpus`], [`resolve`]) -> per-cell technical and representativeness
//! metrics ([`evaluate`]) -> variance decomposition and robust inference
//! ([`stats`]) -> per-model composites and report tables ([`report`]).

pub mod classify;
pub mod corpus;
pub mod error;
pub mod evaluate;
pub mod grid;
pub mod io;
pub mod report;
pub mod resolve;
pub mod response;
pub mod stats;

pub use error::{AuditError, Result};
