//! Knowledge-graph-grounded diagnostic reasoning and confidence scoring.

pub mod claims;
pub mod confidence;
pub mod config;
pub mod criteria;
pub mod datasets;
pub mod egdr;
pub mod evalharness;
pub mod exec;
pub mod kgstore;
pub mod providers;
pub mod retrieval;
