//! review-arcade: a harness that generates structured LLM reviews of
//! scientific papers, measures their alignment with human reviews, and runs
//! an iterative review-and-edit loop that probes how far taxonomy-constrained
//! edits can move LLM review scores.

pub mod alignment;
pub mod config;
pub mod corpus;
pub mod gateway;
pub mod isi;
pub mod prompts;
pub mod report;
pub mod review;
pub mod runner;
pub mod stats;
