//! Closed-loop architecture synthesis harness: candidate code is checked for
//! validity, scored with a one-epoch proxy, filtered for textual novelty with
//! MinHash/LSH, and folded back into a growing training corpus.

pub mod corpus;
pub mod gateway;
pub mod lexshingle;
pub mod novelty;
pub mod orchestrator;
pub mod report;
pub mod sketch;
pub mod stats;
