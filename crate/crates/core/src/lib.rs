//! Time-elapsed origin-destination flow analysis on discrete-time Markov chains.
//!
//! Flow records are ingested into per-step slices, turned into column-stochastic
//! step operators, and analysed through elapsed operators, net flows,
//! first-passage distances and return-to-origin measures.

pub mod baseline;
pub mod cache;
pub mod geo;
pub mod ingest;
pub mod markov;
pub mod matrix;
pub mod netflow;
pub mod paths;
pub mod root;
pub mod stats;
pub mod synth;
#[cfg(feature = "testkit")]
pub mod testkit;
