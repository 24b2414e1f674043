//! Distributed off-policy actor-critic training with prioritized replay
//! buffers whose demonstration zones are refreshed from agent successes.

pub mod env;
pub mod filter;
pub mod netlib;
pub mod rng;
pub mod types;
pub mod der;
pub mod replay;
pub mod learner;
pub mod worker;
pub mod episode_io;
pub mod config;
pub mod harness;
