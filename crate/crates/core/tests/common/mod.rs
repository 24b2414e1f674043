#![allow(dead_code)]

pub mod fixtures;
pub mod ledger;
pub mod numerics;
pub mod pipeline;
pub mod replay_checks;
pub mod stats;
