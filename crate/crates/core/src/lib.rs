//! Dynamic TDD duplexing and OFDMA resource allocation for tree-structured
//! millimeter-wave relay networks.
//!
//! The crate is organized bottom-up:
//!
//! * [`channel`]: path loss, link states, beamforming gain, interference, SINR, capacity;
//! * [`topology`]: random drops, association and the routing tree;
//! * [`schedule`]: node duplexing modes and the link activity they imply;
//! * [`solver`]: the inner bandwidth/rate allocation for a fixed schedule;
//! * [`scheduler`]: the greedy recursive duplexing search;
//! * [`baselines`]: static LTE-TDD sweep and exhaustive search;
//! * [`harness`]: seeded Monte-Carlo experiments, metrics and outputs.

mod barrier;
pub mod baselines;
pub mod channel;
pub mod config;
pub mod error;
pub mod harness;
pub mod schedule;
pub mod scheduler;
pub mod solver;
pub mod topology;
pub mod units;

pub use config::ScenarioConfig;
pub use error::{Error, Result};
