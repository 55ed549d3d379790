//! Discrete-event simulation and coincidence analysis of a heralded
//! single-photon source feeding an atomic-frequency-comb memory.

pub mod analysis;
pub mod chain;
pub mod config;
pub mod detection;
pub mod memory;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod rng;
pub mod scenario;
pub mod source;
pub mod time;
pub mod timestamps;

pub use parallel::ExecMode;
pub use time::{Interval, PeriodicGate, Time};
