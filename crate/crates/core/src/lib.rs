//! Simulation toolkit for local and shuffle differential privacy deployed
//! over lossy, adversarial networks.
//!
//! The crate is organized by subsystem:
//!
//! - [`ldp`]: frequency-estimation mechanisms, estimators, exact LDP checks
//!   and budget accounting.
//! - [`netsim`]: integer-tick discrete-event network with lossy links.
//! - [`adversary`]: network adversaries (drop, replay, delay), corrupted
//!   users, and a passive traffic observer.
//! - [`shuffle`]: shuffler routing, discovery and trip-wire verification.
//! - [`defense`]: replay deduplication, loss anomaly detection, dummy
//!   injection and random sampling.
//! - [`cache`]: privacy-aware caching of noisy answers.
//! - [`harness`]: configuration, paired clean/attacked experiments, sweeps
//!   and CSV output.

pub mod adversary;
pub mod cache;
pub mod defense;
mod error;
pub mod harness;
pub mod ldp;
pub mod netsim;
pub mod rng;
pub mod shuffle;
mod stats;

pub use error::{Error, Result};
pub use ldp::{ClientReport, FrequencyEstimate, Payload, ProtocolKind, ProtocolSpec};
pub use rng::{RngStream, SeedTree};

/// Simulation time in integer ticks.
pub type Tick = u64;
