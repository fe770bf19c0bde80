//! Proactive-reactive tolerance of intermittent faults in hierarchical robot
//! swarms.
//!
//! The library is organized around the lifecycle of a swarm trial:
//!
//! 1. [`graph`] builds and validates rooted directed hierarchy graphs paired
//!    with robot positions, and reconfigures them after permanent failures.
//! 2. [`abmc`] runs the adaptive biased minimum consensus over candidate
//!    parent sets to construct per-robot minimum-cost backup paths, which
//!    together form the backup layer of the multiplex network.
//! 3. [`fault`] generates intermittent offset faults and per-hop channel
//!    noise on relative-position measurements.
//! 4. [`detector`] compares primary-path data against backup-path references
//!    with windowed log-likelihood ratio tests, applies dynamic detection and
//!    recovery thresholds, and drives the per-parent routing state machine.
//! 5. [`sim`] ties everything into a discrete-time formation-control
//!    simulation with a moving leader and per-robot tracking metrics.
//! 6. [`harness`] parses scenario configs, runs seeded Monte Carlo sweeps,
//!    and emits CSV reports.

pub mod abmc;
pub mod detector;
pub mod error;
pub mod fault;
pub mod graph;
pub mod harness;
pub mod seed;
pub mod sim;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
