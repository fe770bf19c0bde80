//! Shared error type.

use crate::graph::RobotId;

/// Errors surfaced by graph construction, consensus, detection, simulation,
/// and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A swarm needs at least a leader and a first follower.
    #[error("swarm must contain at least {min} robots, got {got}")]
    InvalidSize { min: usize, got: usize },

    /// Parent links form a cycle or reference unknown robots.
    #[error("topology error: {0}")]
    Topology(String),

    /// Lookup of a robot id that is not part of the graph.
    #[error("unknown robot id {0}")]
    UnknownRobot(RobotId),

    /// Removal left fewer than two survivors.
    #[error("degenerate swarm: {survivors} survivors after removing {failed} robots")]
    DegenerateSwarm { survivors: usize, failed: usize },

    /// The leader is assumed fault-free; removing it is unsupported.
    #[error("unsupported scenario: leader cannot be removed")]
    LeaderFailed,

    /// Rejection sampling could not place a robot.
    #[error("placement failed for robot {robot} after {attempts} attempts")]
    PlacementExhausted { robot: u32, attempts: usize },

    /// Backtracking a backup path visited more hops than robots.
    #[error("backtracking exceeded {0} hops; consensus has not converged")]
    BacktrackCycle(usize),

    /// A statistic was requested from too small a window.
    #[error("insufficient data: got {got} samples, need at least {need}")]
    InsufficientData { got: usize, need: usize },

    /// Covariance stayed singular despite regularization.
    #[error("singular covariance despite regularization (det = {det:.3e}); check eps_cov")]
    SingularCovariance { det: f64 },

    /// Config file violates the schema.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// Decision and truth series do not cover the same ticks.
    #[error("scoring ranges misaligned: {decisions} decision ticks vs {truth} truth ticks")]
    Misaligned { decisions: usize, truth: usize },

    /// A routing decision referenced a backup layer from an older epoch.
    #[error("stale backup layer: built in epoch {layer}, current epoch is {current}")]
    EpochMismatch { layer: u64, current: u64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Build a config error with the offending key path.
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
