//! Learns which parameters of a nonlinear system admit steady-state
//! solutions, where those solutions sit, and whether they are linearly stable.
//!
//! The pipeline: an analytic Gray-Scott oracle labels parameter samples
//! ([`system`]), Gaussian-mixture target fields encode the labeled solution
//! sets ([`target`], [`dataset`]), a parameter-solution network pair is
//! trained on both the solution and stability channels ([`network`],
//! [`training`]), and trained models are post-processed into solution sets
//! with K-means clustering, an optimal cut search and stability signs
//! ([`locate`]). [`evaluate`] produces phase diagrams, error tables and a
//! spectral check of the target's kernel decomposition.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod docs;
pub mod evaluate;
pub mod locate;
pub mod network;
pub mod numerics;
pub mod system;
pub mod target;
pub mod training;

/// Crate-wide error type. The CLI maps `Config` to exit code 2 and everything
/// else to exit code 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("checkpoint version {found} not supported (this build reads version {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
