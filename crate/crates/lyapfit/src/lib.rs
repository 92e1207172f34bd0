//! Files, configuration, plotting and experiment pipelines on top of
//! [`lyapfit_core`].

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod config;
pub mod experiment;
pub mod io;
pub mod lpformat;
pub mod svg;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Dynamics(#[from] lyapfit_core::dynamics::DynamicsError),
    #[error(transparent)]
    Basis(#[from] lyapfit_core::basis::BasisError),
    #[error(transparent)]
    Miqcp(#[from] lyapfit_core::miqcp::MiqcpError),
    #[error(transparent)]
    Verify(#[from] lyapfit_core::verify::VerifyError),
    #[error(transparent)]
    Metrics(#[from] lyapfit_core::metrics::MetricsError),
    #[error(transparent)]
    Baseline(#[from] lyapfit_core::baselines::BaselineError),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), msg: msg.into() }
    }
}

/// Seconds since construction, for solver time limits.
pub struct WallClock(std::time::Instant);

impl WallClock {
    pub fn start() -> Self {
        Self(std::time::Instant::now())
    }
}

impl lyapfit_core::bnb::Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
