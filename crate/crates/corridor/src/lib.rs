//! File formats, reports, the live HTTP control room and the `corridor`
//! command line around [`corridor_core`].

pub mod demo;
pub mod nmea_file;
pub mod report;
pub mod scenario;
pub mod server;

use std::path::PathBuf;

use corridor_core::sim::{self, RunMode, RunOutput};

pub use scenario::ScenarioFile;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl LoadError {
    /// Process exit code: 1 for I/O, 2 for validation.
    pub fn exit_code(&self) -> u8 {
        match self {
            LoadError::Io { .. } => 1,
            LoadError::Invalid(_) => 2,
        }
    }
}

/// Runs the scenario once per mode, with an optional seed override.
pub fn run_modes(file: &ScenarioFile, modes: &[RunMode], seed: Option<u64>) -> Result<Vec<RunOutput>, LoadError> {
    let base = file.to_scenario()?;
    let modes = if modes.is_empty() { vec![base.config.mode] } else { modes.to_vec() };
    modes
        .into_iter()
        .map(|mode| {
            let mut s = base.clone();
            s.config.mode = mode;
            if let Some(seed) = seed {
                s.config.seed = seed;
                s.config.network.seed = seed;
            }
            sim::run(s).map_err(|e| LoadError::Invalid(e.to_string()))
        })
        .collect()
}
