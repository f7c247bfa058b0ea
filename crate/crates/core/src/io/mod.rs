//! File formats and experiment configuration.

mod config;
mod pnm;
mod trace;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::fit::FitError;
use crate::magnetometry::MagnetometryError;
use crate::scan::ScanError;
use crate::signal::SignalError;
use crate::spin::SpinError;

pub use config::{
    ChannelSection, DipSection, ExperimentConfig, FieldSection, FitSection, HamiltonianSection, LayerSection,
    LineshapeSection, LockinSection, MagnetometrySection, NoiseSection, PatternSection,
    PhantomSection, PsfSection, RegionSection, ScanSection, ScanSetup, Shape, SweepSection,
    TileSection,
};
pub use pnm::{format_pgm, format_ppm, write_pgm, write_ppm, PGM_MAXVAL, PPM_MAXVAL};
pub use trace::{format_trace, parse_trace, read_trace, write_trace, TRACE_HEADER};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Validation(String),
    #[error("config: {0}")]
    Config(String),
    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Spin(#[from] SpinError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Magnetometry(#[from] MagnetometryError),
    #[error(transparent)]
    Scan(#[from] ScanError),
}

pub(crate) fn read_file(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), IoError> {
    std::fs::write(path, contents).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}
