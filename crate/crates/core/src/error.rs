use thiserror::Error;

use crate::pwl::PwlError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Pwl(#[from] PwlError),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("arc {arc} violates FIFO (min slope {slope} < -1)")]
    Fifo { arc: usize, slope: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no path from {from} to {to}")]
    NoPath { from: u32, to: u32 },
    #[error("{0}")]
    Tuning(String),
    #[error("too many cells: {cells} > cap {cap}; use a larger tau or a smaller destination set")]
    CellCap { cells: usize, cap: usize },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
