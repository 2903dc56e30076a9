use std::io;

use thiserror::Error;

/// A scenario-file diagnostic tied to a 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at line {line}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event scheduled at {at} but clock is already at {now}")]
    ScheduleInPast { at: f64, now: f64 },

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("malformed trace line {line}: {message}")]
    Trace { line: usize, message: String },

    #[error("no route from node {from} to node {to}")]
    NoRoute { from: u32, to: u32 },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
