use std::io;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlowError {
    #[error("sequence tracking requested for non-TCP protocol {0}")]
    NotTcp(u8),
}

/// The linear counter bitmap has no zero cells left.
#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
#[error("linear counter saturated: no zero cells, estimate unbounded")]
pub struct Saturated;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PriorityError {
    #[error("priority table full ({0} flows)")]
    AtCapacity(usize),
}

/// A line-oriented input (priority keys, config, truth sidecar) failed to parse.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl LineError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        LineError {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error(transparent)]
    Parse(#[from] LineError),
    #[error("{0} must be at least 1")]
    ZeroSize(&'static str),
    #[error("cms_depth is fixed at 3, got {0}")]
    Depth(usize),
    #[error("hash seeds must be pairwise distinct")]
    DuplicateSeeds,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a classic pcap file (magic {0:#010x})")]
    BadMagic(u32),
    #[error("pcap global header truncated")]
    ShortHeader,
    #[error("unsupported pcap link type {0}")]
    UnsupportedLinkType(u32),
    #[error("invalid synthetic trace config: {0}")]
    Synth(String),
}
