use std::path::PathBuf;

use thiserror::Error;

/// Problems detected while validating configuration or loading inputs,
/// always before any simulation starts.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error("address {addr:#x} is outside the {bits}-bit physical address space")]
    AddressOutOfRange { addr: u64, bits: u32 },
    #[error("address {addr:#x} falls in reserved RNG row {row}")]
    ReservedRow { addr: u64, row: u32 },
}

impl ConfigError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        ConfigError::Invalid(msg.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

/// A metric that cannot be computed for the given inputs.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("core {0} retired no instructions")]
    NoInstructions(usize),
    #[error("core {0} has zero memory stall time when run alone")]
    ZeroAloneMcpi(usize),
    #[error("unfairness needs at least two defined slowdowns, got {0}")]
    TooFewSlowdowns(usize),
    #[error("no alone run for core {0}")]
    MissingAloneRun(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Trace { path: PathBuf, source: TraceParseError },
    #[error("{path}: {source}")]
    TraceAddress { path: PathBuf, source: ConfigError },
    #[error("{0}")]
    Metric(#[from] MetricError),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("simulation did not finish within {0} core cycles")]
    CycleLimit(u64),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
