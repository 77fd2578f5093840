use thiserror::Error;

/// Errors raised by the library. Check failures are reported through
/// `ComparisonReport`, not through this type.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported group: {0}")]
    UnsupportedGroup(String),
    #[error("invalid grid window: {0}")]
    InvalidWindow(String),
    #[error("parameter `{name}` = {value} is not representable on the grid (spacing {spacing})")]
    OffGrid { name: String, value: f64, spacing: f64 },
    #[error("region or path leaves the window: {0}")]
    OutsideWindow(String),
    #[error("grid of {cells} cells exceeds the memory budget of {budget}")]
    MemoryBudget { cells: usize, budget: usize },
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("broken path: {0}")]
    BrokenPath(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io: {0}")]
    Io(String),
    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
