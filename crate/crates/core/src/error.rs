use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate segment: endpoints {0:?} and {1:?} are closer than 1e-6 m")]
    DegenerateSegment([f64; 2], [f64; 2]),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("obstacle capacity exceeded: {kind} slots = {capacity}, supplied = {supplied}")]
    CapacityExceeded {
        kind: &'static str,
        capacity: usize,
        supplied: usize,
    },
    #[error("non-finite {0} encountered during solve")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("scenario parse error in {path}: {message}")]
    Scenario { path: String, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
