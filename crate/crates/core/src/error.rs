use thiserror::Error;

/// Errors raised anywhere in the simulation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("item {item} is outside the domain 0..{k}")]
    Domain { item: u32, k: u32 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("payload does not match protocol: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("enumeration space too large: {0}")]
    UnsupportedSize(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("routing error: {0}")]
    Routing(String),
    #[error("malformed event log: {0}")]
    Integrity(String),
    #[error("adversary capability error: {0}")]
    Capability(String),
    #[error("shuffler buffer exceeded: batch of {batch} > capacity {capacity}")]
    Backpressure { batch: usize, capacity: usize },
    #[error("no shuffler beacons visible")]
    DiscoveryEmpty,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Configuration(msg.into())
    }
}

/// Attaches the name of the pipeline stage that failed.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
