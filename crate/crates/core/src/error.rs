use thiserror::Error;

/// Errors produced anywhere in the sounding chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("coincident points: transmitter and receiver share a position")]
    CoincidentPoints,

    #[error("multipath delay {delay_s:e} s outside unambiguous range [0, {max_s:e})")]
    DelayOutOfRange { delay_s: f64, max_s: f64 },

    #[error("schedule overrun: slots need {needed_s:e} s but snapshot period is {period_s:e} s")]
    ScheduleOverrun { needed_s: f64, period_s: f64 },

    #[error("invalid link ({rx}, {tx})")]
    InvalidLink { rx: usize, tx: usize },

    #[error("link ({rx}, {tx}) not present in tensor")]
    MissingLink { rx: usize, tx: usize },

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("too few active subcarriers: {0}")]
    TooFewSubcarriers(usize),

    #[error("all-zero input: {0}")]
    ZeroInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("requested {requested} tapers but only {available} are well concentrated")]
    TooManyTapers { requested: usize, available: usize },

    #[error("degenerate eigen-decomposition: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(transparent)]
    Archive(#[from] crate::archive::ArchiveError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
