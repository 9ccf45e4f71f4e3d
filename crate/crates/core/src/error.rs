use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("depth map is empty")]
    EmptyDepthMap,
    #[error("depth map has {actual} values, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("region does not intersect the frame")]
    EmptyRegion,
    #[error("invalid camera model: {0}")]
    InvalidCamera(&'static str),
    #[error("invalid pixel box")]
    InvalidBox,
    #[error("box has zero height, aspect ratio undefined")]
    ZeroHeightBox,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("fewer than two populated bins, correlation undefined")]
    UndefinedCorrelation,
    #[error("simulation fault: {0}")]
    SimulationFault(String),
    #[error("packet too short: {0} bytes")]
    Truncated(usize),
    #[error("bad magic byte {0:#04x}")]
    BadMagic(u8),
    #[error("unsupported packet version {0}")]
    UnsupportedVersion(u8),
    #[error("checksum mismatch: stored {stored:#06x}, computed {computed:#06x}")]
    Checksum { stored: u16, computed: u16 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
