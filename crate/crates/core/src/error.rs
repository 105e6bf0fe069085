use alloc::string::String;

/// Errors raised by the retargeting core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("matrix is singular or has non-positive determinant")]
    SingularMatrix,
    #[error("rotation matrix fails orthonormality or determinant check")]
    InvalidRotation,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("calibration anchors are collinear")]
    CollinearAnchors,
    #[error("anchor axes deviate {deviation_deg:.2} deg from perpendicular")]
    AnchorsNotPerpendicular { deviation_deg: f64 },
    #[error("human and robot frame axis lengths differ by {difference:.4} m on {axis}")]
    ScaleMismatch { axis: &'static str, difference: f64 },
    #[error("eta must be positive and finite, got {0}")]
    InvalidEta(f64),
    #[error("sample timestamps must be non-decreasing")]
    NonMonotonicTimestamp,
    #[error("invalid dwell detector parameters")]
    InvalidDwellConfig,

    #[error("keypoint {0} is missing")]
    MissingKeypoint(&'static str),
    #[error("invalid configuration: {0}")]
    BadConfig(&'static str),
    #[error("session is not calibrated")]
    NotCalibrated,

    #[error("scheduler is stopped")]
    SchedulerStopped,
    #[error("unknown ticket {0}")]
    UnknownTicket(u64),

    #[error("replay stream exhausted")]
    ReplayExhausted,
    #[error("corrupt episode: {0}")]
    CorruptEpisode(&'static str),

    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("duplicate episode id {0}")]
    DuplicateId(String),
    #[error("n must be in 1..={max}, got {n}")]
    BadN { n: usize, max: usize },
    #[error("feature vector has zero norm")]
    ZeroVector,
}
