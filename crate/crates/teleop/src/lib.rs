//! Std side of the teleoperation engine: episode files, retrieval features,
//! the session state machine, its WebSocket server and the CLI.

pub mod cli;
pub mod episode;
pub mod features;
pub mod protocol;
pub mod server;
pub mod session;

/// Stable machine-readable code for a core error.
pub fn core_error_code(e: &teleop_core::Error) -> &'static str {
    use teleop_core::Error::*;
    match e {
        SingularMatrix | InvalidRotation => "invalid_rotation",
        NonFinite(_) => "non_finite",
        CollinearAnchors => "collinear_anchors",
        AnchorsNotPerpendicular { .. } => "anchors_not_perpendicular",
        ScaleMismatch { .. } => "scale_mismatch",
        InvalidEta(_) => "invalid_eta",
        NonMonotonicTimestamp => "non_monotonic",
        InvalidDwellConfig | BadConfig(_) => "bad_config",
        MissingKeypoint(_) => "missing_keypoint",
        NotCalibrated => "not_calibrated",
        SchedulerStopped => "scheduler_stopped",
        UnknownTicket(_) => "unknown_ticket",
        ReplayExhausted => "replay_exhausted",
        CorruptEpisode(_) => "corrupt_episode",
        DimensionMismatch { .. } => "dimension_mismatch",
        EmptyInput => "empty_input",
        DuplicateId(_) => "duplicate_id",
        BadN { .. } => "bad_n",
        ZeroVector => "zero_vector",
    }
}
