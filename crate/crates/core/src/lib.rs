//! Hand-to-robot teleoperation retargeting.
//!
//! This crate holds the allocation-light, IO-free half of the engine:
//!
//! * [`geometry`]: vectors, validated rotation matrices and poses.
//! * [`calibration`]: three-anchor calibration frames, human/robot pairing and
//!   dwell-based anchor capture.
//! * [`retarget`]: position mapping through anchor-basis projection, rotation
//!   mapping through basis conjugation, tracked-point selection and pinch
//!   gripper inference.
//! * [`control`]: pose smoothing and the serial (one command in flight)
//!   scheduler with a bounded queueing-delay budget.
//! * [`simulator`]: a deterministic task-space arm and scripted/replayed hand
//!   streams, plus a discrete-event closed-loop harness.
//! * [`retrieval`]: exact KNN over first-frame features with majority-vote
//!   episode selection.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the session
//! service and the command line live in the `teleop` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod calibration;
pub mod control;
mod error;
pub mod geometry;
pub mod retarget;
pub mod retrieval;
pub mod simulator;
pub mod time;

pub use error::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;
