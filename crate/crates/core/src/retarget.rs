//! Hand-to-end-effector retargeting.
//!
//! Positions are expressed as coefficients `μ` of the hand displacement in
//! the human calibration axes and replayed on the robot axes:
//!
//! ```text
//! μᵢ  = eₕⁱ · (pₕ − oₕ) / |eₕⁱ|²          i ∈ {x, y, z}
//! pᵣ  = oᵣ + μₓ eᵣˣ + μᵧ eᵣʸ + η μ_z eᵣᶻ
//! ```
//!
//! Rotations keep the hand's rotation relative to its latched reference and
//! transport it to the robot by conjugation with the basis change `P`:
//!
//! ```text
//! Mᵣᵗ = Mᵣ⁰ · P⁻¹ · (Mₕ⁰)⁻¹ · Mₕᵗ · P
//! ```

use crate::calibration::{CalibrationFrame, SharedMap};
use crate::geometry::{orthonormalize, Pose, Rot3, Vec3};
use crate::time::Timestamp;
use crate::{Error, Result};

/// Projection coefficients of a hand point in the human calibration axes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mu {
    pub mu_x: f64,
    pub mu_y: f64,
    pub mu_z: f64,
}

pub fn project_mu(p_h: Vec3, frame_h: &CalibrationFrame) -> Mu {
    let d = p_h - frame_h.origin();
    let coeff = |e: Vec3| e.dot(d) / e.norm_squared();
    Mu {
        mu_x: coeff(frame_h.ex()),
        mu_y: coeff(frame_h.ey()),
        mu_z: coeff(frame_h.ez()),
    }
}

pub fn map_position(p_h: Vec3, map: &SharedMap) -> Vec3 {
    let mu = project_mu(p_h, &map.human);
    let r = &map.robot;
    r.origin() + r.ex() * mu.mu_x + r.ey() * mu.mu_y + r.ez() * (map.eta() * mu.mu_z)
}

/// Basis change `P = (Mₕ⁰)⁻¹ · Êₕ · Êᵣ⁻¹ · Mᵣ⁰`, where `Ê` is a side's
/// orthonormalized calibration basis. Makes the calibration axes of the two
/// sides correspond and leaves the robot at `Mᵣ⁰` while the hand is at `Mₕ⁰`.
pub fn compute_basis_change(map: &SharedMap, m_h0: &Rot3, m_r0: &Rot3) -> Result<Rot3> {
    let eh = map.human.basis();
    let er = map.robot.basis();
    let p = m_h0.inverse() * eh * er.inverse() * *m_r0;
    orthonormalize(p.matrix())
}

/// Target end-effector rotation for hand rotation `m_ht`.
pub fn map_rotation(m_ht: &Rot3, m_h0: &Rot3, m_r0: &Rot3, p: &Rot3) -> Result<Rot3> {
    if m_ht == m_h0 {
        return Ok(*m_r0);
    }
    let relative_h = m_h0.inverse() * *m_ht;
    let relative_r = p.inverse() * relative_h * *p;
    orthonormalize((*m_r0 * relative_r).matrix())
}

/// Hand joints in the usual 21-point layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Joint {
    Wrist = 0,
    ThumbCmc,
    ThumbMcp,
    ThumbIp,
    ThumbTip,
    IndexMcp,
    IndexPip,
    IndexDip,
    IndexTip,
    MiddleMcp,
    MiddlePip,
    MiddleDip,
    MiddleTip,
    RingMcp,
    RingPip,
    RingDip,
    RingTip,
    PinkyMcp,
    PinkyPip,
    PinkyDip,
    PinkyTip,
}

pub const JOINT_COUNT: usize = 21;

impl Joint {
    pub const ALL: [Joint; JOINT_COUNT] = [
        Joint::Wrist,
        Joint::ThumbCmc,
        Joint::ThumbMcp,
        Joint::ThumbIp,
        Joint::ThumbTip,
        Joint::IndexMcp,
        Joint::IndexPip,
        Joint::IndexDip,
        Joint::IndexTip,
        Joint::MiddleMcp,
        Joint::MiddlePip,
        Joint::MiddleDip,
        Joint::MiddleTip,
        Joint::RingMcp,
        Joint::RingPip,
        Joint::RingDip,
        Joint::RingTip,
        Joint::PinkyMcp,
        Joint::PinkyPip,
        Joint::PinkyDip,
        Joint::PinkyTip,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        const NAMES: [&str; JOINT_COUNT] = [
            "wrist",
            "thumb_cmc",
            "thumb_mcp",
            "thumb_ip",
            "thumb_tip",
            "index_mcp",
            "index_pip",
            "index_dip",
            "index_tip",
            "middle_mcp",
            "middle_pip",
            "middle_dip",
            "middle_tip",
            "ring_mcp",
            "ring_pip",
            "ring_dip",
            "ring_tip",
            "pinky_mcp",
            "pinky_pip",
            "pinky_dip",
            "pinky_tip",
        ];
        NAMES[self.index()]
    }
}

/// 21 hand joints. The wrist is always present; other joints may be missing
/// when the tracker loses them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandKeypoints {
    joints: [Option<Vec3>; JOINT_COUNT],
}

impl HandKeypoints {
    pub fn new(joints: [Vec3; JOINT_COUNT]) -> Result<Self> {
        Self::from_partial(joints.map(Some))
    }

    pub fn from_partial(joints: [Option<Vec3>; JOINT_COUNT]) -> Result<Self> {
        if joints[Joint::Wrist.index()].is_none() {
            return Err(Error::MissingKeypoint(Joint::Wrist.name()));
        }
        if joints.iter().flatten().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("keypoint"));
        }
        Ok(Self { joints })
    }

    pub fn from_array(a: [[f64; 3]; JOINT_COUNT]) -> Result<Self> {
        Self::new(a.map(Vec3::from_array))
    }

    pub fn get(&self, joint: Joint) -> Option<Vec3> {
        self.joints[joint.index()]
    }

    pub fn require(&self, joint: Joint) -> Result<Vec3> {
        self.get(joint).ok_or(Error::MissingKeypoint(joint.name()))
    }

    /// All joints as plain coordinates, if none is missing.
    pub fn to_array(&self) -> Option<[[f64; 3]; JOINT_COUNT]> {
        let mut out = [[0.0; 3]; JOINT_COUNT];
        for (slot, joint) in out.iter_mut().zip(self.joints.iter()) {
            *slot = joint.as_ref()?.to_array();
        }
        Some(out)
    }

    pub fn pinch_distance(&self) -> Result<f64> {
        Ok(self.require(Joint::ThumbTip)?.distance(self.require(Joint::IndexTip)?))
    }
}

/// One timestamped frame of the operator's hand stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandSample {
    pub t: Timestamp,
    pub keypoints: HandKeypoints,
    /// Hand transform; its rotation is `Mₕᵗ`.
    pub transform: Pose,
}

/// Which hand point drives the end-effector position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TrackedPointStrategy {
    Wrist,
    ThumbIndexMidpoint,
    /// Index-finger metacarpophalangeal joint: steady during grasps and
    /// topologically consistent with a parallel gripper.
    #[default]
    IndexMcp,
}

pub fn select_tracked_point(kp: &HandKeypoints, strategy: TrackedPointStrategy) -> Result<Vec3> {
    match strategy {
        TrackedPointStrategy::Wrist => kp.require(Joint::Wrist),
        TrackedPointStrategy::ThumbIndexMidpoint => {
            let thumb = kp.require(Joint::ThumbTip)?;
            let index = kp.require(Joint::IndexTip)?;
            Ok((thumb + index) * 0.5)
        }
        TrackedPointStrategy::IndexMcp => kp.require(Joint::IndexMcp),
    }
}

/// Pinch-to-gripper thresholds, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperConfig {
    pub d_close: f64,
    pub d_open: f64,
    pub hysteresis: f64,
}

impl Default for GripperConfig {
    fn default() -> Self {
        Self {
            d_close: 0.02,
            d_open: 0.08,
            hysteresis: 0.01,
        }
    }
}

impl GripperConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = self.d_close.is_finite() && self.d_open.is_finite() && self.hysteresis.is_finite();
        if !finite || self.d_close <= 0.0 || self.d_open <= self.d_close {
            return Err(Error::BadConfig("gripper thresholds need d_open > d_close > 0"));
        }
        if self.hysteresis < 0.0 || self.hysteresis_band() >= 0.5 {
            return Err(Error::BadConfig("gripper hysteresis out of range"));
        }
        Ok(())
    }

    /// Hysteresis expressed in aperture units.
    pub fn hysteresis_band(&self) -> f64 {
        self.hysteresis / (self.d_open - self.d_close)
    }
}

/// Continuous aperture plus the latched binary open/close command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperState {
    /// 0 = fully closed, 1 = fully open.
    pub aperture: f64,
    pub closed: bool,
}

impl Default for GripperState {
    fn default() -> Self {
        Self {
            aperture: 1.0,
            closed: false,
        }
    }
}

impl GripperState {
    /// The binary command as a real: 1.0 open, 0.0 closed.
    pub fn command(&self) -> f64 {
        if self.closed {
            0.0
        } else {
            1.0
        }
    }
}

pub fn gripper_from_pinch(kp: &HandKeypoints, cfg: &GripperConfig, prev: GripperState) -> Result<GripperState> {
    cfg.validate()?;
    let d = kp.pinch_distance()?;
    let aperture = ((d - cfg.d_close) / (cfg.d_open - cfg.d_close)).clamp(0.0, 1.0);
    let band = cfg.hysteresis_band();
    let closed = if prev.closed {
        aperture <= 0.5 + band
    } else {
        aperture < 0.5 - band
    };
    Ok(GripperState { aperture, closed })
}

/// Rotation references latched when the session goes live.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationRefs {
    pub m_h0: Rot3,
    pub m_r0: Rot3,
    pub p: Rot3,
}

impl RotationRefs {
    /// Latches `m_h0`, `m_r0` and derives `P` from the map's calibration bases.
    pub fn latch(map: &SharedMap, m_h0: Rot3, m_r0: Rot3) -> Result<Self> {
        let p = compute_basis_change(map, &m_h0, &m_r0)?;
        Ok(Self { m_h0, m_r0, p })
    }
}

/// End-effector target produced from one hand sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotCommand {
    pub position: Vec3,
    pub rotation: Rot3,
    pub gripper: GripperState,
}

impl RobotCommand {
    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.rotation)
    }
}

pub fn retarget_step(
    sample: &HandSample,
    map: Option<&SharedMap>,
    refs: Option<&RotationRefs>,
    strategy: TrackedPointStrategy,
    gripper_cfg: &GripperConfig,
    prev_gripper: GripperState,
) -> Result<RobotCommand> {
    let (Some(map), Some(refs)) = (map, refs) else {
        return Err(Error::NotCalibrated);
    };
    let point = select_tracked_point(&sample.keypoints, strategy)?;
    let position = map_position(point, map);
    let rotation = map_rotation(&sample.transform.rotation, &refs.m_h0, &refs.m_r0, &refs.p)?;
    let gripper = gripper_from_pinch(&sample.keypoints, gripper_cfg, prev_gripper)?;
    Ok(RobotCommand {
        position,
        rotation,
        gripper,
    })
}

/// Stateful wrapper around [`retarget_step`] that carries the gripper latch.
#[derive(Debug, Clone, PartialEq)]
pub struct Retargeter {
    pub map: SharedMap,
    pub refs: RotationRefs,
    pub strategy: TrackedPointStrategy,
    pub gripper_cfg: GripperConfig,
    pub gripper: GripperState,
}

impl Retargeter {
    pub fn new(map: SharedMap, refs: RotationRefs) -> Self {
        Self {
            map,
            refs,
            strategy: TrackedPointStrategy::default(),
            gripper_cfg: GripperConfig::default(),
            gripper: GripperState::default(),
        }
    }

    pub fn step(&mut self, sample: &HandSample) -> Result<RobotCommand> {
        let cmd = retarget_step(
            sample,
            Some(&self.map),
            Some(&self.refs),
            self.strategy,
            &self.gripper_cfg,
            self.gripper,
        )?;
        self.gripper = cmd.gripper;
        Ok(cmd)
    }
}
