//! Deterministic simulated arm and synthetic hand streams.
//!
//! The arm is simulated in task space: the end-effector moves straight toward
//! its target with bounded linear and angular speed. Seven pseudo-joint
//! angles are synthesized from the pose so episode records can carry a
//! joint-velocity channel with consistent semantics.

use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};
use core::time::Duration;

use crate::calibration::{build_frame, pair_frames, AnchorSet, SharedMap};
use crate::control::{SerialScheduler, SerialSchedulerConfig, Smoother, SmoothingConfig};
use crate::geometry::{Pose, Rot3, Vec3};
use crate::retarget::{
    map_position, HandKeypoints, HandSample, Joint, Retargeter, RobotCommand, RotationRefs, TrackedPointStrategy,
    JOINT_COUNT,
};
use crate::time::{tick_period, Timestamp};
use crate::{Error, Result};

pub const PSEUDO_JOINTS: usize = 7;

/// Fixed mixing matrix from `[x, y, z, roll, pitch, yaw, gripper]` to the
/// seven pseudo-joint angles: unit diagonal, `0.5` on the superdiagonal and
/// `−0.25` on the subdiagonal.
pub const PSEUDO_JOINT_MATRIX: [[f64; PSEUDO_JOINTS]; PSEUDO_JOINTS] = {
    let mut w = [[0.0; PSEUDO_JOINTS]; PSEUDO_JOINTS];
    let mut i = 0;
    while i < PSEUDO_JOINTS {
        w[i][i] = 1.0;
        if i + 1 < PSEUDO_JOINTS {
            w[i][i + 1] = 0.5;
            w[i + 1][i] = -0.25;
        }
        i += 1;
    }
    w
};

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !(min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(Error::BadConfig("workspace box must have positive extent"));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (self.min.x..=self.max.x).contains(&p.x)
            && (self.min.y..=self.max.y).contains(&p.y)
            && (self.min.z..=self.max.z).contains(&p.z)
    }

    pub fn clamp(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimArmConfig {
    /// Linear speed limit, m/s.
    pub v_max: f64,
    /// Angular speed limit, rad/s.
    pub w_max: f64,
    /// Gripper opening rate, fraction per second.
    pub gripper_rate: f64,
    pub workspace: Aabb,
    /// Time for the arm to execute one command.
    pub exec_latency: Duration,
    /// Simulation and capture rate, Hz.
    pub tick_rate: f64,
}

impl Default for SimArmConfig {
    fn default() -> Self {
        Self {
            v_max: 0.5,
            w_max: 2.0,
            gripper_rate: 5.0,
            workspace: Aabb {
                min: Vec3::new(0.1, -0.5, 0.0),
                max: Vec3::new(0.9, 0.5, 0.7),
            },
            exec_latency: Duration::from_millis(50),
            tick_rate: 30.0,
        }
    }
}

impl SimArmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.v_max) && positive(self.w_max) && positive(self.gripper_rate) && positive(self.tick_rate)) {
            return Err(Error::BadConfig("arm limits and tick rate must be positive"));
        }
        if self.exec_latency.is_zero() {
            return Err(Error::BadConfig("execution latency must be positive"));
        }
        Aabb::new(self.workspace.min, self.workspace.max).map(|_| ())
    }

    pub fn tick(&self) -> Duration {
        tick_period(self.tick_rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimArmState {
    pub pose: Pose,
    /// 0 = closed, 1 = open.
    pub gripper: f64,
    pub pseudo_joints: [f64; PSEUDO_JOINTS],
    pub pseudo_joint_vel: [f64; PSEUDO_JOINTS],
    /// Roll/pitch/yaw unwrapped across ticks so joint angles stay continuous.
    rpy: [f64; 3],
}

impl SimArmState {
    /// At rest at `pose`, velocities zero.
    pub fn new(pose: Pose, gripper: f64) -> Self {
        let rpy = pose.rotation.to_rpy();
        let gripper = gripper.clamp(0.0, 1.0);
        Self {
            pose,
            gripper,
            pseudo_joints: pseudo_joints(pose.position, rpy, gripper),
            pseudo_joint_vel: [0.0; PSEUDO_JOINTS],
            rpy,
        }
    }
}

fn pseudo_joints(p: Vec3, rpy: [f64; 3], gripper: f64) -> [f64; PSEUDO_JOINTS] {
    let input = [p.x, p.y, p.z, rpy[0], rpy[1], rpy[2], gripper];
    PSEUDO_JOINT_MATRIX.map(|row| row.iter().zip(input.iter()).map(|(w, v)| w * v).sum())
}

fn unwrap_angle(prev: f64, raw: f64) -> f64 {
    let mut d = (raw - prev) % TAU;
    if d > PI {
        d -= TAU;
    } else if d < -PI {
        d += TAU;
    }
    prev + d
}

/// Advances the arm by `dt` seconds toward `target`.
pub fn arm_tick(state: &SimArmState, target: &RobotCommand, cfg: &SimArmConfig, dt: f64) -> SimArmState {
    debug_assert!(dt > 0.0);
    let step = cfg.v_max * dt;
    let delta = target.position - state.pose.position;
    let dist = delta.norm();
    let position = if dist <= step {
        target.position
    } else {
        state.pose.position + delta * (step / dist)
    };
    let position = cfg.workspace.clamp(position);
    let rotation = state.pose.rotation.step_toward(&target.rotation, cfg.w_max * dt);

    let goal = target.gripper.command();
    let g_step = cfg.gripper_rate * dt;
    let gripper = if (goal - state.gripper).abs() <= g_step {
        goal
    } else {
        state.gripper + g_step * (goal - state.gripper).signum()
    };

    let raw = rotation.to_rpy();
    let rpy = if rotation == state.pose.rotation {
        state.rpy
    } else {
        [0, 1, 2].map(|i| unwrap_angle(state.rpy[i], raw[i]))
    };
    let joints = pseudo_joints(position, rpy, gripper);
    let mut vel = [0.0; PSEUDO_JOINTS];
    for (v, (new, old)) in vel.iter_mut().zip(joints.iter().zip(state.pseudo_joints.iter())) {
        *v = (new - old) / dt;
    }
    SimArmState {
        pose: Pose::new(position, rotation),
        gripper,
        pseudo_joints: joints,
        pseudo_joint_vel: vel,
        rpy,
    }
}

/// Joint offsets of a right hand in its own frame (meters): +x along the
/// fingers, +y toward the thumb, +z out of the back of the hand.
pub const HAND_TEMPLATE: [[f64; 3]; JOINT_COUNT] = [
    [0.000, 0.000, 0.000],
    [0.025, 0.025, -0.005],
    [0.045, 0.045, -0.010],
    [0.065, 0.060, -0.015],
    [0.085, 0.070, -0.020],
    [0.090, 0.025, 0.000],
    [0.125, 0.027, -0.005],
    [0.148, 0.028, -0.012],
    [0.168, 0.029, -0.020],
    [0.092, 0.002, 0.000],
    [0.130, 0.002, -0.005],
    [0.155, 0.002, -0.012],
    [0.176, 0.002, -0.020],
    [0.088, -0.018, 0.000],
    [0.122, -0.020, -0.005],
    [0.145, -0.021, -0.012],
    [0.164, -0.022, -0.020],
    [0.080, -0.036, 0.000],
    [0.105, -0.040, -0.005],
    [0.122, -0.043, -0.010],
    [0.138, -0.046, -0.015],
];

/// Pinch distance of the open template hand.
pub const OPEN_PINCH: f64 = 0.1;
pub const CLOSED_PINCH: f64 = 0.01;

/// Poses the template so its index MCP sits at `mcp`, then places the index
/// fingertip `pinch` meters from the thumb tip along the template's
/// thumb-to-index direction.
pub fn posed_hand(t: Timestamp, mcp: Vec3, rotation: Rot3, pinch: f64) -> HandSample {
    let local = HAND_TEMPLATE.map(Vec3::from_array);
    let thumb = local[Joint::ThumbTip.index()];
    let dir = (local[Joint::IndexTip.index()] - thumb)
        .normalized()
        .expect("template tips are distinct");
    let mut joints = local;
    joints[Joint::IndexTip.index()] = thumb + dir * pinch;

    let wrist = mcp - rotation * local[Joint::IndexMcp.index()];
    let transform = Pose::new(wrist, rotation);
    let keypoints =
        HandKeypoints::new(joints.map(|j| transform.transform_point(j))).expect("template keypoints are finite");
    HandSample {
        t,
        keypoints,
        transform,
    }
}

/// Hand-side and robot-side anchors plus the robot's initial pose, chosen so
/// the scripted paths land inside the default workspace. The human side uses
/// a y-up headset frame; the robot side is z-up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneLayout {
    pub human_anchors: AnchorSet,
    pub robot_anchors: AnchorSet,
    pub robot_initial: Pose,
    /// Hand orientation in the headset frame that corresponds to the robot's
    /// initial orientation.
    pub hand_rest: Rot3,
}

impl Default for SceneLayout {
    fn default() -> Self {
        let h0 = Vec3::new(0.25, 0.80, -0.40);
        let r0 = Vec3::new(0.60, -0.20, 0.05);
        let human_anchors = AnchorSet::new(h0, h0 + Vec3::new(-0.40, 0.0, 0.0), h0 + Vec3::new(0.0, 0.0, 0.30));
        let robot_anchors = AnchorSet::new(r0, r0 + Vec3::new(0.0, 0.40, 0.0), r0 + Vec3::new(-0.30, 0.0, 0.0));
        let mut layout = Self {
            human_anchors,
            robot_anchors,
            robot_initial: Pose::new(Vec3::ZERO, Rot3::rot_x(PI)),
            hand_rest: Rot3::rot_x(-PI / 2.0),
        };
        let start = PickPlace::from_layout(&layout).home;
        layout.robot_initial.position = map_position(start, &layout.shared_map(1.0).expect("default layout pairs"));
        layout
    }
}

impl SceneLayout {
    pub fn shared_map(&self, eta: f64) -> Result<SharedMap> {
        pair_frames(
            build_frame(&self.human_anchors)?,
            build_frame(&self.robot_anchors)?,
            eta,
        )
    }

    /// Point in the human frame at `μ` coordinates (`μ_z` in meters along the unit normal).
    pub fn human_point(&self, mu_x: f64, mu_y: f64, z: f64) -> Vec3 {
        let f = build_frame(&self.human_anchors).expect("layout anchors are valid");
        f.origin() + f.ex() * mu_x + f.ey() * mu_y + f.ez() * z
    }
}

/// Parametric figure-eight style path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lissajous {
    pub center: Vec3,
    pub amplitude: Vec3,
    /// Per-axis frequency, Hz.
    pub frequency: Vec3,
    /// Yaw oscillation amplitude about the hand's z axis, rad.
    pub yaw_amplitude: f64,
    pub rest: Rot3,
    /// Pinch closes for the second half of each period; zero disables it.
    pub pinch_period: f64,
}

impl Lissajous {
    pub fn from_layout(layout: &SceneLayout) -> Self {
        Self {
            center: layout.human_point(0.5, 0.5, 0.15),
            amplitude: Vec3::new(0.08, 0.03, 0.06),
            frequency: Vec3::new(0.2, 0.1, 0.3),
            yaw_amplitude: 0.3,
            rest: layout.hand_rest,
            pinch_period: 4.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let f = self.frequency;
        if !(f.is_finite() && f.x >= 0.0 && f.y >= 0.0 && f.z >= 0.0) || self.pinch_period < 0.0 {
            return Err(Error::BadConfig(
                "lissajous frequencies and period must be non-negative",
            ));
        }
        Ok(())
    }

    pub fn sample(&self, t: Timestamp) -> HandSample {
        let s = t.as_secs_f64();
        let wave = |a: f64, f: f64| a * libm::sin(TAU * f * s);
        let offset = Vec3::new(
            wave(self.amplitude.x, self.frequency.x),
            wave(self.amplitude.y, self.frequency.y),
            wave(self.amplitude.z, self.frequency.z),
        );
        let yaw = wave(self.yaw_amplitude, self.frequency.x);
        let rotation = self.rest * Rot3::rot_z(yaw);
        let closed = self.pinch_period > 0.0 && (s % self.pinch_period) >= self.pinch_period / 2.0;
        let pinch = if closed { CLOSED_PINCH } else { OPEN_PINCH };
        posed_hand(t, self.center + offset, rotation, pinch)
    }
}

/// Pick-and-place demonstration: hold at home, reach above the object,
/// descend, close the pinch, lift, carry, descend, release, retreat, return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PickPlace {
    pub home: Vec3,
    pub pick: Vec3,
    pub place: Vec3,
    /// Approach offset above pick and place along the human frame normal.
    pub lift: Vec3,
    /// Path speed, m/s.
    pub speed: f64,
    /// Duration of each stationary hold.
    pub hold: Duration,
    pub rest: Rot3,
    /// Wrist twist applied while carrying, rad.
    pub carry_twist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Timestamp,
    pub end: Timestamp,
    pub from: Vec3,
    pub to: Vec3,
    pub twist_from: f64,
    pub twist_to: f64,
}

impl Segment {
    pub fn is_hold(&self) -> bool {
        self.from == self.to && self.twist_from == self.twist_to
    }
}

/// Time-parametrized plan of a [`PickPlace`] script.
#[derive(Debug, Clone, PartialEq)]
pub struct PickPlaceSchedule {
    pub segments: Vec<Segment>,
    pub grasp_time: Timestamp,
    pub release_time: Timestamp,
}

impl PickPlaceSchedule {
    pub fn duration(&self) -> Duration {
        self.segments.last().map_or(Duration::ZERO, |s| s.end - Timestamp::ZERO)
    }

    pub fn holds(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.is_hold())
    }
}

impl PickPlace {
    pub fn from_layout(layout: &SceneLayout) -> Self {
        let f = build_frame(&layout.human_anchors).expect("layout anchors are valid");
        Self {
            home: layout.human_point(0.5, 0.5, 0.20),
            pick: layout.human_point(0.25, 0.7, 0.03),
            place: layout.human_point(0.75, 0.3, 0.03),
            lift: f.ez() * 0.12,
            speed: 0.2,
            hold: Duration::from_secs(1),
            rest: layout.hand_rest,
            carry_twist: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.speed.is_finite() && self.speed > 0.0) || self.hold.is_zero() {
            return Err(Error::BadConfig("pick_place speed and hold must be positive"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> PickPlaceSchedule {
        let above_pick = self.pick + self.lift;
        let above_place = self.place + self.lift;
        let tw = self.carry_twist;
        // (destination, twist at destination); holds repeat the previous point.
        let plan: [(Option<(Vec3, f64)>, bool); 12] = [
            (None, false),
            (Some((above_pick, 0.0)), false),
            (Some((self.pick, 0.0)), false),
            (None, true),
            (Some((above_pick, 0.0)), false),
            (Some((above_place, tw)), false),
            (Some((self.place, tw)), false),
            (None, true),
            (Some((above_place, tw)), false),
            (Some((above_place, 0.0)), false),
            (Some((self.home, 0.0)), false),
            (None, false),
        ];

        let mut segments = Vec::new();
        let mut now = Timestamp::ZERO;
        let mut at = (self.home, 0.0);
        let mut grasp_time = Timestamp::ZERO;
        let mut release_time = Timestamp::ZERO;
        let mut grasped = false;
        for (dest, marks_pinch) in plan {
            let (to, duration) = match dest {
                Some(next) => {
                    let dist = (next.0 - at.0).norm();
                    let turn = (next.1 - at.1).abs();
                    // Pure twists take as long as turning at 1 rad/s.
                    let secs = (dist / self.speed).max(turn);
                    (next, Duration::from_nanos(libm::round(secs * 1e9) as u64))
                }
                None => (at, self.hold),
            };
            if duration.is_zero() {
                continue;
            }
            let end = now + duration;
            if marks_pinch {
                let mid = now + duration / 2;
                if grasped {
                    release_time = mid;
                } else {
                    grasp_time = mid;
                    grasped = true;
                }
            }
            segments.push(Segment {
                start: now,
                end,
                from: at.0,
                to: to.0,
                twist_from: at.1,
                twist_to: to.1,
            });
            now = end;
            at = to;
        }
        PickPlaceSchedule {
            segments,
            grasp_time,
            release_time,
        }
    }

    pub fn sample(&self, schedule: &PickPlaceSchedule, t: Timestamp) -> HandSample {
        let seg = schedule
            .segments
            .iter()
            .find(|s| t < s.end)
            .or(schedule.segments.last())
            .expect("schedule has segments");
        let span = (seg.end - seg.start).as_secs_f64();
        let u = (t.saturating_since(seg.start).as_secs_f64() / span).clamp(0.0, 1.0);
        let mcp = seg.from.lerp(seg.to, u);
        let twist = seg.twist_from + (seg.twist_to - seg.twist_from) * u;
        let closed = t >= schedule.grasp_time && t < schedule.release_time;
        let pinch = if closed { CLOSED_PINCH } else { OPEN_PINCH };
        posed_hand(t, mcp, self.rest * Rot3::rot_z(twist), pinch)
    }
}

/// A recorded hand stream replayed at a speed multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayStream {
    samples: Vec<HandSample>,
    speed: f64,
    frame: Duration,
}

impl ReplayStream {
    pub fn new(samples: Vec<HandSample>, speed: f64) -> Result<Self> {
        if !(speed.is_finite() && speed > 0.0) {
            return Err(Error::BadConfig("replay speed must be positive"));
        }
        let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
            return Err(Error::CorruptEpisode("no samples"));
        };
        if samples.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::CorruptEpisode("timestamps not strictly increasing"));
        }
        let frame = if samples.len() > 1 {
            (last.t - first.t) / (samples.len() as u32 - 1)
        } else {
            tick_period(30.0)
        };
        Ok(Self { samples, speed, frame })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Playback length at the configured speed.
    pub fn duration(&self) -> Duration {
        let recorded = self.samples[self.samples.len() - 1].t - self.samples[0].t + self.frame;
        Duration::from_secs_f64(recorded.as_secs_f64() / self.speed)
    }

    /// The recorded sample active at stream time `t`, re-stamped with `t`.
    pub fn sample(&self, t: Timestamp) -> Result<HandSample> {
        let origin = self.samples[0].t;
        let recorded = origin + Duration::from_nanos(libm::round(t.as_nanos() as f64 * self.speed) as u64);
        let last = &self.samples[self.samples.len() - 1];
        if recorded >= last.t + self.frame {
            return Err(Error::ReplayExhausted);
        }
        let idx = self.samples.partition_point(|s| s.t <= recorded).saturating_sub(1);
        Ok(HandSample { t, ..self.samples[idx] })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Script {
    Lissajous(Lissajous),
    PickPlace(PickPlace, PickPlaceSchedule),
}

impl Script {
    pub fn lissajous(params: Lissajous) -> Result<Self> {
        params.validate()?;
        Ok(Script::Lissajous(params))
    }

    pub fn pick_place(params: PickPlace) -> Result<Self> {
        params.validate()?;
        let schedule = params.schedule();
        Ok(Script::PickPlace(params, schedule))
    }
}

/// Where a session's hand samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum HandStreamSpec {
    Scripted(Script),
    Replay(ReplayStream),
    /// Samples arrive from an operator over the network.
    Live,
}

pub fn hand_stream_next(spec: &HandStreamSpec, t: Timestamp) -> Result<HandSample> {
    match spec {
        HandStreamSpec::Scripted(Script::Lissajous(l)) => Ok(l.sample(t)),
        HandStreamSpec::Scripted(Script::PickPlace(p, schedule)) => Ok(p.sample(schedule, t)),
        HandStreamSpec::Replay(r) => r.sample(t),
        HandStreamSpec::Live => Err(Error::BadConfig("live streams are fed by the operator")),
    }
}

/// What happened during one [`ClosedLoop::on_hand_sample`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopTick {
    pub t: Timestamp,
    /// Raw retargeted command (the recorded action).
    pub command: RobotCommand,
    /// Command after smoothing, as submitted to the scheduler.
    pub smoothed: RobotCommand,
    pub arm: SimArmState,
}

/// Retargeting, smoothing, serial scheduling and the simulated arm wired
/// together and driven by hand-sample timestamps.
///
/// Commands complete `exec_latency` after dispatch. Between hand samples the
/// arm integrates toward the most recently dispatched target, stopping at
/// each completion so the next dispatch happens at its exact time.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub retargeter: Retargeter,
    pub smoother: Smoother,
    pub scheduler: SerialScheduler,
    pub arm_cfg: SimArmConfig,
    arm: SimArmState,
    now: Timestamp,
    target: Option<RobotCommand>,
    completion_due: Option<(u64, Timestamp)>,
}

impl ClosedLoop {
    pub fn new(
        retargeter: Retargeter,
        smoothing: SmoothingConfig,
        scheduler: SerialSchedulerConfig,
        arm_cfg: SimArmConfig,
        initial: SimArmState,
        start: Timestamp,
    ) -> Result<Self> {
        arm_cfg.validate()?;
        let mut smoother = Smoother::new(smoothing)?;
        smoother.reset(Some(initial.pose));
        Ok(Self {
            retargeter,
            smoother,
            scheduler: SerialScheduler::new(scheduler),
            arm_cfg,
            arm: initial,
            now: start,
            target: None,
            completion_due: None,
        })
    }

    pub fn arm(&self) -> &SimArmState {
        &self.arm
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    /// The target the arm is currently moving toward.
    pub fn active_target(&self) -> Option<&RobotCommand> {
        self.target.as_ref()
    }

    fn integrate(&mut self, to: Timestamp) {
        if to <= self.now {
            return;
        }
        if let Some(target) = &self.target {
            let dt = (to - self.now).as_secs_f64();
            self.arm = arm_tick(&self.arm, target, &self.arm_cfg, dt);
        }
        self.now = to;
    }

    fn dispatched(&mut self, ticket: Option<crate::control::CommandTicket>) {
        if let Some(t) = ticket {
            let at = t.dispatched_at.expect("dispatched ticket has a time");
            self.target = Some(t.command);
            self.completion_due = Some((t.id, at + self.arm_cfg.exec_latency));
        }
    }

    /// Runs completions and arm motion up to `t`. Joint velocities are
    /// reported over the whole interval.
    pub fn advance_to(&mut self, t: Timestamp) -> Result<()> {
        if t < self.now {
            return Err(Error::NonMonotonicTimestamp);
        }
        let start = self.now;
        let joints_before = self.arm.pseudo_joints;
        while let Some((id, due)) = self.completion_due {
            if due > t {
                break;
            }
            self.integrate(due);
            self.completion_due = None;
            let next = self.scheduler.complete(id, due)?;
            self.dispatched(next);
        }
        self.integrate(t);
        if t > start {
            let dt = (t - start).as_secs_f64();
            for ((vel, now), before) in self
                .arm
                .pseudo_joint_vel
                .iter_mut()
                .zip(self.arm.pseudo_joints)
                .zip(joints_before)
            {
                *vel = (now - before) / dt;
            }
        }
        Ok(())
    }

    pub fn on_hand_sample(&mut self, sample: &HandSample) -> Result<LoopTick> {
        if sample.t < self.now {
            return Err(Error::NonMonotonicTimestamp);
        }
        let mut retargeter = self.retargeter.clone();
        let command = retargeter.step(sample)?;
        self.advance_to(sample.t)?;
        self.retargeter = retargeter;

        let pose = self.smoother.update(&command.pose());
        let smoothed = RobotCommand {
            position: pose.position,
            rotation: pose.rotation,
            gripper: command.gripper,
        };
        let ticket = self.scheduler.submit(smoothed, sample.t)?;
        self.dispatched(ticket);
        Ok(LoopTick {
            t: sample.t,
            command,
            smoothed,
            arm: self.arm,
        })
    }
}

/// Builds a closed loop for `layout` with rotation references latched from
/// the stream's first sample and the robot's initial pose.
pub fn closed_loop_for_layout(
    layout: &SceneLayout,
    first: &HandSample,
    eta: f64,
    strategy: TrackedPointStrategy,
) -> Result<ClosedLoop> {
    let map = layout.shared_map(eta)?;
    let refs = RotationRefs::latch(&map, first.transform.rotation, layout.robot_initial.rotation)?;
    let mut map = map;
    map.set_p_basis(refs.p);
    let mut retargeter = Retargeter::new(map, refs);
    retargeter.strategy = strategy;
    ClosedLoop::new(
        retargeter,
        SmoothingConfig::default(),
        SerialSchedulerConfig::default(),
        SimArmConfig::default(),
        SimArmState::new(layout.robot_initial, 1.0),
        first.t,
    )
}
