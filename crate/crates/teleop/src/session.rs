//! One operator session: calibration, live retargeting and recording,
//! driven entirely by inbound protocol messages.
//!
//! Phases move Idle → Calibrating → Live ↔ Recording. Completing the second
//! calibrated side switches to Live on its own; `go_live` covers the case
//! where both sides are already known. A rejected message answers with a
//! single `error` and leaves the session exactly as it was.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use teleop_core::calibration::{
    build_frame, pair_frames, AnchorCapture, AnchorLabel, AnchorSet, DwellDetector, SharedMap, DEFAULT_DWELL_RADIUS,
    DEFAULT_DWELL_TIME,
};
use teleop_core::control::{SerialSchedulerConfig, SmoothingConfig, DEFAULT_LATENCY_BUDGET};
use teleop_core::geometry::{Pose, Rot3, Vec3};
use teleop_core::retarget::{
    select_tracked_point, GripperConfig, GripperState, HandKeypoints, HandSample, Joint, Retargeter, RotationRefs,
};
use teleop_core::retrieval::{condition_lookup, GridEmbedder, KnnIndex, SceneSummary};
use teleop_core::simulator::{ClosedLoop, SceneLayout, SimArmConfig, SimArmState};
use teleop_core::time::Timestamp;

use crate::episode::{
    self, AnchorTriple, Anchors, CalibrationSpec, EpisodeError, EpisodeManifest, EpisodeRecord, RetargetState, Source,
    Strategy, SCHEMA_VERSION,
};
use crate::features;
use crate::protocol::{Inbound, Label, NeighborJson, Outbound, Side, StateName};

/// Where finished recordings go.
pub trait EpisodeSink: Send {
    /// Reserves a destination for a new recording of `task_name`.
    fn open(&mut self, task_name: &str) -> Result<String, EpisodeError>;
    fn commit(&mut self, path: &str, manifest: &EpisodeManifest, records: &[EpisodeRecord])
        -> Result<(), EpisodeError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredEpisode {
    pub path: String,
    pub manifest: EpisodeManifest,
    pub records: Vec<EpisodeRecord>,
}

/// Keeps recordings in memory; clones share the same store.
#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    store: Arc<Mutex<Vec<StoredEpisode>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn episodes(&self) -> Vec<StoredEpisode> {
        self.store.lock().expect("sink lock").clone()
    }
}

impl EpisodeSink for MemorySink {
    fn open(&mut self, task_name: &str) -> Result<String, EpisodeError> {
        let n = self.store.lock().expect("sink lock").len();
        Ok(format!("memory://{task_name}/{n}"))
    }

    fn commit(
        &mut self,
        path: &str,
        manifest: &EpisodeManifest,
        records: &[EpisodeRecord],
    ) -> Result<(), EpisodeError> {
        // Same validation as a file write.
        episode::write_episode(manifest, records, std::io::sink())?;
        self.store.lock().expect("sink lock").push(StoredEpisode {
            path: path.to_owned(),
            manifest: manifest.clone(),
            records: records.to_vec(),
        });
        Ok(())
    }
}

/// Writes `<dir>/<task>_<nnnn>.h2r.jsonl`, picking the first free number.
#[derive(Debug, Clone)]
pub struct DirSink {
    dir: PathBuf,
}

impl DirSink {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl EpisodeSink for DirSink {
    fn open(&mut self, task_name: &str) -> Result<String, EpisodeError> {
        std::fs::create_dir_all(&self.dir)?;
        let stem = file_safe(task_name);
        let path = (0u32..)
            .map(|i| self.dir.join(format!("{stem}_{i:04}{}", episode::EXTENSION)))
            .find(|p| !p.exists())
            .expect("some index is free");
        Ok(path.to_string_lossy().into_owned())
    }

    fn commit(
        &mut self,
        path: &str,
        manifest: &EpisodeManifest,
        records: &[EpisodeRecord],
    ) -> Result<(), EpisodeError> {
        episode::write_episode_file(Path::new(path), manifest, records).map(|_| ())
    }
}

/// Always writes to one fixed path.
#[derive(Debug, Clone)]
pub struct FileSink {
    path: PathBuf,
}

impl FileSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

impl EpisodeSink for FileSink {
    fn open(&mut self, _task_name: &str) -> Result<String, EpisodeError> {
        Ok(self.path.to_string_lossy().into_owned())
    }

    fn commit(
        &mut self,
        path: &str,
        manifest: &EpisodeManifest,
        records: &[EpisodeRecord],
    ) -> Result<(), EpisodeError> {
        episode::write_episode_file(Path::new(path), manifest, records).map(|_| ())
    }
}

/// Fixed settings for a session.
#[derive(Clone)]
pub struct SessionOptions {
    pub eta: f64,
    pub latency_budget: Duration,
    pub strategy: Strategy,
    pub smoothing: SmoothingConfig,
    pub gripper: GripperConfig,
    pub arm: SimArmConfig,
    pub dwell_radius: f64,
    pub dwell_time: Duration,
    pub source: Source,
    /// Robot pose used when a robot side is configured without one.
    pub robot_initial: Pose,
    pub index: Option<Arc<KnnIndex>>,
    /// Directory resolving KNN results to episode files.
    pub corpus_dir: Option<PathBuf>,
    pub embedder: GridEmbedder,
    /// Nanoseconds since the Unix epoch, stamped into manifests.
    pub wall_clock: fn() -> u64,
}

pub fn system_wall_clock() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            eta: 1.0,
            latency_budget: DEFAULT_LATENCY_BUDGET,
            strategy: Strategy::default(),
            smoothing: SmoothingConfig::default(),
            gripper: GripperConfig::default(),
            arm: SimArmConfig::default(),
            dwell_radius: DEFAULT_DWELL_RADIUS,
            dwell_time: DEFAULT_DWELL_TIME,
            source: Source::Live,
            robot_initial: SceneLayout::default().robot_initial,
            index: None,
            corpus_dir: None,
            embedder: GridEmbedder::default(),
            wall_clock: system_wall_clock,
        }
    }
}

impl fmt::Debug for SessionOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionOptions")
            .field("eta", &self.eta)
            .field("latency_budget", &self.latency_budget)
            .field("strategy", &self.strategy)
            .field("source", &self.source)
            .field("index", &self.index.as_ref().map(|i| i.len()))
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Phase {
    Idle,
    Calibrating { side: Side, captured: u8 },
    Live,
    Recording { episode_path: String },
}

/// Settings that `set_config` may change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeConfig {
    pub eta: f64,
    pub smoothing: SmoothingConfig,
    pub latency_budget: Duration,
    pub strategy: Strategy,
    pub gripper: GripperConfig,
}

#[derive(Debug, Clone, PartialEq)]
struct RobotSide {
    anchors: AnchorSet,
    initial: Pose,
}

#[derive(Debug, Clone, PartialEq)]
struct Recording {
    path: String,
    manifest: EpisodeManifest,
    records: Vec<EpisodeRecord>,
}

/// All mutable session state. Cloneable so rejected messages can be rolled back.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionCore {
    pub phase: Phase,
    pub config: RuntimeConfig,
    human_capture: AnchorCapture,
    robot_capture: AnchorCapture,
    human: Option<AnchorSet>,
    robot: Option<RobotSide>,
    dwell: DwellDetector,
    last_hand: Option<HandSample>,
    live: Option<ClosedLoop>,
    recording: Option<Recording>,
}

impl SessionCore {
    pub fn is_calibrated(&self) -> bool {
        self.live.is_some()
    }

    pub fn shared_map(&self) -> Option<&SharedMap> {
        self.live.as_ref().map(|l| &l.retargeter.map)
    }

    pub fn rotation_refs(&self) -> Option<&RotationRefs> {
        self.live.as_ref().map(|l| &l.retargeter.refs)
    }

    pub fn closed_loop(&self) -> Option<&ClosedLoop> {
        self.live.as_ref()
    }

    pub fn recorded_frames(&self) -> usize {
        self.recording.as_ref().map_or(0, |r| r.records.len())
    }
}

/// Reason a message was refused.
struct Reject {
    code: &'static str,
    detail: String,
}

impl Reject {
    fn new(code: &'static str, detail: impl Into<String>) -> Self {
        Self {
            code,
            detail: detail.into(),
        }
    }

    fn state(msg: &str, phase: &Phase) -> Self {
        Self::new(
            "protocol_violation",
            format!("{msg} not allowed while {}", phase_name(phase).as_str()),
        )
    }

    fn core(e: teleop_core::Error) -> Self {
        Self::new(crate::core_error_code(&e), e.to_string())
    }
}

fn phase_name(p: &Phase) -> StateName {
    match p {
        Phase::Idle => StateName::Idle,
        Phase::Calibrating { .. } => StateName::Calibrating,
        Phase::Live => StateName::Live,
        Phase::Recording { .. } => StateName::Recording,
    }
}

impl StateName {
    fn as_str(self) -> &'static str {
        match self {
            StateName::Idle => "idle",
            StateName::Calibrating => "calibrating",
            StateName::Live => "live",
            StateName::Recording => "recording",
        }
    }
}

type Handled = Result<Vec<Outbound>, Reject>;

pub struct Session {
    options: SessionOptions,
    core: SessionCore,
    sink: Box<dyn EpisodeSink>,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("options", &self.options)
            .field("core", &self.core)
            .finish_non_exhaustive()
    }
}

impl Session {
    pub fn new(options: SessionOptions, sink: Box<dyn EpisodeSink>) -> Self {
        let dwell =
            DwellDetector::new(options.dwell_radius, options.dwell_time).unwrap_or_else(|_| DwellDetector::default());
        let core = SessionCore {
            phase: Phase::Idle,
            config: RuntimeConfig {
                eta: options.eta,
                smoothing: options.smoothing,
                latency_budget: options.latency_budget,
                strategy: options.strategy,
                gripper: options.gripper,
            },
            human_capture: AnchorCapture::new(),
            robot_capture: AnchorCapture::new(),
            human: None,
            robot: None,
            dwell,
            last_hand: None,
            live: None,
            recording: None,
        };
        Self { options, core, sink }
    }

    pub fn phase(&self) -> &Phase {
        &self.core.phase
    }

    pub fn core(&self) -> &SessionCore {
        &self.core
    }

    pub fn options(&self) -> &SessionOptions {
        &self.options
    }

    pub fn state_message(&self) -> Outbound {
        state_message(&self.core.phase, None)
    }

    /// Parses one text frame and handles it.
    pub fn handle_text(&mut self, text: &str) -> Vec<Outbound> {
        match serde_json::from_str::<Inbound>(text) {
            Ok(msg) => self.handle_message(msg),
            Err(e) => vec![Outbound::error("invalid_message", e.to_string())],
        }
    }

    pub fn handle_message(&mut self, msg: Inbound) -> Vec<Outbound> {
        // Hand samples are checked up front and applied atomically, which
        // avoids cloning the session at the stream rate.
        if let Inbound::HandSample {
            t_ns,
            keypoints,
            transform,
        } = msg
        {
            return match self.hand_sample(t_ns, &keypoints, transform) {
                Ok(out) => out,
                Err(r) => vec![Outbound::error(r.code, r.detail)],
            };
        }
        let backup = self.core.clone();
        match self.dispatch(msg) {
            Ok(out) => out,
            Err(r) => {
                self.core = backup;
                vec![Outbound::error(r.code, r.detail)]
            }
        }
    }

    /// Goes Live from Idle with a stored calibration, latching exactly the
    /// recorded rotation references and gripper state.
    pub fn restore_calibration(&mut self, spec: &CalibrationSpec) -> Vec<Outbound> {
        let backup = self.core.clone();
        match self.restore(spec) {
            Ok(out) => out,
            Err(r) => {
                self.core = backup;
                vec![Outbound::error(r.code, r.detail)]
            }
        }
    }

    fn restore(&mut self, spec: &CalibrationSpec) -> Handled {
        if self.core.phase != Phase::Idle {
            return Err(Reject::state("restore_calibration", &self.core.phase));
        }
        let c = &spec.calibration;
        self.core.config.eta = spec.eta;
        self.core.config.strategy = c.strategy;
        self.core.config.gripper = c.gripper.into();
        self.core.human = Some(AnchorSet::from(&spec.anchors.human));
        self.core.robot = Some(RobotSide {
            anchors: AnchorSet::from(&spec.anchors.robot),
            initial: spec.robot_initial_pose().map_err(Reject::core)?,
        });
        let m_h0 = Rot3::from_row_major(c.m_h0).map_err(Reject::core)?;
        let m_r0 = Rot3::from_row_major(c.m_r0).map_err(Reject::core)?;
        let gripper = GripperState {
            aperture: if c.initial_gripper_closed { 0.0 } else { 1.0 },
            closed: c.initial_gripper_closed,
        };
        self.enter_live(m_h0, Some(m_r0), gripper)?;
        Ok(vec![self.state_message()])
    }

    fn dispatch(&mut self, msg: Inbound) -> Handled {
        match msg {
            Inbound::HandSample { .. } => unreachable!("handled before dispatch"),
            Inbound::CalibrateBegin { side } => self.calibrate_begin(side),
            Inbound::AnchorPoint { label, xyz } => self.anchor_point(label, xyz),
            Inbound::RobotAnchorConfig {
                a0,
                a1,
                a2,
                initial_pose,
            } => self.robot_anchor_config(a0, a1, a2, initial_pose),
            Inbound::GoLive => self.go_live(),
            Inbound::RecordStart { task_name } => self.record_start(&task_name),
            Inbound::RecordStop => self.record_stop(),
            Inbound::SetConfig {
                eta,
                alpha,
                latency_budget_ms,
                strategy,
            } => self.set_config(eta, alpha, latency_budget_ms, strategy),
            Inbound::KnnQuery { scene, n } => self.knn_query(scene, n),
        }
    }

    fn hand_sample(&mut self, t_ns: u64, keypoints: &[[f64; 3]; 21], transform: [f64; 16]) -> Handled {
        let sample = HandSample {
            t: Timestamp(t_ns),
            keypoints: HandKeypoints::from_array(*keypoints).map_err(Reject::core)?,
            transform: Pose::from_matrix4(transform).map_err(Reject::core)?,
        };
        if self.core.last_hand.is_some_and(|last| sample.t <= last.t) {
            return Err(Reject::new("non_monotonic", "hand sample timestamps must increase"));
        }

        let out = match self.core.phase.clone() {
            Phase::Idle | Phase::Calibrating { side: Side::Robot, .. } => Vec::new(),
            Phase::Calibrating { side: Side::Human, .. } => {
                let point =
                    select_tracked_point(&sample.keypoints, self.core.config.strategy.into()).map_err(Reject::core)?;
                let mut dwell = self.core.dwell.clone();
                let hit = dwell.feed(sample.t, point).map_err(Reject::core)?;
                self.core.dwell = dwell;
                self.core.last_hand = Some(sample);
                return match hit {
                    Some(p) => Ok(self.capture_dwell(p)),
                    None => Ok(Vec::new()),
                };
            }
            Phase::Live | Phase::Recording { .. } => self.live_tick(&sample)?,
        };
        self.core.last_hand = Some(sample);
        Ok(out)
    }

    fn live_tick(&mut self, sample: &HandSample) -> Handled {
        let lp = self.core.live.as_mut().expect("live phases carry a closed loop");
        let tick = lp.on_hand_sample(sample).map_err(Reject::core)?;
        lp.scheduler.drain_events();
        let stats = *lp.scheduler.stats();
        let exec = lp.arm_cfg.exec_latency;
        if let Some(rec) = self.core.recording.as_mut() {
            let index = rec.records.len() as u64;
            let record = EpisodeRecord::new(sample, &tick.arm, &tick.command, index)
                .expect("protocol hand samples carry every keypoint");
            rec.records.push(record);
        }
        Ok(vec![
            Outbound::RobotState {
                t_ns: sample.t.as_nanos(),
                pose: tick.arm.pose.to_matrix4(),
                gripper: tick.arm.gripper,
                pseudo_joints: tick.arm.pseudo_joints,
            },
            Outbound::Telemetry {
                t_ns: sample.t.as_nanos(),
                queue_delay_ms: stats.last_queue_delay.as_secs_f64() * 1e3,
                end_to_end_ms: (stats.last_queue_delay + exec).as_secs_f64() * 1e3,
                drops: stats.drops,
                stale: stats.stale,
            },
        ])
    }

    /// A dwell hit on the human side. An anchor that would leave an invalid
    /// frame is discarded and reported; the session stays in calibration.
    fn capture_dwell(&mut self, p: Vec3) -> Vec<Outbound> {
        let backup = self.core.clone();
        let label = self.core.human_capture.next_label().unwrap_or(AnchorLabel::A0);
        self.core.human_capture.set(label, p);
        let mut out = vec![Outbound::AnchorCaptured {
            side: Side::Human,
            label: label.into(),
            xyz: p.to_array(),
        }];
        match self.after_capture(Side::Human) {
            Ok(more) => out.extend(more),
            Err(r) => {
                let dwell_reset = {
                    let mut d = backup.dwell.clone();
                    d.reset();
                    d
                };
                self.core = SessionCore {
                    dwell: dwell_reset,
                    ..backup
                };
                out = vec![
                    Outbound::error("calibration_failed", r.detail),
                    state_message(&self.core.phase, None),
                ];
            }
        }
        out
    }

    fn capture(&mut self, side: Side) -> &mut AnchorCapture {
        match side {
            Side::Human => &mut self.core.human_capture,
            Side::Robot => &mut self.core.robot_capture,
        }
    }

    /// Updates the phase after an anchor landed on `side`.
    fn after_capture(&mut self, side: Side) -> Handled {
        let Some(set) = self.capture(side).anchor_set() else {
            let captured = self.capture(side).captured() as u8;
            self.core.phase = Phase::Calibrating { side, captured };
            return Ok(vec![self.state_message()]);
        };
        build_frame(&set).map_err(Reject::core)?;
        match side {
            Side::Human => self.core.human = Some(set),
            Side::Robot => {
                let initial = self
                    .core
                    .robot
                    .as_ref()
                    .map_or(self.options.robot_initial, |r| r.initial);
                self.core.robot = Some(RobotSide { anchors: set, initial });
            }
        }
        self.advance_calibration()
    }

    /// Goes Live when both sides are known, otherwise moves to the missing side.
    fn advance_calibration(&mut self) -> Handled {
        match (&self.core.human, &self.core.robot) {
            (Some(_), Some(_)) => {
                self.enter_live_from_stream()?;
                Ok(vec![self.state_message()])
            }
            (None, _) => {
                let captured = self.core.human_capture.captured() as u8;
                self.core.phase = Phase::Calibrating {
                    side: Side::Human,
                    captured,
                };
                Ok(vec![self.state_message()])
            }
            (Some(_), None) => {
                let captured = self.core.robot_capture.captured() as u8;
                self.core.phase = Phase::Calibrating {
                    side: Side::Robot,
                    captured,
                };
                Ok(vec![self.state_message()])
            }
        }
    }

    fn paired_map(&self) -> Result<SharedMap, Reject> {
        let (Some(human), Some(robot)) = (&self.core.human, &self.core.robot) else {
            return Err(Reject::new("not_calibrated", "both calibration sides are required"));
        };
        let h = build_frame(human).map_err(Reject::core)?;
        let r = build_frame(&robot.anchors).map_err(Reject::core)?;
        pair_frames(h, r, self.core.config.eta).map_err(Reject::core)
    }

    /// Latches `M_h0` from the latest hand sample (identity before any).
    fn enter_live_from_stream(&mut self) -> Result<(), Reject> {
        let m_h0 = self.core.last_hand.map_or(Rot3::IDENTITY, |s| s.transform.rotation);
        self.enter_live(m_h0, None, GripperState::default())
    }

    fn enter_live(&mut self, m_h0: Rot3, m_r0: Option<Rot3>, gripper: GripperState) -> Result<(), Reject> {
        let mut map = self.paired_map()?;
        let robot = self.core.robot.as_ref().expect("paired map needs a robot side");
        let initial = robot.initial;
        let m_r0 = m_r0.unwrap_or(initial.rotation);
        let refs = RotationRefs::latch(&map, m_h0, m_r0).map_err(Reject::core)?;
        map.set_p_basis(refs.p);
        let mut retargeter = Retargeter::new(map, refs);
        retargeter.strategy = self.core.config.strategy.into();
        retargeter.gripper_cfg = self.core.config.gripper;
        retargeter.gripper = gripper;
        let scheduler = SerialSchedulerConfig::new(self.core.config.latency_budget).map_err(Reject::core)?;
        let start = self.core.last_hand.map_or(Timestamp::ZERO, |s| s.t);
        let lp = ClosedLoop::new(
            retargeter,
            self.core.config.smoothing,
            scheduler,
            self.options.arm,
            SimArmState::new(initial, 1.0),
            start,
        )
        .map_err(Reject::core)?;
        self.core.live = Some(lp);
        self.core.phase = Phase::Live;
        Ok(())
    }

    fn calibrate_begin(&mut self, side: Side) -> Handled {
        match self.core.phase {
            Phase::Idle | Phase::Calibrating { .. } => {}
            _ => return Err(Reject::state("calibrate_begin", &self.core.phase)),
        }
        *self.capture(side) = AnchorCapture::new();
        match side {
            Side::Human => self.core.human = None,
            Side::Robot => self.core.robot = None,
        }
        self.core.dwell.reset();
        self.core.phase = Phase::Calibrating { side, captured: 0 };
        Ok(vec![self.state_message()])
    }

    fn anchor_point(&mut self, label: Label, xyz: [f64; 3]) -> Handled {
        let Phase::Calibrating { side, .. } = self.core.phase else {
            return Err(Reject::state("anchor_point", &self.core.phase));
        };
        let p = Vec3::from_array(xyz);
        if !p.is_finite() {
            return Err(Reject::new("invalid_value", "anchor coordinates must be finite"));
        }
        self.capture(side).set(label.into(), p);
        let mut out = vec![Outbound::AnchorCaptured { side, label, xyz }];
        out.extend(self.after_capture(side)?);
        Ok(out)
    }

    fn robot_anchor_config(&mut self, a0: [f64; 3], a1: [f64; 3], a2: [f64; 3], initial: Option<[f64; 16]>) -> Handled {
        if !matches!(self.core.phase, Phase::Idle | Phase::Calibrating { .. }) {
            return Err(Reject::state("robot_anchor_config", &self.core.phase));
        }
        let anchors = AnchorSet::new(Vec3::from_array(a0), Vec3::from_array(a1), Vec3::from_array(a2));
        build_frame(&anchors).map_err(Reject::core)?;
        let initial = match initial {
            Some(m) => Pose::from_matrix4(m).map_err(Reject::core)?,
            None => self.options.robot_initial,
        };
        self.core.robot = Some(RobotSide { anchors, initial });
        let mut capture = AnchorCapture::new();
        for label in AnchorLabel::ALL {
            capture.set(label, anchors.get(label));
        }
        self.core.robot_capture = capture;
        if self.core.phase == Phase::Idle {
            if self.core.human.is_some() {
                self.paired_map()?;
            }
            return Ok(vec![self.state_message()]);
        }
        self.advance_calibration()
    }

    fn go_live(&mut self) -> Handled {
        if !matches!(self.core.phase, Phase::Calibrating { .. }) {
            return Err(Reject::state("go_live", &self.core.phase));
        }
        self.enter_live_from_stream()?;
        Ok(vec![self.state_message()])
    }

    fn record_start(&mut self, task_name: &str) -> Handled {
        if self.core.phase != Phase::Live {
            return Err(Reject::state("record_start", &self.core.phase));
        }
        if task_name.trim().is_empty() {
            return Err(Reject::new("invalid_value", "task_name must not be empty"));
        }
        let lp = self.core.live.as_ref().expect("live phase carries a closed loop");
        let r = &lp.retargeter;
        let human = self.core.human.as_ref().expect("live implies human anchors");
        let robot = self.core.robot.as_ref().expect("live implies robot anchors");
        let manifest = EpisodeManifest {
            schema_version: SCHEMA_VERSION,
            task_name: task_name.to_owned(),
            source: self.options.source,
            eta: r.map.eta(),
            anchors: Anchors {
                human: AnchorTriple::from(human),
                robot: AnchorTriple::from(&robot.anchors),
            },
            created_at: (self.options.wall_clock)(),
            frame_count: 0,
            calibration: RetargetState {
                m_h0: r.refs.m_h0.to_row_major(),
                m_r0: r.refs.m_r0.to_row_major(),
                strategy: r.strategy.into(),
                gripper: r.gripper_cfg.into(),
                initial_gripper_closed: r.gripper.closed,
                robot_initial_pose: robot.initial.to_matrix4(),
            },
        };
        let path = self
            .sink
            .open(task_name)
            .map_err(|e| Reject::new("record_failed", e.to_string()))?;
        self.core.recording = Some(Recording {
            path: path.clone(),
            manifest,
            records: Vec::new(),
        });
        self.core.phase = Phase::Recording { episode_path: path };
        Ok(vec![self.state_message()])
    }

    fn record_stop(&mut self) -> Handled {
        if !matches!(self.core.phase, Phase::Recording { .. }) {
            return Err(Reject::state("record_stop", &self.core.phase));
        }
        let rec = self.core.recording.take().expect("recording phase carries a buffer");
        let mut manifest = rec.manifest;
        manifest.frame_count = rec.records.len() as u64;
        self.sink
            .commit(&rec.path, &manifest, &rec.records)
            .map_err(|e| Reject::new("record_failed", e.to_string()))?;
        self.core.phase = Phase::Live;
        Ok(vec![state_message(&self.core.phase, Some(rec.path))])
    }

    fn set_config(
        &mut self,
        eta: Option<f64>,
        alpha: Option<f64>,
        latency_budget_ms: Option<f64>,
        strategy: Option<Strategy>,
    ) -> Handled {
        if matches!(self.core.phase, Phase::Recording { .. }) {
            return Err(Reject::state("set_config", &self.core.phase));
        }
        let mut cfg = self.core.config;
        if let Some(eta) = eta {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Reject::new("invalid_value", "eta must be positive"));
            }
            cfg.eta = eta;
        }
        if let Some(alpha) = alpha {
            cfg.smoothing.alpha_pos = alpha;
            cfg.smoothing.alpha_rot = alpha;
            cfg.smoothing
                .validate()
                .map_err(|e| Reject::new("invalid_value", e.to_string()))?;
        }
        if let Some(ms) = latency_budget_ms {
            if !(ms.is_finite() && ms >= 0.0) {
                return Err(Reject::new("invalid_value", "latency budget must be a duration"));
            }
            cfg.latency_budget = Duration::from_secs_f64(ms / 1e3);
        }
        let scheduler =
            SerialSchedulerConfig::new(cfg.latency_budget).map_err(|e| Reject::new("invalid_value", e.to_string()))?;
        if let Some(s) = strategy {
            cfg.strategy = s;
        }
        if let Some(lp) = self.core.live.as_mut() {
            lp.retargeter.map = lp.retargeter.map.with_eta(cfg.eta).map_err(Reject::core)?;
            lp.retargeter.strategy = cfg.strategy.into();
            lp.smoother.set_config(cfg.smoothing).map_err(Reject::core)?;
            lp.scheduler.set_config(scheduler);
        }
        self.core.config = cfg;
        Ok(vec![self.state_message()])
    }

    fn knn_query(&mut self, scene: features::SceneJson, n: usize) -> Handled {
        let Some(index) = self.options.index.as_ref() else {
            return Err(Reject::new("no_index", "session has no retrieval index"));
        };
        let scene = SceneSummary::new(scene.width, scene.height, scene.values).map_err(Reject::core)?;
        let result = condition_lookup(&scene, &self.options.embedder, index, n).map_err(Reject::core)?;
        let episode_path = match &self.options.corpus_dir {
            Some(dir) => Some(
                features::resolve_episode(dir, &result.chosen_episode_id)
                    .map_err(|e| Reject::new(e.code(), e.to_string()))?
                    .to_string_lossy()
                    .into_owned(),
            ),
            None => None,
        };
        Ok(vec![Outbound::KnnResult {
            chosen_episode_id: result.chosen_episode_id,
            chosen_label: result.chosen_label,
            episode_path,
            neighbors: result
                .neighbors
                .into_iter()
                .map(|nb| NeighborJson {
                    episode_id: nb.episode_id,
                    task_label: nb.task_label,
                    distance: nb.distance,
                })
                .collect(),
        }])
    }
}

fn state_message(phase: &Phase, saved: Option<String>) -> Outbound {
    let (side, captured, episode_path) = match phase {
        Phase::Calibrating { side, captured } => (Some(*side), Some(*captured), None),
        Phase::Recording { episode_path } => (None, None, Some(episode_path.clone())),
        _ => (None, None, saved),
    };
    Outbound::SessionState {
        state: phase_name(phase),
        side,
        captured,
        episode_path,
    }
}

/// `hand_sample` message for a core sample. Missing keypoints become zeros.
pub fn hand_sample_message(sample: &HandSample) -> Inbound {
    let keypoints = Joint::ALL.map(|j| sample.keypoints.get(j).map_or([0.0; 3], |v| v.to_array()));
    Inbound::HandSample {
        t_ns: sample.t.as_nanos(),
        keypoints,
        transform: sample.transform.to_matrix4(),
    }
}

/// `robot_anchor_config` message for a layout's robot side.
pub fn robot_config_message(layout: &SceneLayout) -> Inbound {
    Inbound::RobotAnchorConfig {
        a0: layout.robot_anchors.a0.to_array(),
        a1: layout.robot_anchors.a1.to_array(),
        a2: layout.robot_anchors.a2.to_array(),
        initial_pose: Some(layout.robot_initial.to_matrix4()),
    }
}
