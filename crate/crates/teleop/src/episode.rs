//! Paired hand/robot episode logs in `.h2r.jsonl` form.
//!
//! Line 1 is the manifest, every following line one record. Keys appear in
//! declaration order and reals are written with 17 significant digits, so a
//! read after a write gives back the same bits and identical inputs produce
//! identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use teleop_core::calibration::{build_frame, pair_frames, AnchorSet, SharedMap};
use teleop_core::geometry::{Pose, Rot3, Vec3};
use teleop_core::retarget::{
    GripperConfig, GripperState, HandKeypoints, HandSample, Retargeter, RobotCommand, RotationRefs,
    TrackedPointStrategy, JOINT_COUNT,
};
use teleop_core::simulator::{SimArmState, PSEUDO_JOINTS};
use teleop_core::time::Timestamp;

pub const SCHEMA_VERSION: u32 = 1;
pub const EXTENSION: &str = ".h2r.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error("record {index} violates an invariant: {reason}")]
    InvariantViolation { index: usize, reason: String },
    #[error("io failure: {0}")]
    IoFailure(#[from] io::Error),
    #[error("unsupported schema version {0}")]
    SchemaVersionUnsupported(u64),
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("timestamp does not increase at line {0}")]
    NonMonotonicTimestamp(usize),
    #[error("manifest declares {declared} frames but {actual} records follow")]
    FrameCountMismatch { declared: u64, actual: u64 },
}

impl EpisodeError {
    pub fn code(&self) -> &'static str {
        match self {
            EpisodeError::InvariantViolation { .. } => "invariant_violation",
            EpisodeError::IoFailure(_) => "io_failure",
            EpisodeError::SchemaVersionUnsupported(_) => "schema_version_unsupported",
            EpisodeError::MalformedLine { .. } => "malformed_line",
            EpisodeError::NonMonotonicTimestamp(_) => "non_monotonic_timestamp",
            EpisodeError::FrameCountMismatch { .. } => "frame_count_mismatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Sim,
    Live,
}

/// Tracked-point names used on the wire and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Wrist,
    Midpoint,
    #[default]
    Mcp,
}

impl From<Strategy> for TrackedPointStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Wrist => TrackedPointStrategy::Wrist,
            Strategy::Midpoint => TrackedPointStrategy::ThumbIndexMidpoint,
            Strategy::Mcp => TrackedPointStrategy::IndexMcp,
        }
    }
}

impl From<TrackedPointStrategy> for Strategy {
    fn from(s: TrackedPointStrategy) -> Self {
        match s {
            TrackedPointStrategy::Wrist => Strategy::Wrist,
            TrackedPointStrategy::ThumbIndexMidpoint => Strategy::Midpoint,
            TrackedPointStrategy::IndexMcp => Strategy::Mcp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorTriple {
    pub a0: [f64; 3],
    pub a1: [f64; 3],
    pub a2: [f64; 3],
}

impl From<&AnchorSet> for AnchorTriple {
    fn from(s: &AnchorSet) -> Self {
        Self {
            a0: s.a0.to_array(),
            a1: s.a1.to_array(),
            a2: s.a2.to_array(),
        }
    }
}

impl From<&AnchorTriple> for AnchorSet {
    fn from(t: &AnchorTriple) -> Self {
        AnchorSet::new(Vec3::from_array(t.a0), Vec3::from_array(t.a1), Vec3::from_array(t.a2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    pub human: AnchorTriple,
    pub robot: AnchorTriple,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperParams {
    pub d_close: f64,
    pub d_open: f64,
    pub hysteresis: f64,
}

impl From<GripperConfig> for GripperParams {
    fn from(c: GripperConfig) -> Self {
        Self {
            d_close: c.d_close,
            d_open: c.d_open,
            hysteresis: c.hysteresis,
        }
    }
}

impl From<GripperParams> for GripperConfig {
    fn from(p: GripperParams) -> Self {
        Self {
            d_close: p.d_close,
            d_open: p.d_open,
            hysteresis: p.hysteresis,
        }
    }
}

/// Everything needed to rerun retargeting on the recorded hand channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetargetState {
    pub m_h0: [f64; 9],
    pub m_r0: [f64; 9],
    pub strategy: Strategy,
    pub gripper: GripperParams,
    /// Gripper latch when the first record was taken.
    pub initial_gripper_closed: bool,
    pub robot_initial_pose: [f64; 16],
}

/// Calibration as stored in a manifest or a standalone calibration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub eta: f64,
    pub anchors: Anchors,
    pub calibration: RetargetState,
}

impl CalibrationSpec {
    pub fn shared_map(&self) -> teleop_core::Result<SharedMap> {
        let human = build_frame(&AnchorSet::from(&self.anchors.human))?;
        let robot = build_frame(&AnchorSet::from(&self.anchors.robot))?;
        pair_frames(human, robot, self.eta)
    }

    pub fn robot_initial_pose(&self) -> teleop_core::Result<Pose> {
        Pose::from_matrix4(self.calibration.robot_initial_pose)
    }

    /// A retargeter in the exact state it had when recording started.
    pub fn retargeter(&self) -> teleop_core::Result<Retargeter> {
        let mut map = self.shared_map()?;
        let c = &self.calibration;
        let refs = RotationRefs::latch(&map, Rot3::from_row_major(c.m_h0)?, Rot3::from_row_major(c.m_r0)?)?;
        map.set_p_basis(refs.p);
        let gripper_cfg = GripperConfig::from(c.gripper);
        gripper_cfg.validate()?;
        let mut r = Retargeter::new(map, refs);
        r.strategy = c.strategy.into();
        r.gripper_cfg = gripper_cfg;
        r.gripper = GripperState {
            aperture: if c.initial_gripper_closed { 0.0 } else { 1.0 },
            closed: c.initial_gripper_closed,
        };
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub schema_version: u32,
    pub task_name: String,
    pub source: Source,
    pub eta: f64,
    pub anchors: Anchors,
    /// Wall-clock creation time, nanoseconds since the Unix epoch.
    pub created_at: u64,
    pub frame_count: u64,
    pub calibration: RetargetState,
}

impl EpisodeManifest {
    pub fn calibration_spec(&self) -> CalibrationSpec {
        CalibrationSpec {
            eta: self.eta,
            anchors: self.anchors,
            calibration: self.calibration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotStateRecord {
    pub position: [f64; 3],
    pub rotation: [f64; 9],
    pub gripper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub position: [f64; 3],
    pub rotation: [f64; 9],
    pub gripper: f64,
}

impl From<&RobotCommand> for ActionRecord {
    fn from(c: &RobotCommand) -> Self {
        Self {
            position: c.position.to_array(),
            rotation: c.rotation.to_row_major(),
            gripper: c.gripper.command(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub timestamp_ns: u64,
    pub hand_transform: [f64; 16],
    pub hand_keypoints: [[f64; 3]; JOINT_COUNT],
    pub robot_state: RobotStateRecord,
    pub joint_velocity: [f64; PSEUDO_JOINTS],
    pub action: ActionRecord,
    pub frame_index: u64,
}

impl EpisodeRecord {
    /// Pairs a hand sample with the arm state and the retargeted action.
    /// Returns `None` if the sample lacks keypoints.
    pub fn new(sample: &HandSample, arm: &SimArmState, action: &RobotCommand, frame_index: u64) -> Option<Self> {
        Some(Self {
            timestamp_ns: sample.t.as_nanos(),
            hand_transform: sample.transform.to_matrix4(),
            hand_keypoints: sample.keypoints.to_array()?,
            robot_state: RobotStateRecord {
                position: arm.pose.position.to_array(),
                rotation: arm.pose.rotation.to_row_major(),
                gripper: arm.gripper,
            },
            joint_velocity: arm.pseudo_joint_vel,
            action: action.into(),
            frame_index,
        })
    }

    pub fn hand_sample(&self) -> teleop_core::Result<HandSample> {
        Ok(HandSample {
            t: Timestamp(self.timestamp_ns),
            keypoints: HandKeypoints::from_array(self.hand_keypoints)?,
            transform: Pose::from_matrix4(self.hand_transform)?,
        })
    }

    fn validate(&self) -> Result<(), String> {
        let finite = self.hand_transform.iter().all(|v| v.is_finite())
            && self.hand_keypoints.iter().flatten().all(|v| v.is_finite())
            && self.robot_state.position.iter().all(|v| v.is_finite())
            && self.robot_state.gripper.is_finite()
            && self.joint_velocity.iter().all(|v| v.is_finite())
            && self.action.position.iter().all(|v| v.is_finite())
            && self.action.gripper.is_finite();
        if !finite {
            return Err("non-finite value".into());
        }
        Pose::from_matrix4(self.hand_transform).map_err(|e| format!("hand_transform: {e}"))?;
        Rot3::from_row_major(self.robot_state.rotation).map_err(|e| format!("robot_state.rotation: {e}"))?;
        Rot3::from_row_major(self.action.rotation).map_err(|e| format!("action.rotation: {e}"))?;
        if !(0.0..=1.0).contains(&self.robot_state.gripper) || !(0.0..=1.0).contains(&self.action.gripper) {
            return Err("gripper outside [0, 1]".into());
        }
        Ok(())
    }
}

fn validate_manifest(m: &EpisodeManifest) -> Result<(), String> {
    if !(m.eta.is_finite() && m.eta > 0.0) {
        return Err("eta must be positive".into());
    }
    let c = &m.calibration;
    Rot3::from_row_major(c.m_h0).map_err(|e| format!("m_h0: {e}"))?;
    Rot3::from_row_major(c.m_r0).map_err(|e| format!("m_r0: {e}"))?;
    Pose::from_matrix4(c.robot_initial_pose).map_err(|e| format!("robot_initial_pose: {e}"))?;
    let anchors = [m.anchors.human, m.anchors.robot];
    if !anchors
        .iter()
        .flat_map(|t| [t.a0, t.a1, t.a2])
        .flatten()
        .all(|v| v.is_finite())
    {
        return Err("non-finite anchor".into());
    }
    Ok(())
}

/// JSON formatter writing every real as `d.dddddddddddddddde±x`.
struct SeventeenDigits;

impl serde_json::ser::Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serializes `value` as one LF-terminated JSON line with 17-digit reals.
pub fn json_line<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SeventeenDigits);
    value.serialize(&mut ser).expect("in-memory serialization cannot fail");
    buf.push(b'\n');
    buf
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LineOut<'a> {
    Manifest(&'a EpisodeManifest),
    Record(&'a EpisodeRecord),
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LineIn {
    // Only the first line may be a manifest; its content is read separately.
    Manifest(serde::de::IgnoredAny),
    Record(Box<EpisodeRecord>),
}

/// Validates everything first, then writes the whole episode. Returns the
/// number of bytes written.
pub fn write_episode<W: Write>(
    manifest: &EpisodeManifest,
    records: &[EpisodeRecord],
    mut sink: W,
) -> Result<u64, EpisodeError> {
    if manifest.frame_count != records.len() as u64 {
        return Err(EpisodeError::FrameCountMismatch {
            declared: manifest.frame_count,
            actual: records.len() as u64,
        });
    }
    validate_manifest(manifest).map_err(|reason| EpisodeError::MalformedLine { line: 1, reason })?;
    let mut prev: Option<u64> = None;
    for (index, r) in records.iter().enumerate() {
        r.validate()
            .map_err(|reason| EpisodeError::InvariantViolation { index, reason })?;
        if prev.is_some_and(|p| r.timestamp_ns <= p) {
            return Err(EpisodeError::InvariantViolation {
                index,
                reason: "timestamp does not increase".into(),
            });
        }
        prev = Some(r.timestamp_ns);
    }

    let mut out = json_line(&LineOut::Manifest(manifest));
    for r in records {
        out.extend_from_slice(&json_line(&LineOut::Record(r)));
    }
    sink.write_all(&out)?;
    sink.flush()?;
    Ok(out.len() as u64)
}

pub fn read_episode<R: Read>(mut source: R) -> Result<(EpisodeManifest, Vec<EpisodeRecord>), EpisodeError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| {
        let line = 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count();
        EpisodeError::MalformedLine {
            line,
            reason: "invalid UTF-8".into(),
        }
    })?;

    let mut manifest: Option<EpisodeManifest> = None;
    let mut records = Vec::new();
    let mut prev: Option<u64> = None;
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let line = i + 1;
        let malformed = |reason: String| EpisodeError::MalformedLine { line, reason };
        let Some(body) = raw.strip_suffix('\n') else {
            return Err(malformed("truncated line".into()));
        };
        if line == 1 {
            manifest = Some(parse_manifest(body).map_err(|e| match e {
                ManifestFault::Version(v) => EpisodeError::SchemaVersionUnsupported(v),
                ManifestFault::Bad(reason) => malformed(reason),
            })?);
            continue;
        }
        let record = match serde_json::from_str::<LineIn>(body) {
            Ok(LineIn::Record(r)) => *r,
            Ok(LineIn::Manifest(_)) => return Err(malformed("second manifest".into())),
            Err(e) => return Err(malformed(e.to_string())),
        };
        if prev.is_some_and(|p| record.timestamp_ns <= p) {
            return Err(EpisodeError::NonMonotonicTimestamp(line));
        }
        prev = Some(record.timestamp_ns);
        record.validate().map_err(|reason| EpisodeError::InvariantViolation {
            index: records.len(),
            reason,
        })?;
        records.push(record);
    }

    let manifest = manifest.ok_or_else(|| EpisodeError::MalformedLine {
        line: 1,
        reason: "missing manifest".into(),
    })?;
    if manifest.frame_count != records.len() as u64 {
        return Err(EpisodeError::FrameCountMismatch {
            declared: manifest.frame_count,
            actual: records.len() as u64,
        });
    }
    Ok((manifest, records))
}

enum ManifestFault {
    Version(u64),
    Bad(String),
}

fn parse_manifest(body: &str) -> Result<EpisodeManifest, ManifestFault> {
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| ManifestFault::Bad(e.to_string()))?;
    if value.get("kind").and_then(|k| k.as_str()) != Some("manifest") {
        return Err(ManifestFault::Bad("first line is not a manifest".into()));
    }
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(v) => return Err(ManifestFault::Version(v)),
        None => return Err(ManifestFault::Bad("missing schema_version".into())),
    }
    let m: EpisodeManifest = serde_json::from_value(value).map_err(|e| ManifestFault::Bad(e.to_string()))?;
    validate_manifest(&m).map_err(ManifestFault::Bad)?;
    Ok(m)
}

pub fn write_episode_file(
    path: &Path,
    manifest: &EpisodeManifest,
    records: &[EpisodeRecord],
) -> Result<u64, EpisodeError> {
    // Validation happens before the file is created.
    let mut buf = Vec::new();
    write_episode(manifest, records, &mut buf)?;
    fs::write(path, &buf)?;
    Ok(buf.len() as u64)
}

pub fn read_episode_file(path: &Path) -> Result<(EpisodeManifest, Vec<EpisodeRecord>), EpisodeError> {
    read_episode(fs::File::open(path)?)
}

/// Episode files directly inside `dir`, sorted by name.
pub fn list_episodes(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.to_string_lossy().ends_with(EXTENSION) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// File name without the episode extension.
pub fn episode_id(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.strip_suffix(EXTENSION).map(str::to_owned).unwrap_or(name)
}

/// Inclusive frame-count range an episode is expected to fall in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FrameRange {
    pub min: u64,
    pub max: u64,
}

impl Default for FrameRange {
    fn default() -> Self {
        Self { min: 200, max: 600 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeFlag {
    Below,
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlaggedEpisode {
    pub path: PathBuf,
    pub frames: u64,
    pub flag: RangeFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileError {
    pub path: PathBuf,
    pub code: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EpisodeStats {
    pub episode_count: usize,
    /// frame count -> number of episodes
    pub frame_histogram: BTreeMap<u64, usize>,
    pub per_task: BTreeMap<String, usize>,
    pub flagged: Vec<FlaggedEpisode>,
    pub errors: Vec<FileError>,
}

/// Reads every episode in `dir`. Unreadable files are reported in `errors`
/// and do not count as episodes.
pub fn episode_stats(dir: &Path, range: FrameRange) -> io::Result<EpisodeStats> {
    let mut stats = EpisodeStats::default();
    for path in list_episodes(dir)? {
        match read_episode_file(&path) {
            Ok((manifest, _)) => {
                let frames = manifest.frame_count;
                stats.episode_count += 1;
                *stats.frame_histogram.entry(frames).or_default() += 1;
                *stats.per_task.entry(manifest.task_name).or_default() += 1;
                let flag = if frames < range.min {
                    Some(RangeFlag::Below)
                } else if frames > range.max {
                    Some(RangeFlag::Above)
                } else {
                    None
                };
                if let Some(flag) = flag {
                    stats.flagged.push(FlaggedEpisode { path, frames, flag });
                }
            }
            Err(e) => stats.errors.push(FileError {
                path,
                code: e.code(),
                detail: e.to_string(),
            }),
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn manifest(frames: u64) -> EpisodeManifest {
        let anchors = AnchorTriple {
            a0: [0.0, 0.0, 0.0],
            a1: [0.4, 0.0, 0.0],
            a2: [0.0, 0.3, 0.0],
        };
        EpisodeManifest {
            schema_version: SCHEMA_VERSION,
            task_name: "pick".into(),
            source: Source::Sim,
            eta: 1.0,
            anchors: Anchors {
                human: anchors,
                robot: anchors,
            },
            created_at: 1_700_000_000_000_000_000,
            frame_count: frames,
            calibration: RetargetState {
                m_h0: Rot3::IDENTITY.to_row_major(),
                m_r0: Rot3::IDENTITY.to_row_major(),
                strategy: Strategy::Mcp,
                gripper: GripperConfig::default().into(),
                initial_gripper_closed: false,
                robot_initial_pose: Pose::IDENTITY.to_matrix4(),
            },
        }
    }

    fn record(i: u64) -> EpisodeRecord {
        let x = 0.1 * i as f64 + 1.0 / 3.0;
        EpisodeRecord {
            timestamp_ns: i * 33_333_333,
            hand_transform: Pose::new(Vec3::new(x, 0.0, 0.0), Rot3::rot_z(x)).to_matrix4(),
            hand_keypoints: [[x, -x, 0.5]; JOINT_COUNT],
            robot_state: RobotStateRecord {
                position: [x, 0.2, 0.3],
                rotation: Rot3::rot_y(x).to_row_major(),
                gripper: 1.0,
            },
            joint_velocity: [x; PSEUDO_JOINTS],
            action: ActionRecord {
                position: [x, 0.2, 0.3],
                rotation: Rot3::rot_x(x).to_row_major(),
                gripper: 0.0,
            },
            frame_index: i,
        }
    }

    #[test]
    fn empty_episode_is_manifest_only() {
        let mut buf = Vec::new();
        write_episode(&manifest(0), &[], &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 1);
        let (m, r) = read_episode(&buf[..]).unwrap();
        assert_eq!(m, manifest(0));
        assert!(r.is_empty());
    }

    #[test]
    fn three_hundred_records_span_299_ticks() {
        let records: Vec<_> = (0..300).map(record).collect();
        let mut buf = Vec::new();
        let bytes = write_episode(&manifest(300), &records, &mut buf).unwrap();
        assert_eq!(bytes as usize, buf.len());
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 301);
        let (_, back) = read_episode(&buf[..]).unwrap();
        assert_eq!(back, records);
        let span = (back[299].timestamp_ns - back[0].timestamp_ns) as f64 * 1e-9;
        assert!((span - 299.0 / 30.0).abs() < 1e-6);
    }

    #[test]
    fn record_keys_keep_declared_order() {
        let mut buf = Vec::new();
        write_episode(&manifest(1), &[record(0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let line = text.lines().nth(1).unwrap();
        let keys = [
            "\"kind\"",
            "\"timestamp_ns\"",
            "\"hand_transform\"",
            "\"hand_keypoints\"",
            "\"robot_state\"",
            "\"joint_velocity\"",
            "\"action\"",
            "\"frame_index\"",
        ];
        let pos: Vec<usize> = keys.iter().map(|k| line.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(line.contains("3.3333333333333331e-1"));
    }

    #[test]
    fn bad_rotation_is_rejected_at_its_index() {
        let mut records: Vec<_> = (0..5).map(record).collect();
        records[3].action.rotation[0] = 2.0;
        let err = write_episode(&manifest(5), &records, Vec::new()).unwrap_err();
        assert!(matches!(err, EpisodeError::InvariantViolation { index: 3, .. }));
    }

    #[test]
    fn duplicated_timestamp_reports_its_line() {
        let records: Vec<_> = (0..8).map(record).collect();
        let mut buf = Vec::new();
        write_episode(&manifest(8), &records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        // Line 7 holds record 5; give it record 4's timestamp.
        let ts4 = format!("\"timestamp_ns\":{}", records[4].timestamp_ns);
        let ts5 = format!("\"timestamp_ns\":{}", records[5].timestamp_ns);
        lines[6] = lines[6].replace(&ts5, &ts4);
        let corrupted = lines.join("\n") + "\n";
        let err = read_episode(corrupted.as_bytes()).unwrap_err();
        assert!(matches!(err, EpisodeError::NonMonotonicTimestamp(7)), "{err:?}");
    }

    #[test]
    fn truncated_last_line_is_malformed() {
        let records: Vec<_> = (0..4).map(record).collect();
        let mut buf = Vec::new();
        write_episode(&manifest(4), &records, &mut buf).unwrap();
        buf.truncate(buf.len() - 20);
        let err = read_episode(&buf[..]).unwrap_err();
        assert!(matches!(err, EpisodeError::MalformedLine { line: 5, .. }), "{err:?}");
    }

    #[test]
    fn other_schema_versions_are_refused() {
        let mut buf = Vec::new();
        write_episode(&manifest(0), &[], &mut buf).unwrap();
        let text = String::from_utf8(buf)
            .unwrap()
            .replace("\"schema_version\":1", "\"schema_version\":2");
        let err = read_episode(text.as_bytes()).unwrap_err();
        assert!(matches!(err, EpisodeError::SchemaVersionUnsupported(2)));
    }

    #[test]
    fn frame_count_must_match() {
        let err = write_episode(&manifest(2), &[record(0)], Vec::new()).unwrap_err();
        assert!(matches!(
            err,
            EpisodeError::FrameCountMismatch { declared: 2, actual: 1 }
        ));
    }
}
