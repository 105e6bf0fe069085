//! JSON messages exchanged with the console and tools. Every frame is one
//! object with a `"type"` field; timestamps are integer nanoseconds.

use serde::{Deserialize, Serialize};
use teleop_core::retarget::JOINT_COUNT;
use teleop_core::simulator::PSEUDO_JOINTS;

use crate::episode::Strategy;
use crate::features::SceneJson;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Human,
    Robot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    A0,
    A1,
    A2,
}

impl From<Label> for teleop_core::calibration::AnchorLabel {
    fn from(l: Label) -> Self {
        use teleop_core::calibration::AnchorLabel;
        match l {
            Label::A0 => AnchorLabel::A0,
            Label::A1 => AnchorLabel::A1,
            Label::A2 => AnchorLabel::A2,
        }
    }
}

impl From<teleop_core::calibration::AnchorLabel> for Label {
    fn from(l: teleop_core::calibration::AnchorLabel) -> Self {
        use teleop_core::calibration::AnchorLabel;
        match l {
            AnchorLabel::A0 => Label::A0,
            AnchorLabel::A1 => Label::A1,
            AnchorLabel::A2 => Label::A2,
        }
    }
}

fn default_n() -> usize {
    5
}

// Hand samples dominate traffic, so they stay unboxed.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Inbound {
    HandSample {
        t_ns: u64,
        keypoints: [[f64; 3]; JOINT_COUNT],
        /// Row-major 4×4 hand transform.
        transform: [f64; 16],
    },
    CalibrateBegin {
        side: Side,
    },
    /// Manual anchor entry; overrides dwell capture for that label.
    AnchorPoint {
        label: Label,
        xyz: [f64; 3],
    },
    RobotAnchorConfig {
        a0: [f64; 3],
        a1: [f64; 3],
        a2: [f64; 3],
        #[serde(default)]
        initial_pose: Option<[f64; 16]>,
    },
    GoLive,
    RecordStart {
        task_name: String,
    },
    RecordStop,
    SetConfig {
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        latency_budget_ms: Option<f64>,
        #[serde(default)]
        strategy: Option<Strategy>,
    },
    KnnQuery {
        scene: SceneJson,
        #[serde(default = "default_n")]
        n: usize,
    },
}

impl Inbound {
    pub fn kind(&self) -> &'static str {
        match self {
            Inbound::HandSample { .. } => "hand_sample",
            Inbound::CalibrateBegin { .. } => "calibrate_begin",
            Inbound::AnchorPoint { .. } => "anchor_point",
            Inbound::RobotAnchorConfig { .. } => "robot_anchor_config",
            Inbound::GoLive => "go_live",
            Inbound::RecordStart { .. } => "record_start",
            Inbound::RecordStop => "record_stop",
            Inbound::SetConfig { .. } => "set_config",
            Inbound::KnnQuery { .. } => "knn_query",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateName {
    Idle,
    Calibrating,
    Live,
    Recording,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborJson {
    pub episode_id: String,
    pub task_label: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    SessionState {
        state: StateName,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        side: Option<Side>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        captured: Option<u8>,
        /// Episode being recorded, or the one just saved.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        episode_path: Option<String>,
    },
    AnchorCaptured {
        side: Side,
        label: Label,
        xyz: [f64; 3],
    },
    RobotState {
        t_ns: u64,
        /// Row-major 4×4 end-effector pose.
        pose: [f64; 16],
        gripper: f64,
        pseudo_joints: [f64; PSEUDO_JOINTS],
    },
    Telemetry {
        t_ns: u64,
        /// Submission to dispatch of the latest dispatched command.
        queue_delay_ms: f64,
        /// Submission to completion of that command: queueing plus execution.
        end_to_end_ms: f64,
        drops: u64,
        stale: u64,
    },
    KnnResult {
        chosen_episode_id: String,
        chosen_label: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        episode_path: Option<String>,
        neighbors: Vec<NeighborJson>,
    },
    Error {
        code: String,
        detail: String,
    },
}

impl Outbound {
    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        Outbound::Error {
            code: code.to_owned(),
            detail: detail.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("outbound messages serialize")
    }
}
