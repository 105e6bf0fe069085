#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use teleop::episode::{
    ActionRecord, AnchorTriple, Anchors, EpisodeManifest, EpisodeRecord, GripperParams, RetargetState,
    RobotStateRecord, Source, Strategy, SCHEMA_VERSION,
};
use teleop_core::geometry::{Pose, Rot3, Vec3};

pub const FIXED_WALL_CLOCK: u64 = 1_760_000_000_000_000_000;

pub fn fixed_wall_clock() -> u64 {
    FIXED_WALL_CLOCK
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rotation(rng: &mut impl Rng) -> Rot3 {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n2: f64 = q.iter().map(|v| v * v).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            return Rot3::from_quaternion(q).unwrap();
        }
    }
}

/// A finite real drawn to exercise the text format: ordinary values, huge
/// and tiny magnitudes, subnormals and signed zeros.
pub fn real(rng: &mut impl Rng) -> f64 {
    match rng.gen_range(0..10) {
        0 => 0.0,
        1 => -0.0,
        2 => rng.gen_range(-1e300..1e300),
        3 => rng.gen_range(-1.0..1.0) * 1e-300,
        4 => f64::from_bits(rng.gen_range(1..(1u64 << 52))),
        5 => f64::MAX * if rng.gen() { 1.0 } else { -1.0 },
        _ => rng.gen_range(-10.0..10.0),
    }
}

fn reals<const N: usize>(rng: &mut impl Rng) -> [f64; N] {
    std::array::from_fn(|_| real(rng))
}

fn unit(rng: &mut impl Rng) -> f64 {
    match rng.gen_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.gen_range(0.0..=1.0),
    }
}

fn anchors(rng: &mut impl Rng) -> AnchorTriple {
    AnchorTriple {
        a0: reals(rng),
        a1: reals(rng),
        a2: reals(rng),
    }
}

pub fn manifest(rng: &mut impl Rng, frames: u64) -> EpisodeManifest {
    let initial = Pose::new(
        Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.0..1.0),
        ),
        rotation(rng),
    );
    EpisodeManifest {
        schema_version: SCHEMA_VERSION,
        task_name: format!("task \"{}\" é\n", rng.gen_range(0..100)),
        source: if rng.gen() { Source::Sim } else { Source::Live },
        eta: rng.gen_range(0.1..5.0),
        anchors: Anchors {
            human: anchors(rng),
            robot: anchors(rng),
        },
        created_at: rng.gen(),
        frame_count: frames,
        calibration: RetargetState {
            m_h0: rotation(rng).to_row_major(),
            m_r0: rotation(rng).to_row_major(),
            strategy: [Strategy::Wrist, Strategy::Midpoint, Strategy::Mcp][rng.gen_range(0..3)],
            gripper: GripperParams {
                d_close: rng.gen_range(0.0..0.05),
                d_open: rng.gen_range(0.05..0.1),
                hysteresis: rng.gen_range(0.0..0.01),
            },
            initial_gripper_closed: rng.gen(),
            robot_initial_pose: initial.to_matrix4(),
        },
    }
}

pub fn record(rng: &mut impl Rng, timestamp_ns: u64, frame_index: u64) -> EpisodeRecord {
    let hand = Pose::new(Vec3::from_array(reals(rng)), rotation(rng));
    EpisodeRecord {
        timestamp_ns,
        hand_transform: hand.to_matrix4(),
        hand_keypoints: std::array::from_fn(|_| reals(rng)),
        robot_state: RobotStateRecord {
            position: reals(rng),
            rotation: rotation(rng).to_row_major(),
            gripper: unit(rng),
        },
        joint_velocity: reals(rng),
        action: ActionRecord {
            position: reals(rng),
            rotation: rotation(rng).to_row_major(),
            gripper: unit(rng),
        },
        frame_index,
    }
}

/// A valid random episode with `frames` records and increasing timestamps.
pub fn episode(rng: &mut impl Rng, frames: usize) -> (EpisodeManifest, Vec<EpisodeRecord>) {
    let mut t: u64 = rng.gen_range(0..1_000_000);
    let records = (0..frames)
        .map(|i| {
            t += rng.gen_range(1..100_000_000);
            record(rng, t, i as u64)
        })
        .collect();
    (manifest(rng, frames as u64), records)
}

/// Runs the CLI binary and returns its output.
pub fn teleop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_teleop"))
        .args(args)
        .output()
        .expect("teleop binary runs")
}

pub fn teleop_ok(args: &[&str]) -> serde_json::Value {
    let out = teleop(args);
    assert!(
        out.status.success(),
        "teleop {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}
