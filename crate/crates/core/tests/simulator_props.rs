use proptest::prelude::*;
use teleop_core::geometry::{Pose, Rot3, Vec3};
use teleop_core::retarget::{GripperState, RobotCommand, TrackedPointStrategy};
use teleop_core::simulator::{
    arm_tick, closed_loop_for_layout, hand_stream_next, HandStreamSpec, LoopTick, PickPlace, ReplayStream, SceneLayout,
    Script, SimArmConfig, SimArmState,
};
use teleop_core::time::{tick_period, Timestamp};

fn run_script(script: Script, frames: usize) -> Vec<LoopTick> {
    let layout = SceneLayout::default();
    let spec = HandStreamSpec::Scripted(script);
    let tick = tick_period(30.0);
    let first = hand_stream_next(&spec, Timestamp::ZERO).unwrap();
    let mut lp = closed_loop_for_layout(&layout, &first, 1.0, TrackedPointStrategy::IndexMcp).unwrap();
    (0..frames)
        .map(|i| {
            let t = Timestamp::ZERO + tick * i as u32;
            lp.on_hand_sample(&hand_stream_next(&spec, t).unwrap()).unwrap()
        })
        .collect()
}

#[test]
fn scripted_sessions_are_deterministic() {
    let layout = SceneLayout::default();
    let a = run_script(Script::pick_place(PickPlace::from_layout(&layout)).unwrap(), 300);
    let b = run_script(Script::pick_place(PickPlace::from_layout(&layout)).unwrap(), 300);
    assert_eq!(a, b);
}

#[test]
fn arm_stays_in_workspace_and_under_speed_limit() {
    let layout = SceneLayout::default();
    let cfg = SimArmConfig::default();
    let ticks = run_script(Script::pick_place(PickPlace::from_layout(&layout)).unwrap(), 900);
    let dt = tick_period(30.0).as_secs_f64();
    for w in ticks.windows(2) {
        assert!(cfg.workspace.contains(w[1].arm.pose.position));
        let moved = w[1].arm.pose.position.distance(w[0].arm.pose.position);
        assert!(moved <= cfg.v_max * dt + 1e-12);
    }
}

#[test]
fn replay_plays_recorded_samples_in_order() {
    let layout = SceneLayout::default();
    let pp = PickPlace::from_layout(&layout);
    let schedule = pp.schedule();
    let tick = tick_period(30.0);
    let samples: Vec<_> = (0..300u32)
        .map(|i| pp.sample(&schedule, Timestamp::ZERO + tick * i))
        .collect();
    let replay = ReplayStream::new(samples.clone(), 1.0).unwrap();
    assert_eq!(replay.duration(), tick * 300);
    for s in &samples {
        let got = replay.sample(s.t).unwrap();
        assert_eq!(got.keypoints, s.keypoints);
    }
    assert!(replay.sample(Timestamp::ZERO + tick * 300).is_err());
    let fast = ReplayStream::new(samples, 2.0).unwrap();
    assert_eq!(fast.duration(), tick * 150);
}

fn arb_target() -> impl Strategy<Value = RobotCommand> {
    (
        proptest::array::uniform3(-2.0f64..2.0),
        proptest::array::uniform3(-3.0f64..3.0),
        any::<bool>(),
    )
        .prop_map(|(p, rpy, closed)| RobotCommand {
            position: Vec3::from_array(p),
            rotation: Rot3::from_rpy(rpy[0], rpy[1], rpy[2]),
            gripper: GripperState {
                aperture: if closed { 0.0 } else { 1.0 },
                closed,
            },
        })
}

proptest! {
    #[test]
    fn arm_tick_respects_limits(targets in proptest::collection::vec(arb_target(), 1..40)) {
        let cfg = SimArmConfig::default();
        let dt = cfg.tick().as_secs_f64();
        let mut state = SimArmState::new(Pose::new(Vec3::new(0.5, 0.0, 0.3), Rot3::IDENTITY), 1.0);
        for target in &targets {
            let next = arm_tick(&state, target, &cfg, dt);
            prop_assert!(cfg.workspace.contains(next.pose.position));
            prop_assert!(next.pose.position.distance(state.pose.position) <= cfg.v_max * dt + 1e-12);
            prop_assert!(next.pose.rotation.angle_to(&state.pose.rotation) <= cfg.w_max * dt + 1e-9);
            prop_assert!((0.0..=1.0).contains(&next.gripper));
            state = next;
        }
    }
}
