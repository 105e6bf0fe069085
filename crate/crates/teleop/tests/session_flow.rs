mod common;

use std::sync::Arc;

use teleop::protocol::{Inbound, Label, Outbound, Side, StateName};
use teleop::session::{hand_sample_message, robot_config_message, MemorySink, Phase, Session, SessionOptions};
use teleop_core::geometry::Vec3;
use teleop_core::retrieval::{index_build, FeatureVector};
use teleop_core::simulator::{posed_hand, SceneLayout, OPEN_PINCH};
use teleop_core::time::{tick_period, Timestamp};

fn session(options: SessionOptions) -> (Session, MemorySink) {
    let sink = MemorySink::new();
    let options = SessionOptions {
        wall_clock: common::fixed_wall_clock,
        ..options
    };
    (Session::new(options, Box::new(sink.clone())), sink)
}

struct Hand {
    layout: SceneLayout,
    k: u32,
}

impl Hand {
    fn new() -> Self {
        Self {
            layout: SceneLayout::default(),
            k: 0,
        }
    }

    fn at(&mut self, p: Vec3) -> Inbound {
        self.k += 1;
        let t = Timestamp::ZERO + tick_period(30.0) * self.k;
        hand_sample_message(&posed_hand(t, p, self.layout.hand_rest, OPEN_PINCH))
    }
}

fn is_error(replies: &[Outbound]) -> bool {
    matches!(replies, [Outbound::Error { .. }])
}

fn error_code(replies: &[Outbound]) -> &str {
    match replies {
        [Outbound::Error { code, .. }] => code,
        other => panic!("expected a single error, got {other:?}"),
    }
}

/// Calibrates the human side by holding the hand still over each anchor.
fn dwell_calibrate(s: &mut Session, hand: &mut Hand) -> Vec<Outbound> {
    let anchors = [
        hand.layout.human_anchors.a0,
        hand.layout.human_anchors.a1,
        hand.layout.human_anchors.a2,
    ];
    let mut out = s.handle_message(Inbound::CalibrateBegin { side: Side::Human });
    for a in anchors {
        for _ in 0..40 {
            out.extend(s.handle_message(hand.at(a)));
        }
    }
    out
}

fn live_session() -> (Session, MemorySink, Hand) {
    let (mut s, sink) = session(SessionOptions::default());
    let mut hand = Hand::new();
    assert!(!is_error(&s.handle_message(robot_config_message(&hand.layout))));
    dwell_calibrate(&mut s, &mut hand);
    assert_eq!(*s.phase(), Phase::Live);
    (s, sink, hand)
}

#[test]
fn dwell_captures_each_anchor_then_asks_for_the_robot() {
    let (mut s, _) = session(SessionOptions::default());
    let mut hand = Hand::new();
    let out = dwell_calibrate(&mut s, &mut hand);
    let captured: Vec<_> = out
        .iter()
        .filter_map(|m| match m {
            Outbound::AnchorCaptured { side, label, xyz } => Some((*side, *label, Vec3::from_array(*xyz))),
            _ => None,
        })
        .collect();
    let expected = [
        (Label::A0, hand.layout.human_anchors.a0),
        (Label::A1, hand.layout.human_anchors.a1),
        (Label::A2, hand.layout.human_anchors.a2),
    ];
    assert_eq!(captured.len(), 3);
    for ((side, label, p), (l, a)) in captured.iter().zip(expected) {
        assert_eq!((*side, *label), (Side::Human, l));
        assert!(p.distance(a) < 1e-12);
    }
    assert_eq!(
        out.last(),
        Some(&Outbound::SessionState {
            state: StateName::Calibrating,
            side: Some(Side::Robot),
            captured: Some(0),
            episode_path: None
        })
    );
    let out = s.handle_message(robot_config_message(&hand.layout));
    assert!(matches!(
        out.last(),
        Some(Outbound::SessionState {
            state: StateName::Live,
            ..
        })
    ));
}

#[test]
fn recording_produces_one_record_per_live_sample() {
    let (mut s, sink, mut hand) = live_session();
    let p = hand.layout.human_point(0.5, 0.5, 0.1);
    let out = s.handle_message(Inbound::RecordStart {
        task_name: "stack".into(),
    });
    assert!(matches!(
        &out[..],
        [Outbound::SessionState {
            state: StateName::Recording,
            episode_path: Some(_),
            ..
        }]
    ));
    for _ in 0..50 {
        let out = s.handle_message(hand.at(p));
        assert!(matches!(
            &out[..],
            [Outbound::RobotState { .. }, Outbound::Telemetry { .. }]
        ));
    }
    assert_eq!(s.core().recorded_frames(), 50);
    let out = s.handle_message(Inbound::RecordStop);
    let Some(Outbound::SessionState {
        state: StateName::Live,
        episode_path: Some(path),
        ..
    }) = out.first()
    else {
        panic!("unexpected reply {out:?}");
    };
    let eps = sink.episodes();
    assert_eq!(eps.len(), 1);
    assert_eq!(&eps[0].path, path);
    assert_eq!(eps[0].manifest.task_name, "stack");
    assert_eq!(eps[0].manifest.frame_count, 50);
    assert_eq!(eps[0].manifest.created_at, common::FIXED_WALL_CLOCK);
    assert_eq!(eps[0].records.len(), 50);
    assert!(eps[0].records.windows(2).all(|w| w[0].timestamp_ns < w[1].timestamp_ns));
    assert!(eps[0]
        .records
        .iter()
        .enumerate()
        .all(|(i, r)| r.frame_index == i as u64));
}

#[test]
fn rejected_messages_leave_the_session_untouched() {
    let (mut s, _) = session(SessionOptions::default());
    let before = s.core().clone();
    for msg in [
        Inbound::RecordStart { task_name: "x".into() },
        Inbound::RecordStop,
        Inbound::GoLive,
        Inbound::AnchorPoint {
            label: Label::A0,
            xyz: [0.0; 3],
        },
    ] {
        assert_eq!(error_code(&s.handle_message(msg)), "protocol_violation");
        assert_eq!(s.core(), &before);
    }
    let bad = Inbound::SetConfig {
        eta: Some(2.0),
        alpha: None,
        latency_budget_ms: Some(50.0),
        strategy: None,
    };
    error_code(&s.handle_message(bad));
    assert_eq!(s.core(), &before);
    assert_eq!(error_code(&s.handle_text("{\"type\":\"dance\"}")), "invalid_message");
    assert_eq!(error_code(&s.handle_text("not json")), "invalid_message");
    assert_eq!(s.core(), &before);
}

#[test]
fn stale_hand_samples_are_rejected() {
    let (mut s, _, mut hand) = live_session();
    let p = hand.layout.human_point(0.5, 0.5, 0.1);
    let msg = hand.at(p);
    assert!(!is_error(&s.handle_message(msg.clone())));
    let before = s.core().clone();
    assert_eq!(error_code(&s.handle_message(msg)), "non_monotonic");
    assert_eq!(s.core(), &before);
}

#[test]
fn config_changes_apply_live_but_not_while_recording() {
    let (mut s, _, _) = live_session();
    let set = |eta| Inbound::SetConfig {
        eta: Some(eta),
        alpha: Some(0.5),
        latency_budget_ms: Some(150.0),
        strategy: None,
    };
    assert!(!is_error(&s.handle_message(set(2.0))));
    assert_eq!(s.core().config.eta, 2.0);
    assert_eq!(s.core().shared_map().unwrap().eta(), 2.0);
    s.handle_message(Inbound::RecordStart { task_name: "t".into() });
    let before = s.core().clone();
    assert_eq!(error_code(&s.handle_message(set(3.0))), "protocol_violation");
    assert_eq!(s.core(), &before);
}

#[test]
fn knn_queries_need_an_index() {
    let (mut s, _) = session(SessionOptions::default());
    let scene = teleop::features::SceneJson {
        width: 2,
        height: 2,
        values: vec![1.0, 0.0, 0.0, 0.0],
    };
    let q = |n| Inbound::KnnQuery {
        scene: scene.clone(),
        n,
    };
    error_code(&s.handle_message(q(1)));

    let index = index_build(vec![
        FeatureVector::new("near", "pick", vec![1.0; 64]),
        FeatureVector::new(
            "far",
            "place",
            (0..64).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect(),
        ),
    ])
    .unwrap();
    let (mut s, _) = session(SessionOptions {
        index: Some(Arc::new(index)),
        ..SessionOptions::default()
    });
    let out = s.handle_message(Inbound::KnnQuery {
        scene: teleop::features::SceneJson {
            width: 2,
            height: 2,
            values: vec![1.0; 4],
        },
        n: 2,
    });
    let [Outbound::KnnResult {
        chosen_episode_id,
        neighbors,
        ..
    }] = &out[..]
    else {
        panic!("unexpected reply {out:?}");
    };
    assert_eq!(chosen_episode_id, "near");
    assert_eq!(neighbors.len(), 2);
    assert_eq!(error_code(&s.handle_message(q(3))), "bad_n");
}
