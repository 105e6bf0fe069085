mod common;

use std::fs;

use proptest::prelude::*;
use teleop::episode::{
    episode_stats, json_line, read_episode, read_episode_file, write_episode, write_episode_file, EpisodeError,
    FrameRange, RangeFlag,
};

fn encode(seed: u64, frames: usize) -> Vec<u8> {
    let (m, r) = common::episode(&mut common::rng(seed), frames);
    let mut buf = Vec::new();
    write_episode(&m, &r, &mut buf).unwrap();
    buf
}

fn lines(bytes: &[u8]) -> Vec<String> {
    String::from_utf8(bytes.to_vec())
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}

fn join(lines: &[String]) -> Vec<u8> {
    lines.iter().flat_map(|l| format!("{l}\n").into_bytes()).collect()
}

/// Rewrites one JSON line through a closure on its parsed value.
fn edit(lines: &mut [String], i: usize, f: impl FnOnce(&mut serde_json::Value)) {
    let mut v: serde_json::Value = serde_json::from_str(&lines[i]).unwrap();
    f(&mut v);
    lines[i] = v.to_string();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_value_exact(seed in any::<u64>(), frames in 0usize..20) {
        let (m, r) = common::episode(&mut common::rng(seed), frames);
        let mut buf = Vec::new();
        write_episode(&m, &r, &mut buf).unwrap();
        let (m2, r2) = read_episode(&buf[..]).unwrap();
        prop_assert_eq!(&m2, &m);
        prop_assert_eq!(&r2, &r);
        // Debug output distinguishes -0.0 from 0.0.
        prop_assert_eq!(format!("{r2:?}"), format!("{r:?}"));
        let mut again = Vec::new();
        write_episode(&m2, &r2, &mut again).unwrap();
        prop_assert_eq!(again, buf);
    }
}

#[test]
fn reals_are_written_with_seventeen_digits() {
    let text = String::from_utf8(json_line(&[0.1f64, -0.0, 1e-310])).unwrap();
    assert_eq!(
        text,
        "[1.0000000000000001e-1,-0.0000000000000000e0,9.9999999999999694e-311]\n"
    );
}

#[test]
fn duplicate_timestamp_is_reported_at_its_line() {
    let mut ls = lines(&encode(1, 10));
    let prev = serde_json::from_str::<serde_json::Value>(&ls[5]).unwrap()["timestamp_ns"].clone();
    edit(&mut ls, 6, |v| v["timestamp_ns"] = prev);
    let err = read_episode(&join(&ls)[..]).unwrap_err();
    assert!(matches!(err, EpisodeError::NonMonotonicTimestamp(7)), "{err:?}");
}

#[test]
fn truncated_last_line_is_malformed() {
    let bytes = encode(2, 10);
    let cut = &bytes[..bytes.len() - 40];
    let err = read_episode(cut).unwrap_err();
    assert!(matches!(err, EpisodeError::MalformedLine { line: 11, .. }), "{err:?}");
}

#[test]
fn missing_final_newline_is_malformed() {
    let bytes = encode(3, 3);
    let err = read_episode(&bytes[..bytes.len() - 1]).unwrap_err();
    assert!(matches!(err, EpisodeError::MalformedLine { line: 4, .. }), "{err:?}");
}

#[test]
fn future_schema_version_is_unsupported() {
    let mut ls = lines(&encode(4, 2));
    edit(&mut ls, 0, |v| v["schema_version"] = 2.into());
    let err = read_episode(&join(&ls)[..]).unwrap_err();
    assert!(matches!(err, EpisodeError::SchemaVersionUnsupported(2)), "{err:?}");
}

#[test]
fn non_orthonormal_rotation_is_an_invariant_violation() {
    let mut ls = lines(&encode(5, 6));
    edit(&mut ls, 4, |v| v["robot_state"]["rotation"][0] = 2.0.into());
    let err = read_episode(&join(&ls)[..]).unwrap_err();
    assert!(
        matches!(err, EpisodeError::InvariantViolation { index: 3, .. }),
        "{err:?}"
    );
}

#[test]
fn gripper_outside_unit_interval_is_an_invariant_violation() {
    let mut ls = lines(&encode(6, 4));
    edit(&mut ls, 1, |v| v["action"]["gripper"] = 1.5.into());
    let err = read_episode(&join(&ls)[..]).unwrap_err();
    assert!(
        matches!(err, EpisodeError::InvariantViolation { index: 0, .. }),
        "{err:?}"
    );
}

#[test]
fn garbage_and_missing_fields_are_located() {
    let mut ls = lines(&encode(7, 5));
    ls[3] = "{not json".into();
    let err = read_episode(&join(&ls)[..]).unwrap_err();
    assert!(matches!(err, EpisodeError::MalformedLine { line: 4, .. }), "{err:?}");

    let mut ls = lines(&encode(7, 5));
    edit(&mut ls, 2, |v| {
        v.as_object_mut().unwrap().remove("joint_velocity");
    });
    let err = read_episode(&join(&ls)[..]).unwrap_err();
    assert!(matches!(err, EpisodeError::MalformedLine { line: 3, .. }), "{err:?}");

    let mut ls = lines(&encode(7, 5));
    ls.swap(0, 1);
    let err = read_episode(&join(&ls)[..]).unwrap_err();
    assert!(matches!(err, EpisodeError::MalformedLine { line: 1, .. }), "{err:?}");
}

#[test]
fn record_count_must_match_manifest() {
    let mut ls = lines(&encode(8, 5));
    ls.pop();
    let err = read_episode(&join(&ls)[..]).unwrap_err();
    assert!(
        matches!(err, EpisodeError::FrameCountMismatch { declared: 5, actual: 4 }),
        "{err:?}"
    );
}

#[test]
fn invalid_records_are_never_written() {
    let (m, mut r) = common::episode(&mut common::rng(9), 3);
    r[1].robot_state.position[0] = f64::NAN;
    let mut buf = Vec::new();
    let err = write_episode(&m, &r, &mut buf).unwrap_err();
    assert!(matches!(err, EpisodeError::InvariantViolation { index: 1, .. }));
    assert!(buf.is_empty());

    let (m, mut r) = common::episode(&mut common::rng(10), 3);
    r[2].timestamp_ns = r[1].timestamp_ns;
    assert!(write_episode(&m, &r, &mut buf).is_err());
    assert!(buf.is_empty());
}

#[test]
fn stats_count_frames_tasks_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = common::rng(11);
    for (i, frames, task) in [(0, 300, "pick"), (1, 450, "pick"), (2, 600, "place"), (3, 150, "place")] {
        let (mut m, r) = common::episode(&mut rng, frames);
        m.task_name = task.into();
        write_episode_file(&dir.path().join(format!("ep{i}.h2r.jsonl")), &m, &r).unwrap();
    }
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();

    let stats = episode_stats(dir.path(), FrameRange::default()).unwrap();
    assert_eq!(stats.episode_count, 4);
    assert_eq!(
        stats.frame_histogram.iter().map(|(k, v)| (*k, *v)).collect::<Vec<_>>(),
        vec![(150, 1), (300, 1), (450, 1), (600, 1)]
    );
    assert_eq!(stats.per_task["pick"], 2);
    assert_eq!(stats.per_task["place"], 2);
    assert_eq!(stats.flagged.len(), 1);
    assert_eq!(stats.flagged[0].frames, 150);
    assert_eq!(stats.flagged[0].flag, RangeFlag::Below);
    assert!(stats.errors.is_empty());

    let strict = episode_stats(dir.path(), FrameRange { min: 300, max: 450 }).unwrap();
    let flags: Vec<_> = strict.flagged.iter().map(|f| (f.frames, f.flag)).collect();
    assert_eq!(flags, vec![(600, RangeFlag::Above), (150, RangeFlag::Below)]);
}

#[test]
fn stats_of_an_empty_corpus_are_empty() {
    let dir = tempfile::tempdir().unwrap();
    let stats = episode_stats(dir.path(), FrameRange::default()).unwrap();
    assert_eq!(stats.episode_count, 0);
    assert!(stats.frame_histogram.is_empty() && stats.per_task.is_empty());
    assert!(stats.flagged.is_empty() && stats.errors.is_empty());
}

#[test]
fn broken_files_are_reported_not_counted() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.h2r.jsonl");
    let (m, r) = common::episode(&mut common::rng(12), 2);
    write_episode_file(&good, &m, &r).unwrap();
    fs::write(dir.path().join("bad.h2r.jsonl"), "{\"kind\":\"record\"}\n").unwrap();
    let stats = episode_stats(dir.path(), FrameRange::default()).unwrap();
    assert_eq!(stats.episode_count, 1);
    assert_eq!(stats.errors.len(), 1);
    assert_eq!(stats.errors[0].code, "malformed_line");
    assert!(read_episode_file(&good).is_ok());
}
