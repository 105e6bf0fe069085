//! Command-line front end. Every command writes JSON to `out`; failures
//! come back as [`CliError`] for the caller to print on stderr.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use teleop_core::retrieval::{condition_lookup, index_build, Embedder, GridEmbedder};
use teleop_core::simulator::{
    hand_stream_next, HandStreamSpec, Lissajous, PickPlace, ReplayStream, SceneLayout, Script,
};
use teleop_core::time::{tick_period, Timestamp};

use crate::episode::{
    self, CalibrationSpec, EpisodeError, EpisodeManifest, EpisodeRecord, FrameRange, Source, Strategy,
};
use crate::features::{self, FeatureError};
use crate::protocol::{Inbound, Label, NeighborJson, Outbound, Side};
use crate::server::{self, ServerConfig};
use crate::session::{
    hand_sample_message, robot_config_message, system_wall_clock, EpisodeSink, FileSink, Session, SessionOptions,
};

#[derive(Debug, Parser)]
#[command(name = "teleop", version, about = "Hand-to-robot teleoperation retargeting engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScriptKind {
    Lissajous,
    #[value(name = "pick_place")]
    PickPlace,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the WebSocket session server.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        /// Serial-mode latency budget in milliseconds (100 to 300).
        #[arg(long, default_value_t = 200)]
        latency_budget: u64,
        #[arg(long, value_enum, default_value_t = Strategy::Mcp)]
        tracked_point: Strategy,
        /// Directory for recorded episodes.
        #[arg(long, default_value = "episodes")]
        episodes: PathBuf,
        /// Feature file enabling `knn_query`.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Corpus used to resolve KNN results to episode files.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Drive a session with an episode's hand channel and print its output.
    Replay {
        #[arg(long)]
        episode: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Also record the replayed session to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Offline batch retargeting of hand samples into commands.
    Retarget {
        /// An episode, or NDJSON `hand_sample` messages.
        #[arg(long)]
        input: PathBuf,
        /// An episode (its manifest is used) or a calibration JSON file.
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Record a scripted session to an episode file.
    Record {
        #[arg(long, value_enum)]
        script: ScriptKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        frames: usize,
        /// Task label; defaults to the script name.
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
    },
    /// Build or query the first-frame KNN index.
    Knn {
        #[command(subcommand)]
        command: KnnCommand,
    },
    /// Check every episode in a corpus and print statistics.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 200)]
        min_frames: u64,
        #[arg(long, default_value_t = 600)]
        max_frames: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum KnnCommand {
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Query {
        #[arg(long)]
        index: PathBuf,
        /// An episode (first frame) or a `{width, height, values}` JSON file.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[error("{code}: {detail}")]
pub struct CliError {
    pub code: String,
    pub detail: String,
}

impl CliError {
    pub fn new(code: &str, detail: impl Into<String>) -> Self {
        Self {
            code: code.to_owned(),
            detail: detail.into(),
        }
    }

    /// `{"error":{"code":...,"detail":...}}`
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<EpisodeError> for CliError {
    fn from(e: EpisodeError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<teleop_core::Error> for CliError {
    fn from(e: teleop_core::Error) -> Self {
        Self::new(crate::core_error_code(&e), e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::new("io_failure", e.to_string())
    }
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string(value).map_err(|e| CliError::new("io_failure", e.to_string()))?;
    writeln!(out, "{text}")?;
    Ok(())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Serve {
            port,
            host,
            eta,
            latency_budget,
            tracked_point,
            episodes,
            index,
            corpus,
        } => {
            let index = index.as_deref().map(features::load_index).transpose()?.map(Arc::new);
            let options = SessionOptions {
                eta,
                latency_budget: Duration::from_millis(latency_budget),
                strategy: tracked_point,
                index,
                corpus_dir: corpus,
                ..SessionOptions::default()
            };
            validate_options(&options)?;
            let listener = TcpListener::bind((host.as_str(), port))?;
            server::serve(
                listener,
                ServerConfig {
                    options,
                    episodes_dir: episodes,
                },
            )?;
            Ok(())
        }
        Command::Replay {
            episode,
            speed,
            out: rec,
        } => replay(&episode, speed, rec.as_deref(), out),
        Command::Retarget { input, calib, output } => {
            let n = retarget_file(&input, &calib, &output)?;
            write_json(out, &serde_json::json!({ "commands": n, "output": output }))
        }
        Command::Record {
            script,
            out: path,
            frames,
            task,
            eta,
        } => {
            let task = task.unwrap_or_else(|| script.name().to_owned());
            record_script(
                script,
                frames,
                &task,
                eta,
                Box::new(FileSink::new(&path)),
                system_wall_clock,
            )?;
            write_json(out, &serde_json::json!({ "episode": path, "frames": frames }))
        }
        Command::Knn { command } => knn(command, out),
        Command::Validate {
            corpus,
            min_frames,
            max_frames,
        } => {
            let stats = episode::episode_stats(
                &corpus,
                FrameRange {
                    min: min_frames,
                    max: max_frames,
                },
            )?;
            write_json(out, &stats)?;
            if stats.errors.is_empty() {
                Ok(())
            } else {
                Err(CliError::new(
                    "invalid_episodes",
                    format!("{} episode file(s) failed to load", stats.errors.len()),
                ))
            }
        }
    }
}

fn validate_options(o: &SessionOptions) -> Result<(), CliError> {
    if !(o.eta.is_finite() && o.eta > 0.0) {
        return Err(teleop_core::Error::InvalidEta(o.eta).into());
    }
    teleop_core::control::SerialSchedulerConfig::new(o.latency_budget)?;
    Ok(())
}

impl ScriptKind {
    pub fn name(self) -> &'static str {
        match self {
            ScriptKind::Lissajous => "lissajous",
            ScriptKind::PickPlace => "pick_place",
        }
    }
}

fn expect_ok(replies: Vec<Outbound>) -> Result<Vec<Outbound>, CliError> {
    for r in &replies {
        if let Outbound::Error { code, detail } = r {
            return Err(CliError::new(code, detail.clone()));
        }
    }
    Ok(replies)
}

/// Records `frames` scripted hand samples through a session, exactly as a
/// console would: robot anchors, human anchors, then `record_start`.
/// The sample at t = 0 is seen before going live and sets the hand
/// rotation reference; recorded frames start one tick later.
pub fn record_script(
    kind: ScriptKind,
    frames: usize,
    task: &str,
    eta: f64,
    sink: Box<dyn EpisodeSink>,
    wall_clock: fn() -> u64,
) -> Result<String, CliError> {
    let layout = SceneLayout::default();
    let script = match kind {
        ScriptKind::Lissajous => Script::lissajous(Lissajous::from_layout(&layout))?,
        ScriptKind::PickPlace => Script::pick_place(PickPlace::from_layout(&layout))?,
    };
    let stream = HandStreamSpec::Scripted(script);
    let options = SessionOptions {
        eta,
        source: Source::Sim,
        robot_initial: layout.robot_initial,
        wall_clock,
        ..SessionOptions::default()
    };
    validate_options(&options)?;
    let mut session = Session::new(options, sink);
    let tick = tick_period(30.0);

    expect_ok(session.handle_message(robot_config_message(&layout)))?;
    expect_ok(session.handle_message(Inbound::CalibrateBegin { side: Side::Human }))?;
    let first = hand_stream_next(&stream, Timestamp::ZERO)?;
    expect_ok(session.handle_message(hand_sample_message(&first)))?;
    for (label, p) in [
        (Label::A0, layout.human_anchors.a0),
        (Label::A1, layout.human_anchors.a1),
        (Label::A2, layout.human_anchors.a2),
    ] {
        expect_ok(session.handle_message(Inbound::AnchorPoint {
            label,
            xyz: p.to_array(),
        }))?;
    }
    expect_ok(session.handle_message(Inbound::RecordStart {
        task_name: task.to_owned(),
    }))?;
    for k in 1..=frames as u32 {
        let sample = hand_stream_next(&stream, Timestamp::ZERO + tick * k)?;
        expect_ok(session.handle_message(hand_sample_message(&sample)))?;
    }
    let replies = expect_ok(session.handle_message(Inbound::RecordStop))?;
    match replies.first() {
        Some(Outbound::SessionState {
            episode_path: Some(p), ..
        }) => Ok(p.clone()),
        _ => Err(CliError::new(
            "record_failed",
            "session did not report the saved episode",
        )),
    }
}

/// Reads a calibration from an episode manifest or a calibration JSON file.
pub fn load_calibration(path: &Path) -> Result<CalibrationSpec, CliError> {
    let text = fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or_default();
    let is_manifest = serde_json::from_str::<serde_json::Value>(first)
        .ok()
        .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(|k| k == "manifest"))
        .unwrap_or(false);
    if is_manifest {
        let (manifest, _) = episode::read_episode(text.as_bytes())?;
        return Ok(manifest.calibration_spec());
    }
    serde_json::from_str(&text).map_err(|e| CliError::new("malformed_calibration", e.to_string()))
}

fn load_hand_samples(path: &Path) -> Result<Vec<teleop_core::retarget::HandSample>, CliError> {
    if path.to_string_lossy().ends_with(episode::EXTENSION) {
        let (_, records) = episode::read_episode_file(path)?;
        return records
            .iter()
            .map(|r| r.hand_sample().map_err(CliError::from))
            .collect();
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| CliError::new("malformed_line", format!("line {}: {detail}", i + 1));
        match serde_json::from_str::<Inbound>(&line).map_err(|e| bad(e.to_string()))? {
            Inbound::HandSample {
                t_ns,
                keypoints,
                transform,
            } => out.push(teleop_core::retarget::HandSample {
                t: Timestamp(t_ns),
                keypoints: teleop_core::retarget::HandKeypoints::from_array(keypoints)?,
                transform: teleop_core::geometry::Pose::from_matrix4(transform)?,
            }),
            other => return Err(bad(format!("expected hand_sample, got {}", other.kind()))),
        }
    }
    Ok(out)
}

/// One retargeted command per input sample.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CommandLine {
    pub timestamp_ns: u64,
    pub position: [f64; 3],
    pub rotation: [f64; 9],
    pub gripper: f64,
}

/// Retargets every sample with a fresh retargeter in the calibration's
/// recorded state.
pub fn retarget_samples(
    samples: &[teleop_core::retarget::HandSample],
    spec: &CalibrationSpec,
) -> Result<Vec<CommandLine>, CliError> {
    let mut r = spec.retargeter()?;
    samples
        .iter()
        .map(|s| {
            let cmd = r.step(s)?;
            let action = episode::ActionRecord::from(&cmd);
            Ok(CommandLine {
                timestamp_ns: s.t.as_nanos(),
                position: action.position,
                rotation: action.rotation,
                gripper: action.gripper,
            })
        })
        .collect()
}

pub fn retarget_file(input: &Path, calib: &Path, output: &Path) -> Result<usize, CliError> {
    let spec = load_calibration(calib)?;
    let samples = load_hand_samples(input)?;
    let commands = retarget_samples(&samples, &spec)?;
    let mut buf = Vec::new();
    for c in &commands {
        buf.extend_from_slice(&episode::json_line(c));
    }
    fs::write(output, buf)?;
    Ok(commands.len())
}

pub fn read_commands(path: &Path) -> Result<Vec<CommandLine>, CliError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::new("malformed_line", e.to_string())))
        .collect()
}

/// Replays an episode's hand channel at `speed` through a session restored
/// to the episode's calibration, writing every outbound message as JSON.
pub fn replay(path: &Path, speed: f64, record_to: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let (manifest, records) = episode::read_episode_file(path)?;
    let options = SessionOptions {
        source: Source::Sim,
        wall_clock: system_wall_clock,
        ..SessionOptions::default()
    };
    let sink: Option<Box<dyn EpisodeSink>> = record_to.map(|p| Box::new(FileSink::new(p)) as Box<dyn EpisodeSink>);
    replay_episode(&manifest, &records, speed, options, sink, out)
}

/// Streams `records` through a session restored from the manifest's
/// calibration at 30 Hz, printing every outbound message. With a sink the
/// replay is recorded under the manifest's task name.
pub fn replay_episode(
    manifest: &EpisodeManifest,
    records: &[EpisodeRecord],
    speed: f64,
    options: SessionOptions,
    sink: Option<Box<dyn EpisodeSink>>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let samples = records.iter().map(|r| r.hand_sample()).collect::<Result<Vec<_>, _>>()?;
    let stream = ReplayStream::new(samples, speed)?;
    let spec = manifest.calibration_spec();
    let recording = sink.is_some();
    let sink = sink.unwrap_or_else(|| Box::new(crate::session::MemorySink::new()));
    let mut session = Session::new(options, sink);
    let emit = |replies: Vec<Outbound>, out: &mut dyn Write| -> Result<(), CliError> {
        for r in expect_ok(replies)? {
            writeln!(out, "{}", r.to_json())?;
        }
        Ok(())
    };
    emit(session.restore_calibration(&spec), out)?;
    if recording {
        emit(
            session.handle_message(Inbound::RecordStart {
                task_name: manifest.task_name.clone(),
            }),
            out,
        )?;
    }
    let tick = tick_period(30.0);
    for k in 0u32.. {
        let sample = match stream.sample(Timestamp::ZERO + tick * k) {
            Ok(s) => s,
            Err(teleop_core::Error::ReplayExhausted) => break,
            Err(e) => return Err(e.into()),
        };
        emit(session.handle_message(hand_sample_message(&sample)), out)?;
    }
    if recording {
        emit(session.handle_message(Inbound::RecordStop), out)?;
    }
    Ok(())
}

fn knn(command: KnnCommand, out: &mut dyn Write) -> Result<(), CliError> {
    let embedder = GridEmbedder::default();
    match command {
        KnnCommand::Build { corpus, out: path } => {
            let features = features::corpus_features(&corpus, &embedder)?;
            // Building checks ids and dimensions before anything is written.
            let index = index_build(features.clone())?;
            let mut buf = Vec::new();
            features::write_features(&features, &mut buf)?;
            fs::write(&path, buf)?;
            write_json(
                out,
                &serde_json::json!({ "episodes": index.len(), "dimension": embedder.dimension(), "index": path }),
            )
        }
        KnnCommand::Query {
            index,
            scene,
            n,
            corpus,
        } => {
            let index = features::load_index(&index)?;
            let scene = features::load_scene(&scene)?;
            let result = condition_lookup(&scene, &embedder, &index, n)?;
            let episode_path = corpus
                .map(|dir| features::resolve_episode(&dir, &result.chosen_episode_id))
                .transpose()?
                .map(|p| p.to_string_lossy().into_owned());
            let msg = Outbound::KnnResult {
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
            };
            writeln!(out, "{}", msg.to_json())?;
            Ok(())
        }
    }
}
