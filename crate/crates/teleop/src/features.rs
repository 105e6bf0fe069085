//! First-frame features for episode retrieval and their NDJSON form.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use teleop_core::retarget::Joint;
use teleop_core::retrieval::{Embedder, FeatureVector, KnnIndex, SceneSummary};

use crate::episode::{self, EpisodeError, EpisodeRecord};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("io failure: {0}")]
    Io(#[from] io::Error),
    #[error("malformed feature line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("episode {path}: {source}")]
    Episode { path: PathBuf, source: EpisodeError },
    #[error("episode {0} has no records")]
    EmptyEpisode(PathBuf),
    #[error("episode {0} not found")]
    EpisodeMissing(String),
    #[error(transparent)]
    Retrieval(#[from] teleop_core::Error),
}

impl FeatureError {
    pub fn code(&self) -> &'static str {
        match self {
            FeatureError::Io(_) => "io_failure",
            FeatureError::MalformedLine { .. } => "malformed_line",
            FeatureError::Episode { source, .. } => source.code(),
            FeatureError::EmptyEpisode(_) => "empty_episode",
            FeatureError::EpisodeMissing(_) => "episode_missing",
            FeatureError::Retrieval(e) => crate::core_error_code(e),
        }
    }
}

/// Wire form of [`FeatureVector`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLine {
    pub episode_id: String,
    pub task_label: String,
    pub values: Vec<f64>,
}

impl From<FeatureVector> for FeatureLine {
    fn from(f: FeatureVector) -> Self {
        Self {
            episode_id: f.episode_id,
            task_label: f.task_label,
            values: f.values,
        }
    }
}

impl From<FeatureLine> for FeatureVector {
    fn from(f: FeatureLine) -> Self {
        FeatureVector::new(f.episode_id, f.task_label, f.values)
    }
}

/// 4×4 summary of a record's robot state: position, gripper, the rotation
/// rows and the wrist position.
pub fn first_frame_summary(record: &EpisodeRecord) -> SceneSummary {
    let s = &record.robot_state;
    let wrist = record.hand_keypoints[Joint::Wrist.index()];
    let mut values = Vec::with_capacity(16);
    values.extend_from_slice(&s.position);
    values.push(s.gripper);
    values.extend_from_slice(&s.rotation);
    values.extend_from_slice(&wrist);
    SceneSummary::new(4, 4, values).expect("record values are finite and 16 long")
}

pub fn write_features<W: Write>(features: &[FeatureVector], mut out: W) -> io::Result<()> {
    for f in features {
        out.write_all(&episode::json_line(&FeatureLine::from(f.clone())))?;
    }
    out.flush()
}

pub fn read_features<R: io::Read>(source: R) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: FeatureLine = serde_json::from_str(&line).map_err(|e| FeatureError::MalformedLine {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(parsed.into());
    }
    Ok(out)
}

/// Embeds the first frame of every episode in `dir`. Ids are file stems,
/// labels the manifest task names.
pub fn corpus_features<E: Embedder + ?Sized>(dir: &Path, embedder: &E) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut out = Vec::new();
    for path in episode::list_episodes(dir)? {
        let (manifest, records) = episode::read_episode_file(&path).map_err(|source| FeatureError::Episode {
            path: path.clone(),
            source,
        })?;
        let first = records
            .first()
            .ok_or_else(|| FeatureError::EmptyEpisode(path.clone()))?;
        let values = embedder.embed(&first_frame_summary(first))?;
        out.push(FeatureVector::new(
            episode::episode_id(&path),
            manifest.task_name,
            values,
        ));
    }
    Ok(out)
}

/// Scene input for a query: either an episode (first frame) or a JSON
/// `{width, height, values}` object.
pub fn load_scene(path: &Path) -> Result<SceneSummary, FeatureError> {
    if path.to_string_lossy().ends_with(episode::EXTENSION) {
        let (_, records) = episode::read_episode_file(path).map_err(|source| FeatureError::Episode {
            path: path.to_owned(),
            source,
        })?;
        let first = records
            .first()
            .ok_or_else(|| FeatureError::EmptyEpisode(path.to_owned()))?;
        return Ok(first_frame_summary(first));
    }
    let text = fs::read_to_string(path)?;
    let scene: SceneJson = serde_json::from_str(&text).map_err(|e| FeatureError::MalformedLine {
        line: e.line(),
        reason: e.to_string(),
    })?;
    Ok(SceneSummary::new(scene.width, scene.height, scene.values)?)
}

/// Wire form of [`SceneSummary`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneJson {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Path of episode `id` inside `corpus`, which must exist.
pub fn resolve_episode(corpus: &Path, id: &str) -> Result<PathBuf, FeatureError> {
    let path = corpus.join(format!("{id}{}", episode::EXTENSION));
    if path.is_file() {
        Ok(path)
    } else {
        Err(FeatureError::EpisodeMissing(id.to_owned()))
    }
}

pub fn load_index(path: &Path) -> Result<KnnIndex, FeatureError> {
    let features = read_features(fs::File::open(path)?)?;
    Ok(teleop_core::retrieval::index_build(features)?)
}
