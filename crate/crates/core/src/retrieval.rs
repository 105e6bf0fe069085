//! Exact KNN over first-frame features for picking a demonstration episode.
//!
//! Vectors are unit-normalized at build time and compared by L2 distance,
//! which orders neighbors the same way as cosine similarity. A query takes
//! the `n` nearest entries, votes on their task labels and returns the
//! nearest episode of the winning label. Label ties go to the label whose
//! best-ranked member is closest, which is the label of the overall nearest
//! neighbor whenever that label is among the tied ones.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub episode_id: String,
    pub task_label: String,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(episode_id: impl Into<String>, task_label: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            episode_id: episode_id.into(),
            task_label: task_label.into(),
            values,
        }
    }
}

/// Scales `values` to unit length.
pub fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature"));
    }
    let n = libm::sqrt(values.iter().map(|v| v * v).sum());
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(values.iter().map(|v| v / n).collect())
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    id: String,
    label: String,
    unit: Vec<f64>,
}

/// Immutable brute-force index. Entries are kept sorted by episode id so
/// results never depend on insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    dimension: usize,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub episode_id: String,
    pub task_label: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    pub chosen_episode_id: String,
    pub chosen_label: String,
    /// Ascending by distance, ties by episode id.
    pub neighbors: Vec<Neighbor>,
}

pub fn index_build(features: Vec<FeatureVector>) -> Result<KnnIndex> {
    let dimension = features.first().ok_or(Error::EmptyInput)?.values.len();
    if dimension == 0 {
        return Err(Error::ZeroVector);
    }
    let mut entries = Vec::with_capacity(features.len());
    for f in features {
        if f.values.len() != dimension {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                actual: f.values.len(),
            });
        }
        entries.push(Entry {
            unit: normalize(&f.values)?,
            id: f.episode_id,
            label: f.task_label,
        });
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::DuplicateId(w[0].id.clone()));
    }
    Ok(KnnIndex { dimension, entries })
}

impl KnnIndex {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stored entries as unit-normalized feature vectors, sorted by id.
    pub fn features(&self) -> impl Iterator<Item = FeatureVector> + '_ {
        self.entries
            .iter()
            .map(|e| FeatureVector::new(e.id.clone(), e.label.clone(), e.unit.clone()))
    }

    pub fn query(&self, q: &[f64], n: usize) -> Result<KnnResult> {
        knn_query(self, q, n)
    }
}

pub fn knn_query(index: &KnnIndex, q: &[f64], n: usize) -> Result<KnnResult> {
    if n == 0 || n > index.len() {
        return Err(Error::BadN { n, max: index.len() });
    }
    if q.len() != index.dimension {
        return Err(Error::DimensionMismatch {
            expected: index.dimension,
            actual: q.len(),
        });
    }
    let q = normalize(q)?;

    let mut scored: Vec<(f64, usize)> = index
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (l2(&q, &e.unit), i))
        .collect();
    // Entries are id-sorted, so comparing positions breaks ties by id.
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if n < scored.len() {
        scored.select_nth_unstable_by(n - 1, order);
        scored.truncate(n);
    }
    scored.sort_unstable_by(order);

    let neighbors: Vec<Neighbor> = scored
        .iter()
        .map(|&(distance, i)| Neighbor {
            episode_id: index.entries[i].id.clone(),
            task_label: index.entries[i].label.clone(),
            distance,
        })
        .collect();

    // label -> (count, rank of its nearest member)
    let mut votes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (rank, nb) in neighbors.iter().enumerate() {
        votes.entry(nb.task_label.as_str()).or_insert((0, rank)).0 += 1;
    }
    let (_, &(_, best_rank)) = votes
        .iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .expect("n >= 1");
    let chosen = &neighbors[best_rank];

    Ok(KnnResult {
        chosen_episode_id: chosen.episode_id.clone(),
        chosen_label: chosen.task_label.clone(),
        neighbors,
    })
}

/// A row-major grid of reals describing the first frame of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSummary {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl SceneSummary {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyInput);
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scene summary"));
        }
        Ok(Self { width, height, values })
    }

    fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at integers).
    fn bilinear(&self, y: f64, x: f64) -> f64 {
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (libm::floor(y) as usize, libm::floor(x) as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = self.at(y0, x0) * (1.0 - fx) + self.at(y0, x1) * fx;
        let bottom = self.at(y1, x0) * (1.0 - fx) + self.at(y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Turns a first-frame summary into a feature vector. Must be deterministic.
pub trait Embedder {
    fn dimension(&self) -> usize;
    fn embed(&self, scene: &SceneSummary) -> Result<Vec<f64>>;
}

/// Bilinear resample to a fixed `side × side` grid, flattened row-major and
/// unit-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridEmbedder {
    pub side: usize,
}

impl Default for GridEmbedder {
    fn default() -> Self {
        Self { side: 8 }
    }
}

impl Embedder for GridEmbedder {
    fn dimension(&self) -> usize {
        self.side * self.side
    }

    fn embed(&self, scene: &SceneSummary) -> Result<Vec<f64>> {
        if self.side == 0 {
            return Err(Error::BadConfig("embedder grid side must be positive"));
        }
        let sy = scene.height as f64 / self.side as f64;
        let sx = scene.width as f64 / self.side as f64;
        let mut out = Vec::with_capacity(self.dimension());
        for i in 0..self.side {
            for j in 0..self.side {
                let y = (i as f64 + 0.5) * sy - 0.5;
                let x = (j as f64 + 0.5) * sx - 0.5;
                out.push(scene.bilinear(y, x));
            }
        }
        normalize(&out)
    }
}

/// Embeds `scene` and queries `index`; the chosen episode is the
/// demonstration to condition on.
pub fn condition_lookup<E: Embedder + ?Sized>(
    scene: &SceneSummary,
    embedder: &E,
    index: &KnnIndex,
    n: usize,
) -> Result<KnnResult> {
    if index.is_empty() {
        return Err(Error::EmptyInput);
    }
    let features = embedder.embed(scene)?;
    knn_query(index, &features, n)
}

/// Orders two distances with ids as tie-breaker; exposed for callers that
/// merge results from several indexes.
pub fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then_with(|| a.episode_id.cmp(&b.episode_id))
}
