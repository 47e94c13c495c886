//! Visual vocabularies: seeded k-means over local descriptors and the
//! universal / integrated / half-integrated vocabulary builders.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Row-major matrix of `f32` points sharing one dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointSet {
    dim: usize,
    data: Vec<f32>,
}

impl PointSet {
    pub fn new(dim: usize) -> Self {
        PointSet { dim, data: Vec::new() }
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: impl IntoIterator<Item = R>) -> Result<Self> {
        let mut set = PointSet::new(dim);
        for r in rows {
            set.push(r.as_ref())?;
        }
        Ok(set)
    }

    pub fn push(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    /// Uniform seeded subsample of at most `cap` rows, original order kept.
    pub fn subsample(&self, cap: usize, seed: u64, lane: u64) -> PointSet {
        if self.len() <= cap {
            return self.clone();
        }
        let mut rng = stream_rng(seed, Stream::Subsample, lane);
        let mut picked = sample(&mut rng, self.len(), cap).into_vec();
        picked.sort_unstable();
        let mut out = PointSet::new(self.dim);
        for i in picked {
            out.data.extend_from_slice(self.row(i));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iter: 100,
            rel_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub dim: usize,
    /// `k × dim`, row-major.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centroids.
    pub distortion: f64,
    pub iterations: usize,
    /// Distortion after each assignment step.
    pub history: Vec<f64>,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

#[inline]
fn sq_dist(p: &[f32], c: &[f64]) -> f64 {
    p.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let d = f64::from(a) - b;
            d * d
        })
        .sum()
}

/// Nearest centroid and squared distance; ties go to the lowest index.
fn nearest(p: &[f32], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(p, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign_all(points: &PointSet, centroids: &[f64]) -> Vec<(usize, f64)> {
    let dim = points.dim();
    (0..points.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| nearest(points.row(i), centroids, dim))
        .collect()
}

fn plus_plus_init<R: Rng>(points: &PointSet, k: usize, rng: &mut R) -> Vec<f64> {
    let n = points.len();
    let to_f64 = |row: &[f32]| row.iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
    let mut centroids = to_f64(points.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centroids)).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = to_f64(points.row(pick));
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(points.row(i), &c));
        }
        centroids.extend(c);
    }
    centroids
}

/// Moves each empty cluster onto the point farthest from its centroid.
/// Returns whether any centroid moved.
fn reseed_empty(points: &PointSet, centroids: &mut [f64], assigned: &mut [(usize, f64)], k: usize) -> bool {
    let dim = points.dim();
    let mut counts = vec![0usize; k];
    for &(c, _) in assigned.iter() {
        counts[c] += 1;
    }
    let mut moved = false;
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let far = assigned
            .iter()
            .enumerate()
            .filter(|(_, (owner, d))| counts[*owner] > 1 && *d > 0.0)
            .fold(None::<(usize, f64)>, |best, (i, &(_, d))| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        let Some((i, _)) = far else { break };
        for (slot, &v) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(points.row(i)) {
            *slot = f64::from(v);
        }
        counts[assigned[i].0] -= 1;
        counts[c] = 1;
        assigned[i] = (c, 0.0);
        moved = true;
    }
    moved
}

/// Lloyd's algorithm from k-means++ seeds. Stops when the relative
/// distortion improvement drops below `rel_tol`, assignments stop changing,
/// or `max_iter` assignment steps have run.
pub fn kmeans(points: &PointSet, k: usize, seed: u64, lane: u64, config: &KMeansConfig) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::InsufficientPoints {
            needed: k,
            available: points.len(),
        });
    }
    let dim = points.dim();
    let mut rng = stream_rng(seed, Stream::KMeans, lane);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut history = Vec::new();
    let mut previous: Option<Vec<usize>> = None;
    let mut assigned;
    loop {
        assigned = assign_all(points, &centroids);
        let mut attempts = 0;
        while attempts < k && reseed_empty(points, &mut centroids, &mut assigned, k) {
            assigned = assign_all(points, &centroids);
            attempts += 1;
        }
        let distortion: f64 = assigned.iter().map(|&(_, d)| d).sum();
        let labels: Vec<usize> = assigned.iter().map(|&(c, _)| c).collect();
        let converged = match history.last() {
            Some(&prev) => prev <= 0.0 || (prev - distortion) <= config.rel_tol * prev,
            None => distortion == 0.0,
        } || previous.as_ref() == Some(&labels);
        history.push(distortion);
        if converged || history.len() >= config.max_iter.max(1) {
            return Ok(KMeansResult {
                dim,
                centroids,
                assignments: labels,
                distortion,
                iterations: history.len(),
                history,
            });
        }

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(points.row(i)) {
                *s += f64::from(v);
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                for (slot, s) in centroids[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *slot = s / n;
                }
            }
        }
        previous = Some(labels);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VocabularyKind {
    Universal,
    Integrated,
    UpperIntegrated,
    LowerIntegrated,
}

impl VocabularyKind {
    pub fn tag(self) -> u8 {
        match self {
            VocabularyKind::Universal => 0,
            VocabularyKind::Integrated => 1,
            VocabularyKind::UpperIntegrated => 2,
            VocabularyKind::LowerIntegrated => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => VocabularyKind::Universal,
            1 => VocabularyKind::Integrated,
            2 => VocabularyKind::UpperIntegrated,
            3 => VocabularyKind::LowerIntegrated,
            _ => return None,
        })
    }

    pub fn is_integrated(self) -> bool {
        self != VocabularyKind::Universal
    }
}

/// Cluster centroids used as visual words. Integrated kinds hold one block
/// of `words_per_category` centroids per category, in `categories` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    kind: VocabularyKind,
    words_per_category: usize,
    categories: Vec<String>,
    dim: usize,
    centroids: Vec<f64>,
}

impl Vocabulary {
    pub fn new(
        kind: VocabularyKind,
        words_per_category: usize,
        categories: Vec<String>,
        dim: usize,
        centroids: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || words_per_category == 0 {
            return Err(Error::InvalidArgument("empty vocabulary".into()));
        }
        let blocks = if kind.is_integrated() {
            if categories.is_empty() {
                return Err(Error::InvalidArgument(
                    "integrated vocabulary without categories".into(),
                ));
            }
            categories.len()
        } else {
            1
        };
        let expected = blocks * words_per_category * dim;
        if centroids.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: centroids.len(),
            });
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite centroid".into()));
        }
        Ok(Vocabulary {
            kind,
            words_per_category,
            categories: if kind.is_integrated() { categories } else { Vec::new() },
            dim,
            centroids,
        })
    }

    pub fn kind(&self) -> VocabularyKind {
        self.kind
    }

    pub fn words_per_category(&self) -> usize {
        self.words_per_category
    }

    /// Number of category blocks (1 for universal vocabularies).
    pub fn category_count(&self) -> usize {
        self.categories.len().max(1)
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_words(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn word(&self, w: usize) -> &[f64] {
        &self.centroids[w * self.dim..(w + 1) * self.dim]
    }

    /// Category block that word `w` came from.
    pub fn word_category(&self, w: usize) -> Option<&str> {
        self.categories.get(w / self.words_per_category).map(String::as_str)
    }

    /// Nearest word by Euclidean distance, ties to the lowest id.
    pub fn assign(&self, d: &[f32]) -> Result<usize> {
        if d.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: d.len(),
            });
        }
        Ok(nearest(d, &self.centroids, self.dim).0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocabularyOptions {
    pub kmeans: KMeansConfig,
    /// Per clustering run, descriptors beyond this are subsampled.
    pub max_descriptors: usize,
}

impl Default for VocabularyOptions {
    fn default() -> Self {
        VocabularyOptions {
            kmeans: KMeansConfig::default(),
            max_descriptors: 500_000,
        }
    }
}

pub const DEFAULT_WORDS: usize = 200;

fn cluster(points: &PointSet, k: usize, seed: u64, lane: u64, opts: &VocabularyOptions) -> Result<Vec<f64>> {
    let points = points.subsample(opts.max_descriptors, seed, lane);
    Ok(kmeans(&points, k, seed, lane, &opts.kmeans)?.centroids)
}

pub fn build_universal_vocabulary(
    descriptors: &PointSet,
    words: usize,
    seed: u64,
    opts: &VocabularyOptions,
) -> Result<Vocabulary> {
    if descriptors.len() < words {
        return Err(Error::InsufficientDescriptors {
            category: "*".into(),
            needed: words,
            available: descriptors.len(),
        });
    }
    let centroids = cluster(descriptors, words, seed, 0, opts)?;
    Vocabulary::new(
        VocabularyKind::Universal,
        words,
        Vec::new(),
        descriptors.dim(),
        centroids,
    )
}

fn build_blocks(
    kind: VocabularyKind,
    per_category: &BTreeMap<String, &PointSet>,
    words: usize,
    seed: u64,
    lane_base: u64,
    opts: &VocabularyOptions,
) -> Result<Vocabulary> {
    let dim = per_category
        .values()
        .next()
        .map(|p| p.dim())
        .ok_or(Error::Empty("no categories"))?;
    for (category, points) in per_category {
        if points.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: points.dim(),
            });
        }
        if points.len() < words {
            return Err(Error::InsufficientDescriptors {
                category: category.clone(),
                needed: words,
                available: points.len(),
            });
        }
    }
    let mut centroids = Vec::with_capacity(per_category.len() * words * dim);
    for (i, points) in per_category.values().enumerate() {
        centroids.extend(cluster(points, words, seed, lane_base + i as u64, opts)?);
    }
    Vocabulary::new(kind, words, per_category.keys().cloned().collect(), dim, centroids)
}

/// Per-category k-means, blocks concatenated in lexicographic category order.
pub fn build_integrated_vocabulary(
    per_category: &BTreeMap<String, PointSet>,
    words: usize,
    seed: u64,
    opts: &VocabularyOptions,
) -> Result<Vocabulary> {
    let refs = per_category.iter().map(|(c, p)| (c.clone(), p)).collect();
    build_blocks(VocabularyKind::Integrated, &refs, words, seed, 0, opts)
}

/// Descriptors of one category split by the half their keypoint lies in.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HalfDescriptors {
    pub upper: PointSet,
    pub lower: PointSet,
}

/// Upper and lower integrated vocabularies.
pub fn build_half_vocabularies(
    per_category: &BTreeMap<String, HalfDescriptors>,
    words: usize,
    seed: u64,
    opts: &VocabularyOptions,
) -> Result<(Vocabulary, Vocabulary)> {
    let upper = per_category.iter().map(|(c, h)| (c.clone(), &h.upper)).collect();
    let lower = per_category.iter().map(|(c, h)| (c.clone(), &h.lower)).collect();
    Ok((
        build_blocks(VocabularyKind::UpperIntegrated, &upper, words, seed, 1 << 16, opts)?,
        build_blocks(VocabularyKind::LowerIntegrated, &lower, words, seed, 2 << 16, opts)?,
    ))
}
