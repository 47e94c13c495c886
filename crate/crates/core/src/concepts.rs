//! Local semantic concepts: grid-region representations, half-specific
//! region annotators, image annotation and concept-occurrence vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bow::{assign_words, normalize_concat, WordMap};
use crate::error::{Error, Result};
use crate::global_features::{color_histogram, color_moments, dwt_texture};
use crate::imaging::{grid_partition, half_of_cell, CellBounds, ColorSpace, FeatureImage, Half};
use crate::keypoints::LocalFeatures;
use crate::vocabulary::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Concept {
    Sky,
    Water,
    Grass,
    Trunks,
    Foliage,
    Field,
    Rocks,
    Flowers,
    Sand,
}

pub const N_CONCEPTS: usize = 9;

impl Concept {
    pub const ALL: [Concept; N_CONCEPTS] = [
        Concept::Sky,
        Concept::Water,
        Concept::Grass,
        Concept::Trunks,
        Concept::Foliage,
        Concept::Field,
        Concept::Rocks,
        Concept::Flowers,
        Concept::Sand,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Concept::Sky => "sky",
            Concept::Water => "water",
            Concept::Grass => "grass",
            Concept::Trunks => "trunks",
            Concept::Foliage => "foliage",
            Concept::Field => "field",
            Concept::Rocks => "rocks",
            Concept::Flowers => "flowers",
            Concept::Sand => "sand",
        }
    }
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Concept {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Concept::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownConcept(s.to_string()))
    }
}

/// A grid cell's label: one concept, or two sharing the cell equally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellLabel {
    Single(Concept),
    Split(Concept, Concept),
}

impl CellLabel {
    pub fn weights(self) -> Vec<(Concept, f64)> {
        match self {
            CellLabel::Single(c) => vec![(c, 1.0)],
            CellLabel::Split(a, b) => vec![(a, 0.5), (b, 0.5)],
        }
    }

    /// The label a hard classifier is trained on; the first-listed concept of a split.
    pub fn primary(self) -> Concept {
        match self {
            CellLabel::Single(c) | CellLabel::Split(c, _) => c,
        }
    }
}

impl fmt::Display for CellLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellLabel::Single(c) => write!(f, "{c}"),
            CellLabel::Split(a, b) => write!(f, "{a}/{b}"),
        }
    }
}

impl FromStr for CellLabel {
    type Err = Error;

    fn from_str(token: &str) -> Result<Self> {
        let mut pieces = token.split('/');
        let first = pieces.next().unwrap_or_default();
        match (pieces.next(), pieces.next()) {
            (None, _) => Ok(CellLabel::Single(first.parse()?)),
            (Some(second), None) => {
                if first.is_empty() || second.is_empty() {
                    return Err(Error::Annotation(format!("malformed split token `{token}`")));
                }
                let (a, b): (Concept, Concept) = (first.parse()?, second.parse()?);
                Ok(if a == b {
                    CellLabel::Single(a)
                } else {
                    CellLabel::Split(a, b)
                })
            }
            _ => Err(Error::Annotation(format!("malformed split token `{token}`"))),
        }
    }
}

/// Row-major grid of cell labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptGrid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<CellLabel>,
}

impl ConceptGrid {
    pub fn new(rows: usize, cols: usize, cells: Vec<CellLabel>) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::Annotation(format!(
                "{} cells for a {rows}x{cols} grid",
                cells.len()
            )));
        }
        Ok(ConceptGrid { rows, cols, cells })
    }

    pub fn uniform(rows: usize, cols: usize, concept: Concept) -> Self {
        ConceptGrid {
            rows,
            cols,
            cells: vec![CellLabel::Single(concept); rows * cols],
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> CellLabel {
        self.cells[row * self.cols + col]
    }

    /// Parses `rows` lines of `cols` whitespace-separated tokens.
    pub fn parse(text: &str, rows: usize, cols: usize) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != rows {
            return Err(Error::Annotation(format!(
                "expected {rows} rows, found {}",
                lines.len()
            )));
        }
        let mut cells = Vec::with_capacity(rows * cols);
        for (r, line) in lines.iter().enumerate() {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != cols {
                return Err(Error::Annotation(format!(
                    "row {r}: expected {cols} columns, found {}",
                    tokens.len()
                )));
            }
            for t in tokens {
                cells.push(t.parse()?);
            }
        }
        ConceptGrid::new(rows, cols, cells)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in self.cells.chunks(self.cols) {
            let tokens: Vec<String> = row.iter().map(ToString::to_string).collect();
            out.push_str(&tokens.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Normalised concept frequencies over an image's grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConceptOccurrenceVector(pub [f64; N_CONCEPTS]);

impl ConceptOccurrenceVector {
    pub fn get(&self, c: Concept) -> f64 {
        self.0[c.index()]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }

    /// `image_id v1 … v9` with nine decimals.
    pub fn export_line(&self, image_id: &str) -> String {
        let values: Vec<String> = self.0.iter().map(|v| format!("{v:.9}")).collect();
        format!("{image_id}\t{}", values.join("\t"))
    }
}

/// Sum of cell weights per concept divided by the number of cells.
pub fn cov_from_annotations(grid: &ConceptGrid) -> ConceptOccurrenceVector {
    let mut v = [0.0; N_CONCEPTS];
    for cell in &grid.cells {
        for (c, w) in cell.weights() {
            v[c.index()] += w;
        }
    }
    let n = grid.cells.len() as f64;
    v.iter_mut().for_each(|x| *x /= n);
    ConceptOccurrenceVector(v)
}

/// The fourteen region representations used to train annotators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionApproach {
    ColHist,
    ColMom,
    Dwt,
    ColHistDwt,
    Ubow,
    Ibow,
    UbowColHist,
    UbowColMom,
    UbowDwt,
    UbowColHistDwt,
    IbowColHist,
    IbowColMom,
    IbowDwt,
    IbowColHistDwt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RegionBow {
    None,
    Universal,
    Integrated,
}

impl RegionApproach {
    pub const ALL: [RegionApproach; 14] = [
        RegionApproach::ColHist,
        RegionApproach::ColMom,
        RegionApproach::Dwt,
        RegionApproach::ColHistDwt,
        RegionApproach::Ubow,
        RegionApproach::Ibow,
        RegionApproach::UbowColHist,
        RegionApproach::UbowColMom,
        RegionApproach::UbowDwt,
        RegionApproach::UbowColHistDwt,
        RegionApproach::IbowColHist,
        RegionApproach::IbowColMom,
        RegionApproach::IbowDwt,
        RegionApproach::IbowColHistDwt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegionApproach::ColHist => "colhist",
            RegionApproach::ColMom => "colmom",
            RegionApproach::Dwt => "dwt",
            RegionApproach::ColHistDwt => "colhist+dwt",
            RegionApproach::Ubow => "ubow",
            RegionApproach::Ibow => "ibow",
            RegionApproach::UbowColHist => "ubow+colhist",
            RegionApproach::UbowColMom => "ubow+colmom",
            RegionApproach::UbowDwt => "ubow+dwt",
            RegionApproach::UbowColHistDwt => "ubow+colhist+dwt",
            RegionApproach::IbowColHist => "ibow+colhist",
            RegionApproach::IbowColMom => "ibow+colmom",
            RegionApproach::IbowDwt => "ibow+dwt",
            RegionApproach::IbowColHistDwt => "ibow+colhist+dwt",
        }
    }

    /// Whether the representation needs keypoints and a vocabulary.
    pub fn uses_vocabulary(self) -> bool {
        self.bow() != RegionBow::None
    }

    fn bow(self) -> RegionBow {
        use RegionApproach::*;
        match self {
            Ubow | UbowColHist | UbowColMom | UbowDwt | UbowColHistDwt => RegionBow::Universal,
            Ibow | IbowColHist | IbowColMom | IbowDwt | IbowColHistDwt => RegionBow::Integrated,
            _ => RegionBow::None,
        }
    }

    fn colour(self) -> (bool, bool, bool) {
        use RegionApproach::*;
        // (histogram, moments, wavelet)
        match self {
            ColHist | UbowColHist | IbowColHist => (true, false, false),
            ColMom | UbowColMom | IbowColMom => (false, true, false),
            Dwt | UbowDwt | IbowDwt => (false, false, true),
            ColHistDwt | UbowColHistDwt | IbowColHistDwt => (true, false, true),
            Ubow | Ibow => (false, false, false),
        }
    }

    /// Dimensionality for `channels` channels and the given vocabulary sizes.
    pub fn dim(self, channels: usize, universal_words: usize, integrated_words: usize) -> usize {
        use crate::global_features::FeatureKind;
        let bow = match self.bow() {
            RegionBow::None => 0,
            RegionBow::Universal => universal_words,
            RegionBow::Integrated => integrated_words,
        };
        let (h, m, d) = self.colour();
        bow + usize::from(h) * FeatureKind::ColHist.dim(channels)
            + usize::from(m) * FeatureKind::ColMom.dim(channels)
            + usize::from(d) * FeatureKind::Dwt.dim(channels)
    }
}

impl fmt::Display for RegionApproach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegionApproach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_ascii_lowercase().replace(' ', "");
        RegionApproach::ALL
            .iter()
            .copied()
            .find(|a| a.name() == wanted)
            .ok_or_else(|| {
                let names: Vec<&str> = RegionApproach::ALL.iter().map(|a| a.name()).collect();
                Error::InvalidArgument(format!("unknown region approach `{s}`; valid: {}", names.join(", ")))
            })
    }
}

/// Vocabularies available to region encoders.
#[derive(Debug, Clone, Copy, Default)]
pub struct RegionVocabularies<'a> {
    pub universal: Option<&'a Vocabulary>,
    pub upper: Option<&'a Vocabulary>,
    pub lower: Option<&'a Vocabulary>,
}

/// Encodes grid regions of one image, with descriptors quantised once per vocabulary.
pub struct RegionEncoder<'a> {
    image: &'a FeatureImage,
    approach: RegionApproach,
    universal: Option<WordMap>,
    upper: Option<WordMap>,
    lower: Option<WordMap>,
}

impl<'a> RegionEncoder<'a> {
    pub fn new(
        image: &'a FeatureImage,
        features: &LocalFeatures,
        approach: RegionApproach,
        vocabs: &RegionVocabularies<'_>,
    ) -> Result<Self> {
        let (mut universal, mut upper, mut lower) = (None, None, None);
        match approach.bow() {
            RegionBow::None => {}
            RegionBow::Universal => {
                let v = vocabs.universal.ok_or(Error::MissingVocabulary("universal"))?;
                universal = Some(assign_words(features, v)?);
            }
            RegionBow::Integrated => {
                let u = vocabs.upper.ok_or(Error::MissingVocabulary("upper integrated"))?;
                let l = vocabs.lower.ok_or(Error::MissingVocabulary("lower integrated"))?;
                upper = Some(assign_words(features, u)?);
                lower = Some(assign_words(features, l)?);
            }
        }
        Ok(RegionEncoder {
            image,
            approach,
            universal,
            upper,
            lower,
        })
    }

    pub fn encode(&self, region: &CellBounds, half: Half) -> Result<Vec<f64>> {
        if region.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let mut parts = Vec::with_capacity(4);
        let words = match self.approach.bow() {
            RegionBow::None => None,
            RegionBow::Universal => self.universal.as_ref(),
            RegionBow::Integrated => match half {
                Half::Upper => self.upper.as_ref(),
                Half::Lower => self.lower.as_ref(),
            },
        };
        if let Some(words) = words {
            parts.push(words.histogram(region).counts.iter().map(|&c| f64::from(c)).collect());
        }
        let (h, m, d) = self.approach.colour();
        if h {
            parts.push(color_histogram(self.image, region)?.values);
        }
        if m {
            parts.push(color_moments(self.image, region)?.values);
        }
        if d {
            parts.push(dwt_texture(self.image, region)?.values);
        }
        Ok(normalize_concat(parts))
    }
}

/// Representation of one region under a region approach.
pub fn region_representation(
    image: &FeatureImage,
    features: &LocalFeatures,
    region: &CellBounds,
    half: Half,
    approach: RegionApproach,
    vocabs: &RegionVocabularies<'_>,
) -> Result<Vec<f64>> {
    RegionEncoder::new(image, features, approach, vocabs)?.encode(region, half)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnnotatorKind {
    Knn,
    NearestCentroid,
}

impl FromStr for AnnotatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "knn" => Ok(AnnotatorKind::Knn),
            "nearest-centroid" | "centroid" => Ok(AnnotatorKind::NearestCentroid),
            other => Err(Error::InvalidArgument(format!("unknown annotator `{other}`"))),
        }
    }
}

impl fmt::Display for AnnotatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnnotatorKind::Knn => "knn",
            AnnotatorKind::NearestCentroid => "nearest-centroid",
        })
    }
}

pub const DEFAULT_NEIGHBOURS: usize = 5;

/// A trained region classifier for one image half.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatorModel {
    pub half: Half,
    pub approach: RegionApproach,
    pub space: ColorSpace,
    pub kind: AnnotatorKind,
    pub k: usize,
    dim: usize,
    exemplars: Vec<(Vec<f64>, Concept)>,
    centroids: Vec<(Vec<f64>, Concept)>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn train_annotator(
    labeled: Vec<(Vec<f64>, Concept)>,
    half: Half,
    approach: RegionApproach,
    space: ColorSpace,
    k: usize,
    kind: AnnotatorKind,
) -> Result<AnnotatorModel> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if labeled.len() < k {
        return Err(Error::InsufficientPoints {
            needed: k,
            available: labeled.len(),
        });
    }
    let dim = labeled[0].0.len();
    if let Some((v, _)) = labeled.iter().find(|(v, _)| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: v.len(),
        });
    }
    let mut centroids = Vec::new();
    if kind == AnnotatorKind::NearestCentroid {
        for c in Concept::ALL {
            let members: Vec<&Vec<f64>> = labeled.iter().filter(|(_, l)| *l == c).map(|(v, _)| v).collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = vec![0.0; dim];
            for m in &members {
                for (s, v) in mean.iter_mut().zip(m.iter()) {
                    *s += v;
                }
            }
            mean.iter_mut().for_each(|s| *s /= members.len() as f64);
            centroids.push((mean, c));
        }
    }
    Ok(AnnotatorModel {
        half,
        approach,
        space,
        kind,
        k,
        dim,
        exemplars: labeled,
        centroids,
    })
}

impl AnnotatorModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn exemplars(&self) -> &[(Vec<f64>, Concept)] {
        &self.exemplars
    }

    /// Concepts present in the training data.
    pub fn known_concepts(&self) -> Vec<Concept> {
        let mut seen: Vec<Concept> = self.exemplars.iter().map(|(_, c)| *c).collect();
        seen.sort();
        seen.dedup();
        seen
    }

    /// Majority vote over the `k` nearest exemplars (distance ties go to the
    /// earlier exemplar); vote ties go to the class holding the nearest
    /// neighbour. Nearest-centroid models return the closest class mean.
    pub fn predict(&self, v: &[f64]) -> Result<Concept> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        if self.kind == AnnotatorKind::NearestCentroid {
            let mut best = (f64::INFINITY, Concept::Sky);
            for (c, label) in &self.centroids {
                let d = sq_dist(c, v);
                if d < best.0 {
                    best = (d, *label);
                }
            }
            return Ok(best.1);
        }
        let mut dists: Vec<(f64, usize)> = self
            .exemplars
            .iter()
            .enumerate()
            .map(|(i, (e, _))| (sq_dist(e, v), i))
            .collect();
        let k = self.k.min(dists.len());
        dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut nearest = dists[..k].to_vec();
        nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = [0usize; N_CONCEPTS];
        for &(_, i) in &nearest {
            votes[self.exemplars[i].1.index()] += 1;
        }
        let top = *votes.iter().max().expect("nine classes");
        let winner = nearest
            .iter()
            .map(|&(_, i)| self.exemplars[i].1)
            .find(|c| votes[c.index()] == top)
            .expect("some neighbour holds the top vote");
        Ok(winner)
    }
}

/// Regions and their half under a `rows × cols` grid.
pub fn grid_regions(width: usize, height: usize, rows: usize, cols: usize) -> Result<Vec<(CellBounds, Half)>> {
    Ok(grid_partition(width, height, rows, cols)?
        .into_iter()
        .map(|c| (c, half_of_cell(&c, height)))
        .collect())
}

/// A region vector with its concept label.
pub type Exemplar = (Vec<f64>, Concept);

/// Training exemplars from one annotated image, split by half.
pub fn region_exemplars(
    image: &FeatureImage,
    features: &LocalFeatures,
    annotation: &ConceptGrid,
    approach: RegionApproach,
    vocabs: &RegionVocabularies<'_>,
) -> Result<(Vec<Exemplar>, Vec<Exemplar>)> {
    let encoder = RegionEncoder::new(image, features, approach, vocabs)?;
    let regions = grid_regions(image.width(), image.height(), annotation.rows, annotation.cols)?;
    let (mut upper, mut lower) = (Vec::new(), Vec::new());
    for ((cell, half), label) in regions.iter().zip(&annotation.cells) {
        let v = encoder.encode(cell, *half)?;
        match half {
            Half::Upper => upper.push((v, label.primary())),
            Half::Lower => lower.push((v, label.primary())),
        }
    }
    Ok((upper, lower))
}

/// Labels every grid cell with its half's model; hard labels only.
pub fn annotate_image(
    image: &FeatureImage,
    features: &LocalFeatures,
    models: (&AnnotatorModel, &AnnotatorModel),
    vocabs: &RegionVocabularies<'_>,
    rows: usize,
    cols: usize,
) -> Result<ConceptGrid> {
    let (upper, lower) = models;
    if upper.half != Half::Upper || lower.half != Half::Lower {
        return Err(Error::ModelMismatch("models must be (upper, lower)".into()));
    }
    if upper.approach != lower.approach {
        return Err(Error::ModelMismatch(format!(
            "upper uses {}, lower uses {}",
            upper.approach, lower.approach
        )));
    }
    for m in [upper, lower] {
        if m.space != image.space() {
            return Err(Error::ModelMismatch(format!(
                "model trained on {:?} images, input is {:?}",
                m.space,
                image.space()
            )));
        }
    }
    let encoder = RegionEncoder::new(image, features, upper.approach, vocabs)?;
    let mut cells = Vec::with_capacity(rows * cols);
    for (cell, half) in grid_regions(image.width(), image.height(), rows, cols)? {
        let model = if half == Half::Upper { upper } else { lower };
        let v = encoder.encode(&cell, half)?;
        cells.push(CellLabel::Single(model.predict(&v)?));
    }
    ConceptGrid::new(rows, cols, cells)
}
