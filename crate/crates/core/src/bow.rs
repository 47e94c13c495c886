//! Bag-of-visual-words histograms, spatial-pyramid encodings, and the
//! fourteen whole-image representations.
//!
//! Every representation is composed the same way: each part is
//! L2-normalised on its own, parts are concatenated (visual words first,
//! colour/texture after), and the concatenation is L2-normalised again.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global_features::{
    color_histogram, dwt_texture, pyramidal_color_moments, weight_pyramid, FeatureBlock, FeatureKind,
};
use crate::imaging::{pyramid_cell_count, pyramid_cells, CellBounds, FeatureImage};
use crate::keypoints::LocalFeatures;
use crate::vocabulary::{Vocabulary, VocabularyKind};

/// Visual-word counts over one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BowHistogram {
    pub counts: Vec<u32>,
    pub bounds: CellBounds,
}

impl BowHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Keypoint positions paired with their nearest visual word.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WordMap {
    pub n_words: usize,
    pub positions: Vec<(f32, f32)>,
    pub words: Vec<usize>,
}

impl WordMap {
    pub fn histogram(&self, bounds: &CellBounds) -> BowHistogram {
        let mut counts = vec![0u32; self.n_words];
        for (&(x, y), &w) in self.positions.iter().zip(&self.words) {
            if bounds.contains(f64::from(x), f64::from(y)) {
                counts[w] += 1;
            }
        }
        BowHistogram {
            counts,
            bounds: *bounds,
        }
    }
}

/// Quantises every descriptor of an image against `vocab`.
pub fn assign_words(features: &LocalFeatures, vocab: &Vocabulary) -> Result<WordMap> {
    let mut map = WordMap {
        n_words: vocab.n_words(),
        positions: Vec::with_capacity(features.len()),
        words: Vec::with_capacity(features.len()),
    };
    for (kp, d) in features.keypoints.iter().zip(&features.descriptors) {
        map.words.push(vocab.assign(d.as_slice())?);
        map.positions.push((kp.x, kp.y));
    }
    Ok(map)
}

/// Counts of visual words over the keypoints inside `bounds`.
pub fn bow_histogram(features: &LocalFeatures, vocab: &Vocabulary, bounds: &CellBounds) -> Result<BowHistogram> {
    Ok(assign_words(features, vocab)?.histogram(bounds))
}

/// Concatenated per-cell histograms over pyramid levels `0..=max_level`.
pub fn pyramid_bow(words: &WordMap, width: usize, height: usize, max_level: usize) -> Result<Vec<f64>> {
    let cells = pyramid_cells(width, height, max_level)?;
    let mut out = Vec::with_capacity(cells.len() * words.n_words);
    for cell in &cells {
        out.extend(words.histogram(cell).counts.iter().map(|&c| f64::from(c)));
    }
    Ok(out)
}

/// The fourteen whole-image representations, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    ColHist,
    PColMomL0,
    Dwt,
    ColHistDwt,
    PColMomL2,
    Ubow,
    Ibow,
    PubowL1,
    PubowL2,
    PubowL2PColMomL2,
    PibowL1,
    PibowL2,
    PibowL2PColMomL2,
    PibowL2WPColMomL2,
}

/// What an approach is made of: an optional BOW part followed by colour parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    pub bow: Option<(VocabularyKind, usize)>,
    pub colour: Vec<FeatureKind>,
}

impl Approach {
    pub const ALL: [Approach; 14] = [
        Approach::ColHist,
        Approach::PColMomL0,
        Approach::Dwt,
        Approach::ColHistDwt,
        Approach::PColMomL2,
        Approach::Ubow,
        Approach::Ibow,
        Approach::PubowL1,
        Approach::PubowL2,
        Approach::PubowL2PColMomL2,
        Approach::PibowL1,
        Approach::PibowL2,
        Approach::PibowL2PColMomL2,
        Approach::PibowL2WPColMomL2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Approach::ColHist => "ColHist",
            Approach::PColMomL0 => "PColMom_L0",
            Approach::Dwt => "DWT",
            Approach::ColHistDwt => "ColHist+DWT",
            Approach::PColMomL2 => "PColMom_L2",
            Approach::Ubow => "UBOW",
            Approach::Ibow => "IBOW",
            Approach::PubowL1 => "PUBOW_L1",
            Approach::PubowL2 => "PUBOW_L2",
            Approach::PubowL2PColMomL2 => "PUBOW_L2+PColMom_L2",
            Approach::PibowL1 => "PIBOW_L1",
            Approach::PibowL2 => "PIBOW_L2",
            Approach::PibowL2PColMomL2 => "PIBOW_L2+PColMom_L2",
            Approach::PibowL2WPColMomL2 => "PIBOW_L2+WPColMom_L2",
        }
    }

    /// Store tag, 1-based in table order.
    pub fn tag(self) -> u8 {
        Approach::ALL.iter().position(|&a| a == self).expect("listed") as u8 + 1
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Approach::ALL.get(usize::from(tag).checked_sub(1)?).copied()
    }

    pub fn recipe(self) -> Recipe {
        use FeatureKind::*;
        use VocabularyKind::{Integrated, Universal};
        let (bow, colour) = match self {
            Approach::ColHist => (None, vec![ColHist]),
            Approach::PColMomL0 => (None, vec![PColMom { level: 0 }]),
            Approach::Dwt => (None, vec![Dwt]),
            Approach::ColHistDwt => (None, vec![ColHist, Dwt]),
            Approach::PColMomL2 => (None, vec![PColMom { level: 2 }]),
            Approach::Ubow => (Some((Universal, 0)), vec![]),
            Approach::Ibow => (Some((Integrated, 0)), vec![]),
            Approach::PubowL1 => (Some((Universal, 1)), vec![]),
            Approach::PubowL2 => (Some((Universal, 2)), vec![]),
            Approach::PubowL2PColMomL2 => (Some((Universal, 2)), vec![PColMom { level: 2 }]),
            Approach::PibowL1 => (Some((Integrated, 1)), vec![]),
            Approach::PibowL2 => (Some((Integrated, 2)), vec![]),
            Approach::PibowL2PColMomL2 => (Some((Integrated, 2)), vec![PColMom { level: 2 }]),
            Approach::PibowL2WPColMomL2 => (Some((Integrated, 2)), vec![WPColMom { level: 2 }]),
        };
        Recipe { bow, colour }
    }

    pub fn needs_vocabulary(self) -> Option<VocabularyKind> {
        self.recipe().bow.map(|(k, _)| k)
    }

    /// Output dimensionality for `channels`-channel images, a universal
    /// vocabulary of `universal_words` and an integrated one of `integrated_words`.
    pub fn dim(self, channels: usize, universal_words: usize, integrated_words: usize) -> usize {
        let recipe = self.recipe();
        let bow = recipe.bow.map_or(0, |(kind, level)| {
            let words = if kind == VocabularyKind::Universal {
                universal_words
            } else {
                integrated_words
            };
            words * pyramid_cell_count(level)
        });
        bow + recipe.colour.iter().map(|k| k.dim(channels)).sum::<usize>()
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .iter()
            .copied()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let names: Vec<&str> = Approach::ALL.iter().map(|a| a.name()).collect();
                Error::InvalidArgument(format!("unknown approach `{s}`; valid: {}", names.join(", ")))
            })
    }
}

/// A unit-length image representation. Identically zero vectors are kept
/// and flagged instead of being normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub approach: Approach,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

pub fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scales to unit length; zero vectors are left untouched.
pub fn l2_normalize(values: &mut [f64]) {
    let n = l2_norm(values);
    if n > 0.0 {
        values.iter_mut().for_each(|v| *v /= n);
    }
}

/// Normalises each part, concatenates, and normalises the result.
pub fn normalize_concat(parts: impl IntoIterator<Item = Vec<f64>>) -> Vec<f64> {
    let mut out = Vec::new();
    for mut p in parts {
        l2_normalize(&mut p);
        out.extend(p);
    }
    l2_normalize(&mut out);
    out
}

/// One raw input to [`compose_representation`].
#[derive(Debug, Clone, PartialEq)]
pub enum Part {
    Bow(Vec<f64>),
    Block(FeatureBlock),
}

/// Builds the approach's vector from raw parts given in recipe order. The
/// weighted variant takes an unweighted pyramidal block and applies
/// `pyramid_weights` before normalisation.
pub fn compose_representation(approach: Approach, parts: &[Part], pyramid_weights: &[f64]) -> Result<FeatureVector> {
    let recipe = approach.recipe();
    let expected = usize::from(recipe.bow.is_some()) + recipe.colour.len();
    if parts.len() != expected {
        return Err(Error::Recipe(format!(
            "{approach} takes {expected} parts, got {}",
            parts.len()
        )));
    }
    let mut raw: Vec<Vec<f64>> = Vec::with_capacity(expected);
    let mut rest = parts;
    if let Some((_, level)) = recipe.bow {
        match &parts[0] {
            Part::Bow(v) => {
                let cells = pyramid_cell_count(level);
                if v.is_empty() || v.len() % cells != 0 {
                    return Err(Error::DimensionMismatch {
                        expected: cells * (v.len() / cells).max(1),
                        actual: v.len(),
                    });
                }
                raw.push(v.clone());
            }
            Part::Block(b) => {
                return Err(Error::Recipe(format!(
                    "{approach} expects a BOW part first, got {:?}",
                    b.kind
                )))
            }
        }
        rest = &parts[1..];
    }
    for (kind, part) in recipe.colour.iter().zip(rest) {
        let Part::Block(block) = part else {
            return Err(Error::Recipe(format!("{approach} expects a {kind:?} block")));
        };
        let block = match (*kind, block.kind) {
            (FeatureKind::WPColMom { level }, FeatureKind::PColMom { level: l }) if l == level => {
                weight_pyramid(block, pyramid_weights)?
            }
            (k, b) if k == b => block.clone(),
            (k, b) => return Err(Error::Recipe(format!("{approach} expects {k:?}, got {b:?}"))),
        };
        if block.dim() != kind.dim(3) && block.dim() != kind.dim(1) {
            return Err(Error::DimensionMismatch {
                expected: kind.dim(3),
                actual: block.dim(),
            });
        }
        raw.push(block.values);
    }
    Ok(FeatureVector {
        approach,
        values: normalize_concat(raw),
    })
}

/// Everything needed to encode one image.
pub struct EncodeInputs<'a> {
    pub image: &'a FeatureImage,
    pub features: &'a LocalFeatures,
    pub universal: Option<&'a Vocabulary>,
    pub integrated: Option<&'a Vocabulary>,
}

/// Extracts every part an approach needs and composes it.
pub fn encode_image(inputs: &EncodeInputs<'_>, approach: Approach, pyramid_weights: &[f64]) -> Result<FeatureVector> {
    let recipe = approach.recipe();
    let (w, h) = (inputs.image.width(), inputs.image.height());
    let mut parts = Vec::new();
    if let Some((kind, level)) = recipe.bow {
        let vocab = match kind {
            VocabularyKind::Universal => inputs.universal.ok_or(Error::MissingVocabulary("universal"))?,
            _ => inputs.integrated.ok_or(Error::MissingVocabulary("integrated"))?,
        };
        let words = assign_words(inputs.features, vocab)?;
        parts.push(Part::Bow(pyramid_bow(&words, w, h, level)?));
    }
    let full = inputs.image.full_bounds();
    for kind in recipe.colour {
        let block = match kind {
            FeatureKind::ColHist => color_histogram(inputs.image, &full)?,
            FeatureKind::Dwt => dwt_texture(inputs.image, &full)?,
            FeatureKind::ColMom => crate::global_features::color_moments(inputs.image, &full)?,
            FeatureKind::PColMom { level } | FeatureKind::WPColMom { level } => {
                pyramidal_color_moments(inputs.image, level as usize)?
            }
        };
        parts.push(Part::Block(block));
    }
    compose_representation(approach, &parts, pyramid_weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::global_features::DEFAULT_PYRAMID_WEIGHTS;
    use crate::keypoints::{Descriptor, Keypoint, DESCRIPTOR_LEN};
    use proptest::prelude::*;

    fn one_hot_vocab(n: usize) -> Vocabulary {
        let mut c = vec![0.0; n * DESCRIPTOR_LEN];
        for w in 0..n {
            c[w * DESCRIPTOR_LEN + w] = 1.0;
        }
        Vocabulary::new(VocabularyKind::Universal, n, vec![], DESCRIPTOR_LEN, c).unwrap()
    }

    fn features_at(points: &[(f32, f32, usize)]) -> LocalFeatures {
        let mut f = LocalFeatures::default();
        for &(x, y, w) in points {
            f.keypoints.push(Keypoint {
                x,
                y,
                scale: 2.0,
                orientation: 0.0,
            });
            let mut d = [0.0f32; DESCRIPTOR_LEN];
            d[w] = 1.0;
            f.descriptors.push(Descriptor(d));
        }
        f
    }

    #[test]
    fn histogram_counts_words() {
        let vocab = one_hot_vocab(10);
        let feats = features_at(&[(1.0, 1.0, 3); 5]);
        let h = bow_histogram(&feats, &vocab, &CellBounds::new(0, 0, 10, 10, 0)).unwrap();
        let mut expected = vec![0u32; 10];
        expected[3] = 5;
        assert_eq!(h.counts, expected);
        let empty = bow_histogram(&feats, &vocab, &CellBounds::new(5, 5, 10, 10, 0)).unwrap();
        assert_eq!(empty.total(), 0);
    }

    #[test]
    fn pyramid_dims_and_level_zero() {
        let vocab = one_hot_vocab(20);
        let feats = features_at(&[(3.0, 4.0, 1), (30.0, 20.0, 2), (15.5, 12.0, 1)]);
        let words = assign_words(&feats, &vocab).unwrap();
        assert_eq!(pyramid_bow(&words, 32, 24, 2).unwrap().len(), 20 * 21);
        assert_eq!(pyramid_bow(&words, 32, 24, 1).unwrap().len(), 20 * 5);
        let l0 = pyramid_bow(&words, 32, 24, 0).unwrap();
        let whole = words.histogram(&CellBounds::new(0, 0, 32, 24, 0));
        assert_eq!(l0, whole.counts.iter().map(|&c| f64::from(c)).collect::<Vec<_>>());
    }

    #[test]
    fn approach_names_tags_and_dims() {
        let dims: Vec<usize> = Approach::ALL.iter().map(|a| a.dim(3, 200, 1200)).collect();
        assert_eq!(
            dims,
            vec![84, 6, 18, 102, 126, 200, 1200, 1000, 4200, 4326, 6000, 25200, 25326, 25326]
        );
        for a in Approach::ALL {
            assert_eq!(a.name().parse::<Approach>().unwrap(), a);
            assert_eq!(Approach::from_tag(a.tag()), Some(a));
        }
        assert!("nope".parse::<Approach>().unwrap_err().to_string().contains("PIBOW_L2"));
        assert_eq!(Approach::ColHist.dim(1, 200, 1200), 36);
    }

    #[test]
    fn single_part_is_unit_scaled() {
        let block = FeatureBlock {
            kind: FeatureKind::ColHist,
            values: (0..84).map(|i| (i % 5) as f64).collect(),
        };
        let n = l2_norm(&block.values);
        let v = compose_representation(Approach::ColHist, &[Part::Block(block.clone())], &[]).unwrap();
        for (a, b) in v.values.iter().zip(&block.values) {
            assert!((a - b / n).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_parts_give_zero_vector() {
        let parts = [
            Part::Bow(vec![0.0; 4200]),
            Part::Block(FeatureBlock {
                kind: FeatureKind::PColMom { level: 2 },
                values: vec![0.0; 126],
            }),
        ];
        let v = compose_representation(Approach::PubowL2PColMomL2, &parts, &[]).unwrap();
        assert_eq!(v.dim(), 4326);
        assert!(v.is_zero());
    }

    #[test]
    fn recipe_mismatches() {
        let hist = Part::Block(FeatureBlock {
            kind: FeatureKind::ColHist,
            values: vec![1.0; 84],
        });
        assert!(compose_representation(Approach::Dwt, std::slice::from_ref(&hist), &[]).is_err());
        assert!(compose_representation(Approach::ColHistDwt, std::slice::from_ref(&hist), &[]).is_err());
        assert!(compose_representation(Approach::Ubow, &[hist], &[]).is_err());
        let short = Part::Block(FeatureBlock {
            kind: FeatureKind::ColHist,
            values: vec![1.0; 80],
        });
        assert!(matches!(
            compose_representation(Approach::ColHist, &[short], &[]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(compose_representation(Approach::PubowL1, &[Part::Bow(vec![1.0; 7])], &[]).is_err());
    }

    #[test]
    fn weighted_variant_applies_weights_before_normalising() {
        let bow = vec![1.0; 1200 * 21];
        let pcm = FeatureBlock {
            kind: FeatureKind::PColMom { level: 2 },
            values: (0..126).map(|i| 1.0 + i as f64).collect(),
        };
        let v = compose_representation(
            Approach::PibowL2WPColMomL2,
            &[Part::Bow(bow.clone()), Part::Block(pcm.clone())],
            &DEFAULT_PYRAMID_WEIGHTS,
        )
        .unwrap();
        let weighted = weight_pyramid(&pcm, &DEFAULT_PYRAMID_WEIGHTS).unwrap().values;
        let expected = normalize_concat([bow, weighted]);
        assert_eq!(v.values, expected);
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn positive_part_scaling_is_invisible(
            hist in proptest::collection::vec(0.0f64..10.0, 84),
            dwt in proptest::collection::vec(0.0f64..1.0, 18),
            a in 0.01f64..100.0,
            b in 0.01f64..100.0,
        ) {
            prop_assume!(hist.iter().any(|&v| v > 0.0) && dwt.iter().any(|&v| v > 0.0));
            let mk = |s: f64, t: f64| {
                compose_representation(
                    Approach::ColHistDwt,
                    &[
                        Part::Block(FeatureBlock { kind: FeatureKind::ColHist, values: hist.iter().map(|v| v * s).collect() }),
                        Part::Block(FeatureBlock { kind: FeatureKind::Dwt, values: dwt.iter().map(|v| v * t).collect() }),
                    ],
                    &[],
                ).unwrap()
            };
            let base = mk(1.0, 1.0);
            let scaled = mk(a, b);
            prop_assert!((base.norm() - 1.0).abs() < 1e-9);
            for (x, y) in base.values.iter().zip(&scaled.values) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn pyramid_levels_sum_to_level_zero(
            pts in proptest::collection::vec((0.0f32..64.0, 0.0f32..48.0, 0usize..12), 0..60)
        ) {
            let vocab = one_hot_vocab(12);
            let words = assign_words(&features_at(&pts), &vocab).unwrap();
            let pyr = pyramid_bow(&words, 64, 48, 2).unwrap();
            let cells: Vec<&[f64]> = pyr.chunks(12).collect();
            for range in [1..5, 5..21] {
                let mut sum = [0.0; 12];
                for c in &cells[range] {
                    for (s, v) in sum.iter_mut().zip(*c) {
                        *s += v;
                    }
                }
                prop_assert_eq!(&sum[..], cells[0]);
            }
            prop_assert_eq!(cells[0].iter().sum::<f64>() as usize, pts.len());
        }
    }
}
