//! Global and region-level colour/texture descriptors: HSV histograms,
//! colour moments, one-level Haar wavelet statistics and (weighted)
//! pyramidal colour moments.
//!
//! Blocks hold raw values; normalisation happens when representations are
//! composed in [`crate::bow`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{pyramid_cell_count, pyramid_cells, CellBounds, ColorSpace, FeatureImage};

/// Bin counts for H, S, V.
pub const HSV_BINS: [usize; 3] = [36, 32, 16];
/// Bin count for a grey intensity histogram.
pub const GREY_BINS: usize = 36;
/// Default level weights for the weighted level-2 pyramid.
pub const DEFAULT_PYRAMID_WEIGHTS: [f64; 3] = [0.25, 0.25, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    ColHist,
    ColMom,
    Dwt,
    PColMom { level: u8 },
    WPColMom { level: u8 },
}

impl FeatureKind {
    /// Dimensionality for an image with `channels` channels (1 or 3).
    pub fn dim(self, channels: usize) -> usize {
        match self {
            FeatureKind::ColHist => {
                if channels == 1 {
                    GREY_BINS
                } else {
                    HSV_BINS.iter().sum()
                }
            }
            FeatureKind::ColMom => 2 * channels,
            FeatureKind::Dwt => 6 * channels,
            FeatureKind::PColMom { level } | FeatureKind::WPColMom { level } => {
                2 * channels * pyramid_cell_count(level as usize)
            }
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            FeatureKind::ColHist => 1,
            FeatureKind::ColMom => 2,
            FeatureKind::Dwt => 3,
            FeatureKind::PColMom { level } => 10 + level,
            FeatureKind::WPColMom { level } => 20 + level,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => FeatureKind::ColHist,
            2 => FeatureKind::ColMom,
            3 => FeatureKind::Dwt,
            10..=12 => FeatureKind::PColMom { level: tag - 10 },
            20..=22 => FeatureKind::WPColMom { level: tag - 20 },
            _ => return None,
        })
    }

    pub fn is_histogram(self) -> bool {
        matches!(self, FeatureKind::ColHist)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

impl FeatureBlock {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn check_bounds(img: &FeatureImage, bounds: &CellBounds) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if bounds.x1 > img.width() || bounds.y1 > img.height() {
        return Err(Error::Geometry(format!(
            "bounds {bounds:?} outside {}x{} image",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

fn bin_counts(values: &[f64], bins: usize, out: &mut Vec<f64>) {
    let start = out.len();
    out.resize(start + bins, 0.0);
    for &v in values {
        let b = ((v * bins as f64) as usize).min(bins - 1);
        out[start + b] += 1.0;
    }
}

/// Per-channel histograms of pixel counts: 36/32/16 bins for H/S/V, or 36
/// bins for grey. The last bin includes the upper edge 1.0.
pub fn color_histogram(img: &FeatureImage, bounds: &CellBounds) -> Result<FeatureBlock> {
    check_bounds(img, bounds)?;
    let mut values = Vec::with_capacity(FeatureKind::ColHist.dim(img.channels()));
    match img.space() {
        ColorSpace::Hsv => {
            for (c, bins) in HSV_BINS.iter().enumerate() {
                bin_counts(&img.region(c, bounds), *bins, &mut values);
            }
        }
        ColorSpace::Grey => bin_counts(&img.region(0, bounds), GREY_BINS, &mut values),
    }
    Ok(FeatureBlock {
        kind: FeatureKind::ColHist,
        values,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(mean, population std)` per channel.
pub fn color_moments(img: &FeatureImage, bounds: &CellBounds) -> Result<FeatureBlock> {
    check_bounds(img, bounds)?;
    let mut values = Vec::with_capacity(2 * img.channels());
    for c in 0..img.channels() {
        let (m, s) = mean_std(&img.region(c, bounds));
        values.push(m);
        values.push(s);
    }
    Ok(FeatureBlock {
        kind: FeatureKind::ColMom,
        values,
    })
}

/// Detail sub-bands of a one-level orthonormal 2-D Haar transform.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HaarDetails {
    /// Row differences (responds to horizontal edges).
    pub lh: Vec<f64>,
    /// Column differences (responds to vertical edges).
    pub hl: Vec<f64>,
    pub hh: Vec<f64>,
}

/// One-level Haar transform of a `width × height` row-major signal,
/// zero-padded to even dimensions.
pub fn haar_details(data: &[f64], width: usize, height: usize) -> HaarDetails {
    let px = |x: usize, y: usize| {
        if x < width && y < height {
            data[y * width + x]
        } else {
            0.0
        }
    };
    let mut out = HaarDetails::default();
    for ty in 0..height.div_ceil(2) {
        for tx in 0..width.div_ceil(2) {
            let (x, y) = (2 * tx, 2 * ty);
            let (a, b, c, d) = (px(x, y), px(x + 1, y), px(x, y + 1), px(x + 1, y + 1));
            out.lh.push((a + b - c - d) / 2.0);
            out.hl.push((a - b + c - d) / 2.0);
            out.hh.push((a - b - c + d) / 2.0);
        }
    }
    out
}

/// Per channel, `(mean |c|, std c)` for the LH, HL and HH sub-bands.
pub fn dwt_texture(img: &FeatureImage, bounds: &CellBounds) -> Result<FeatureBlock> {
    check_bounds(img, bounds)?;
    if bounds.width() < 2 || bounds.height() < 2 {
        return Err(Error::Geometry(format!(
            "wavelet region {}x{} smaller than 2x2",
            bounds.width(),
            bounds.height()
        )));
    }
    let mut values = Vec::with_capacity(6 * img.channels());
    for c in 0..img.channels() {
        let details = haar_details(&img.region(c, bounds), bounds.width(), bounds.height());
        for band in [&details.lh, &details.hl, &details.hh] {
            let mean_abs = band.iter().map(|v| v.abs()).sum::<f64>() / band.len() as f64;
            values.push(mean_abs);
            values.push(mean_std(band).1);
        }
    }
    Ok(FeatureBlock {
        kind: FeatureKind::Dwt,
        values,
    })
}

/// Colour moments over every spatial-pyramid cell up to `max_level`.
pub fn pyramidal_color_moments(img: &FeatureImage, max_level: usize) -> Result<FeatureBlock> {
    let cells = pyramid_cells(img.width(), img.height(), max_level)?;
    let mut values = Vec::with_capacity(cells.len() * 2 * img.channels());
    for cell in &cells {
        values.extend(color_moments(img, cell)?.values);
    }
    Ok(FeatureBlock {
        kind: FeatureKind::PColMom { level: max_level as u8 },
        values,
    })
}

/// Scales each pyramid cell's sub-vector by its level's weight.
pub fn weight_pyramid(block: &FeatureBlock, level_weights: &[f64]) -> Result<FeatureBlock> {
    let level = match block.kind {
        FeatureKind::PColMom { level } => level as usize,
        other => return Err(Error::Recipe(format!("{other:?} is not a pyramidal block"))),
    };
    if level_weights.len() != level + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} level weights for a level-{level} pyramid",
            level_weights.len()
        )));
    }
    let cells = pyramid_cell_count(level);
    if !block.dim().is_multiple_of(cells) {
        return Err(Error::DimensionMismatch {
            expected: cells * (block.dim() / cells).max(1),
            actual: block.dim(),
        });
    }
    let per_cell = block.dim() / cells;
    let mut values = block.values.clone();
    let mut cell = 0;
    for (l, w) in level_weights.iter().enumerate() {
        for _ in 0..(1usize << (2 * l)) {
            for v in &mut values[cell * per_cell..(cell + 1) * per_cell] {
                *v *= w;
            }
            cell += 1;
        }
    }
    Ok(FeatureBlock {
        kind: FeatureKind::WPColMom { level: level as u8 },
        values,
    })
}
