//! Raster decoding, colour conversion and the grid/pyramid/half geometry
//! shared by every extractor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoded raster with planar channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    planes: Vec<Vec<f64>>,
}

impl Image {
    /// Builds an image from row-major planes. One plane is grey, three are RGB.
    pub fn from_planes(width: usize, height: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Geometry(format!("image of size {width}x{height}")));
        }
        if planes.len() != 1 && planes.len() != 3 {
            return Err(Error::Geometry(format!("{} channels", planes.len())));
        }
        for plane in &planes {
            if plane.len() != width * height {
                return Err(Error::DimensionMismatch {
                    expected: width * height,
                    actual: plane.len(),
                });
            }
            if plane.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Geometry("pixel value outside [0, 1]".into()));
            }
        }
        Ok(Image { width, height, planes })
    }

    pub fn grey(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_planes(width, height, vec![data])
    }

    /// Builds a grey image by evaluating `f(x, y)` at every pixel.
    pub fn grey_from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::grey(width, height, data)
    }

    /// Builds an RGB image by evaluating `f(x, y)` at every pixel.
    pub fn rgb_from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut planes: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(width * height)).collect();
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                for (plane, v) in planes.iter_mut().zip(px) {
                    plane.push(v);
                }
            }
        }
        Self::from_planes(width, height, planes)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn is_grey(&self) -> bool {
        self.planes.len() == 1
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        &self.planes[c]
    }

    pub fn at(&self, c: usize, x: usize, y: usize) -> f64 {
        self.planes[c][y * self.width + x]
    }

    /// Intensity plane used for keypoint detection: the grey plane itself,
    /// or the HSV value channel (per-pixel max of R, G, B) for colour input.
    pub fn intensity(&self) -> Vec<f64> {
        if self.is_grey() {
            return self.planes[0].clone();
        }
        let (r, g, b) = (&self.planes[0], &self.planes[1], &self.planes[2]);
        (0..r.len()).map(|i| r[i].max(g[i]).max(b[i])).collect()
    }
}

/// Decodes PNG or JPEG bytes. 8-bit samples map to `v / 255`.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let dynamic = image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    if dynamic.color().has_color() {
        let rgb = dynamic.to_rgb8();
        let mut planes: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(w * h)).collect();
        for px in rgb.pixels() {
            for c in 0..3 {
                planes[c].push(f64::from(px[c]) / 255.0);
            }
        }
        Image::from_planes(w, h, planes)
    } else {
        let luma = dynamic.to_luma8();
        Image::grey(w, h, luma.pixels().map(|p| f64::from(p[0]) / 255.0).collect())
    }
}

/// Reads and decodes an image file.
pub fn load_image(path: &std::path::Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

/// Width and height from the file header, without decoding pixels.
pub fn image_dimensions(path: &std::path::Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Decode(other.to_string()),
    })?;
    Ok((w as usize, h as usize))
}

/// HSV planes; hue scaled to `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage {
    pub width: usize,
    pub height: usize,
    pub hue: Vec<f64>,
    pub saturation: Vec<f64>,
    pub value: Vec<f64>,
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else {
        let sector = if max == r {
            (g - b) / delta
        } else if max == g {
            (b - r) / delta + 2.0
        } else {
            (r - g) / delta + 4.0
        };
        let h = sector / 6.0;
        let h = if h < 0.0 { h + 1.0 } else { h };
        // (g - b)/delta can round to exactly 6/6 from below zero
        if h >= 1.0 {
            0.0
        } else {
            h
        }
    };
    (h, s, v)
}

pub fn to_hsv(img: &Image) -> Result<HsvImage> {
    if img.channels() != 3 {
        return Err(Error::NotColor);
    }
    let n = img.width * img.height;
    let mut out = HsvImage {
        width: img.width,
        height: img.height,
        hue: Vec::with_capacity(n),
        saturation: Vec::with_capacity(n),
        value: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (h, s, v) = rgb_to_hsv(img.planes[0][i], img.planes[1][i], img.planes[2][i]);
        out.hue.push(h);
        out.saturation.push(s);
        out.value.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColorSpace {
    Hsv,
    Grey,
}

/// The channel stack that colour and texture features are computed over:
/// H, S, V planes for colour input, a single intensity plane for grey input.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    width: usize,
    height: usize,
    space: ColorSpace,
    planes: Vec<Vec<f64>>,
}

impl FeatureImage {
    pub fn from_image(img: &Image) -> Self {
        if img.is_grey() {
            FeatureImage {
                width: img.width,
                height: img.height,
                space: ColorSpace::Grey,
                planes: img.planes.clone(),
            }
        } else {
            to_hsv(img).expect("colour image").into()
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        &self.planes[c]
    }

    /// Pixel values of channel `c` inside `bounds`, row-major.
    pub fn region(&self, c: usize, bounds: &CellBounds) -> Vec<f64> {
        let plane = &self.planes[c];
        (bounds.y0..bounds.y1)
            .flat_map(|y| {
                plane[y * self.width + bounds.x0..y * self.width + bounds.x1]
                    .iter()
                    .copied()
            })
            .collect()
    }

    pub fn full_bounds(&self) -> CellBounds {
        CellBounds::new(0, 0, self.width, self.height, 0)
    }
}

impl From<HsvImage> for FeatureImage {
    fn from(hsv: HsvImage) -> Self {
        FeatureImage {
            width: hsv.width,
            height: hsv.height,
            space: ColorSpace::Hsv,
            planes: vec![hsv.hue, hsv.saturation, hsv.value],
        }
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)` tagged with its pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellBounds {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub level: u8,
}

impl CellBounds {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize, level: u8) -> Self {
        CellBounds { x0, y0, x1, y1, level }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    /// Whether a continuous position falls in this cell, using the pixel
    /// `(⌊x⌋, ⌊y⌋)` against the half-open bounds.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        if x < 0.0 || y < 0.0 {
            return false;
        }
        let (px, py) = (x.floor() as usize, y.floor() as usize);
        px >= self.x0 && px < self.x1 && py >= self.y0 && py < self.y1
    }
}

/// Splits `len` into `n` parts of size `⌊len/n⌋`, the last `len mod n` parts one larger.
fn axis_partition(len: usize, n: usize) -> Vec<(usize, usize)> {
    let base = len / n;
    let extra = len % n;
    let mut start = 0;
    (0..n)
        .map(|i| {
            let size = base + usize::from(i >= n - extra);
            let span = (start, start + size);
            start += size;
            span
        })
        .collect()
}

fn grid_with_level(width: usize, height: usize, rows: usize, cols: usize, level: u8) -> Result<Vec<CellBounds>> {
    if rows == 0 || cols == 0 {
        return Err(Error::Geometry(format!("grid {rows}x{cols} has no cells")));
    }
    if rows > height || cols > width {
        return Err(Error::Geometry(format!(
            "grid {rows}x{cols} exceeds image {width}x{height}"
        )));
    }
    let ys = axis_partition(height, rows);
    let xs = axis_partition(width, cols);
    Ok(ys
        .iter()
        .flat_map(|&(y0, y1)| xs.iter().map(move |&(x0, x1)| CellBounds::new(x0, y0, x1, y1, level)))
        .collect())
}

/// Row-major `rows × cols` partition of a `width × height` image.
pub fn grid_partition(width: usize, height: usize, rows: usize, cols: usize) -> Result<Vec<CellBounds>> {
    grid_with_level(width, height, rows, cols, 0)
}

pub const MAX_PYRAMID_LEVEL: usize = 2;

/// Number of cells in a pyramid holding levels `0..=max_level`.
pub fn pyramid_cell_count(max_level: usize) -> usize {
    (0..=max_level).map(|l| 1usize << (2 * l)).sum()
}

/// Level `l` of a spatial pyramid is a `2^l × 2^l` grid. Cells are ordered by
/// level, then row-major.
pub fn pyramid_cells(width: usize, height: usize, max_level: usize) -> Result<Vec<CellBounds>> {
    if max_level > MAX_PYRAMID_LEVEL {
        return Err(Error::Geometry(format!("unsupported pyramid level {max_level}")));
    }
    let mut cells = Vec::with_capacity(pyramid_cell_count(max_level));
    for level in 0..=max_level {
        let n = 1 << level;
        cells.extend(grid_with_level(width, height, n, n, level as u8)?);
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Half {
    Upper,
    Lower,
}

/// Rows `y < ⌊H/2⌋` are upper; the middle row of odd heights is lower.
pub fn half_of(y: usize, height: usize) -> Half {
    if y < height / 2 {
        Half::Upper
    } else {
        Half::Lower
    }
}

/// Half that a continuous keypoint row belongs to.
pub fn half_of_position(y: f64, height: usize) -> Half {
    half_of(y.max(0.0).floor() as usize, height)
}

/// Half whose annotator handles a grid cell: upper only when the cell lies
/// entirely above the midline.
pub fn half_of_cell(cell: &CellBounds, height: usize) -> Half {
    if cell.y1 <= height / 2 {
        Half::Upper
    } else {
        Half::Lower
    }
}
