//! Difference-of-Gaussian keypoint detection and 128-D gradient-histogram
//! descriptors on the intensity channel.
//!
//! The scale space follows Lowe's construction: `intervals + 3` Gaussian
//! layers per octave, `intervals + 2` DoG layers, extrema found over the 26
//! scale-space neighbours, refined with a quadratic fit, then filtered by
//! contrast and principal-curvature ratio. Each surviving extremum receives
//! one keypoint per dominant gradient orientation.

use std::f32::consts::PI;

use serde::{Deserialize, Serialize};

use crate::imaging::Image;

/// Length of every descriptor: 4 × 4 spatial bins × 8 orientation bins.
pub const DESCRIPTOR_LEN: usize = 128;
/// Images narrower or shorter than this yield no keypoints.
pub const MIN_IMAGE_SIZE: usize = 16;

const DESCR_WIDTH: usize = 4;
const DESCR_BINS: usize = 8;
const DESCR_SCALE: f32 = 3.0;
const DESCR_CLAMP: f32 = 0.2;
const ORI_BINS: usize = 36;
const ORI_SIGMA_FACTOR: f32 = 1.5;
const ORI_RADIUS_FACTOR: f32 = 3.0 * ORI_SIGMA_FACTOR;
const ORI_PEAK_RATIO: f32 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub intervals: usize,
    pub sigma: f64,
    /// DoG contrast threshold, divided by `intervals` before use.
    pub contrast_threshold: f64,
    pub edge_ratio: f64,
    pub double_image: bool,
    pub max_refine_steps: usize,
    /// Blur already present in the input raster.
    pub assumed_blur: f64,
    /// Pixels excluded at every octave border during extremum search.
    pub border: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            intervals: 3,
            sigma: 1.6,
            contrast_threshold: 0.03,
            edge_ratio: 10.0,
            double_image: false,
            max_refine_steps: 5,
            assumed_blur: 0.5,
            border: 5,
        }
    }
}

/// A keypoint in input-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    /// Gaussian sigma of the detection scale.
    pub scale: f32,
    /// Dominant gradient direction in `[0, 2π)`, measured with y pointing down.
    pub orientation: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptor(pub [f32; DESCRIPTOR_LEN]);

impl Descriptor {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }
}

/// Why a descriptor could not be computed for a keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescribeSkip {
    /// The rotated support window leaves the octave raster.
    OutOfBounds,
    /// Every gradient in the window is zero.
    Flat,
}

/// Keypoints of one image with their descriptors, index-aligned.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalFeatures {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl LocalFeatures {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x] as f32
    }

    #[inline]
    fn at64(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    fn downsample(&self) -> Plane {
        let (width, height) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(self.at64(2 * x, 2 * y));
            }
        }
        Plane { width, height, data }
    }

    fn upsample(&self) -> Plane {
        let (width, height) = (self.width * 2, self.height * 2);
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = (y as f64 * 0.5).min((self.height - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let fy = sy - y0 as f64;
            for x in 0..width {
                let sx = (x as f64 * 0.5).min((self.width - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let fx = sx - x0 as f64;
                let top = self.at64(x0, y0) * (1.0 - fx) + self.at64(x1, y0) * fx;
                let bottom = self.at64(x0, y1) * (1.0 - fx) + self.at64(x1, y1) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        Plane { width, height, data }
    }

    fn sub(&self, other: &Plane) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Mirror index into `0..len` without repeating the edge sample.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn gaussian_blur(src: &Plane, sigma: f64) -> Plane {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (src.width, src.height);
    let mut tmp = vec![0.0f64; w * h];
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * row[reflect(x as isize + k as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut data = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                acc += kv * tmp[reflect(y as isize + k as isize - r, h) * w + x];
            }
            data[y * w + x] = acc;
        }
    }
    Plane {
        width: w,
        height: h,
        data,
    }
}

struct Octave {
    gauss: Vec<Plane>,
    dog: Vec<Plane>,
}

/// Gaussian and DoG pyramids of one image.
pub struct ScaleSpace {
    params: DetectorParams,
    octaves: Vec<Octave>,
    /// Input pixels per working-raster pixel at octave 0 (0.5 when doubled).
    base_step: f32,
    width: usize,
    height: usize,
}

impl ScaleSpace {
    /// Returns `None` when the image is smaller than [`MIN_IMAGE_SIZE`].
    pub fn build(img: &Image, params: &DetectorParams) -> Option<Self> {
        let (width, height) = (img.width(), img.height());
        if width < MIN_IMAGE_SIZE || height < MIN_IMAGE_SIZE {
            return None;
        }
        let mut base = Plane {
            width,
            height,
            data: img.intensity(),
        };
        let mut present_blur = params.assumed_blur;
        let mut base_step = 1.0;
        if params.double_image {
            base = base.upsample();
            present_blur *= 2.0;
            base_step = 0.5;
        }
        let sigma = params.sigma;
        let init = (sigma * sigma - present_blur * present_blur).max(0.01).sqrt();
        let base = gaussian_blur(&base, init);

        let min_dim = base.width.min(base.height) as f64;
        let n_octaves = ((min_dim.log2().floor() as i64) - 2).max(1) as usize;

        let intervals = params.intervals;
        let k = 2f64.powf(1.0 / intervals as f64);
        let increments: Vec<f64> = (1..intervals + 3)
            .map(|i| {
                let prev = sigma * k.powi(i as i32 - 1);
                let total = prev * k;
                (total * total - prev * prev).sqrt()
            })
            .collect();

        let mut octaves: Vec<Octave> = Vec::with_capacity(n_octaves);
        for o in 0..n_octaves {
            let first = if o == 0 {
                base.clone()
            } else {
                octaves[o - 1].gauss[intervals].downsample()
            };
            let mut gauss = Vec::with_capacity(intervals + 3);
            gauss.push(first);
            for s in &increments {
                let next = gaussian_blur(gauss.last().expect("non-empty"), *s);
                gauss.push(next);
            }
            let dog = gauss.windows(2).map(|w| w[1].sub(&w[0])).collect();
            octaves.push(Octave { gauss, dog });
        }
        Some(ScaleSpace {
            params: *params,
            octaves,
            base_step,
            width,
            height,
        })
    }

    pub fn n_octaves(&self) -> usize {
        self.octaves.len()
    }

    /// Scale-space extrema surviving the contrast and edge tests, one
    /// keypoint per dominant orientation.
    pub fn detect(&self) -> Vec<Keypoint> {
        let p = &self.params;
        let intervals = p.intervals;
        let threshold = p.contrast_threshold / p.intervals as f64;
        let prefilter = (0.5 * threshold) as f32;
        let mut out = Vec::new();
        for (o, octave) in self.octaves.iter().enumerate() {
            let (w, h) = (octave.dog[0].width, octave.dog[0].height);
            if w <= 2 * p.border || h <= 2 * p.border {
                continue;
            }
            for layer in 1..=intervals {
                for y in p.border..h - p.border {
                    for x in p.border..w - p.border {
                        let v = octave.dog[layer].at(x, y);
                        if v.abs() <= prefilter || !is_extremum(&octave.dog, layer, x, y) {
                            continue;
                        }
                        if let Some(c) = self.refine(o, layer, x, y) {
                            self.orient(o, &c, &mut out);
                        }
                    }
                }
            }
        }
        out
    }

    fn refine(&self, o: usize, layer: usize, x: usize, y: usize) -> Option<Candidate> {
        let p = &self.params;
        let dog = &self.octaves[o].dog;
        let (w, h) = (dog[0].width, dog[0].height);
        let (mut layer, mut x, mut y) = (layer, x, y);
        for _ in 0..p.max_refine_steps.max(1) {
            let (grad, hess) = derivatives(dog, layer, x, y);
            let offset = solve3(&hess, &grad)?;
            let offset = [-offset[0], -offset[1], -offset[2]];
            if offset.iter().all(|v| v.abs() < 0.5) {
                let value =
                    dog[layer].at(x, y) + 0.5 * (grad[0] * offset[0] + grad[1] * offset[1] + grad[2] * offset[2]);
                if f64::from(value.abs()) < p.contrast_threshold / p.intervals as f64 {
                    return None;
                }
                // principal curvature ratio on the 2x2 spatial Hessian
                let (dxx, dyy, dxy) = (hess[0][0], hess[1][1], hess[0][1]);
                let tr = dxx + dyy;
                let det = dxx * dyy - dxy * dxy;
                let r = p.edge_ratio as f32;
                if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
                    return None;
                }
                return Some(Candidate { layer, x, y, offset });
            }
            let nx = x as isize + offset[0].round() as isize;
            let ny = y as isize + offset[1].round() as isize;
            let nl = layer as isize + offset[2].round() as isize;
            if nl < 1
                || nl > p.intervals as isize
                || nx < p.border as isize
                || ny < p.border as isize
                || nx >= (w - p.border) as isize
                || ny >= (h - p.border) as isize
            {
                return None;
            }
            x = nx as usize;
            y = ny as usize;
            layer = nl as usize;
        }
        None
    }

    fn orient(&self, o: usize, c: &Candidate, out: &mut Vec<Keypoint>) {
        let p = &self.params;
        let octave_scale = 2f32.powi(o as i32);
        let sigma_oct = (p.sigma as f32) * 2f32.powf((c.layer as f32 + c.offset[2]) / p.intervals as f32);
        let step = octave_scale * self.base_step;
        let kx = (c.x as f32 + c.offset[0]) * step;
        let ky = (c.y as f32 + c.offset[1]) * step;
        if kx < 0.0 || ky < 0.0 || kx >= self.width as f32 || ky >= self.height as f32 {
            return;
        }
        let hist = orientation_histogram(&self.octaves[o].gauss[c.layer], c.x, c.y, sigma_oct);
        let max = hist.iter().copied().fold(0.0f32, f32::max);
        if max <= 0.0 {
            return;
        }
        for b in 0..ORI_BINS {
            let left = hist[(b + ORI_BINS - 1) % ORI_BINS];
            let right = hist[(b + 1) % ORI_BINS];
            if hist[b] > left && hist[b] > right && hist[b] >= ORI_PEAK_RATIO * max {
                let shift = 0.5 * (left - right) / (left - 2.0 * hist[b] + right);
                let bin = (b as f32 + shift).rem_euclid(ORI_BINS as f32);
                let mut orientation = 2.0 * PI * bin / ORI_BINS as f32;
                if orientation >= 2.0 * PI {
                    orientation = 0.0;
                }
                out.push(Keypoint {
                    x: kx,
                    y: ky,
                    scale: sigma_oct * step,
                    orientation,
                });
            }
        }
    }

    /// Octave, layer and octave-raster coordinates for a keypoint.
    fn frame(&self, kp: &Keypoint) -> (usize, usize, f32, f32, f32) {
        let p = &self.params;
        let working_scale = kp.scale / self.base_step;
        let log = ((working_scale / p.sigma as f32).log2() * p.intervals as f32).max(0.0);
        let o = ((log / p.intervals as f32).floor() as usize).min(self.octaves.len() - 1);
        let layer = (log - (o * p.intervals) as f32)
            .round()
            .clamp(0.0, (p.intervals + 2) as f32) as usize;
        let step = 2f32.powi(o as i32) * self.base_step;
        (o, layer, kp.x / step, kp.y / step, kp.scale / step)
    }

    /// Descriptor for `kp` in its oriented, scale-normalised frame.
    pub fn describe(&self, kp: &Keypoint) -> Result<Descriptor, DescribeSkip> {
        let (o, layer, xo, yo, sigma_oct) = self.frame(kp);
        let img = &self.octaves[o].gauss[layer];
        let hist_width = DESCR_SCALE * sigma_oct;
        let d = DESCR_WIDTH as f32;
        let window = (0.5 * d * hist_width).round() as isize;
        let radius = (hist_width * std::f32::consts::SQRT_2 * (d + 1.0) * 0.5).round() as isize;
        let (cx, cy) = (xo.round() as isize, yo.round() as isize);
        let (max_x, max_y) = (img.width as isize - 2, img.height as isize - 2);
        if cx - window < 1 || cy - window < 1 || cx + window > max_x || cy + window > max_y {
            return Err(DescribeSkip::OutOfBounds);
        }

        let (sin_t, cos_t) = kp.orientation.sin_cos();
        let weight_denom = 2.0 * (0.5 * d * hist_width).powi(2);
        const PADDED: usize = DESCR_WIDTH + 2;
        let mut hist = [0.0f64; PADDED * PADDED * DESCR_BINS];
        // subpixel offset of the sampling grid relative to the keypoint
        let (fx, fy) = (xo - cx as f32, yo - cy as f32);
        for i in -radius..=radius {
            for j in -radius..=radius {
                let dx = j as f32 - fx;
                let dy = i as f32 - fy;
                let u = dx * cos_t + dy * sin_t;
                let v = -dx * sin_t + dy * cos_t;
                let rbin = v / hist_width + 0.5 * d - 0.5;
                let cbin = u / hist_width + 0.5 * d - 0.5;
                if rbin <= -1.0 || rbin >= d || cbin <= -1.0 || cbin >= d {
                    continue;
                }
                let (sx, sy) = (cx + j, cy + i);
                if sx < 1 || sy < 1 || sx > max_x || sy > max_y {
                    continue;
                }
                let (px, py) = (sx as usize, sy as usize);
                let gx = img.at64(px + 1, py) - img.at64(px - 1, py);
                let gy = img.at64(px, py + 1) - img.at64(px, py - 1);
                let mag = (gx * gx + gy * gy).sqrt();
                if mag == 0.0 {
                    continue;
                }
                let weight = f64::from((-(u * u + v * v) / weight_denom).exp());
                let angle = ((gy.atan2(gx) as f32) - kp.orientation).rem_euclid(2.0 * PI);
                let obin = angle * DESCR_BINS as f32 / (2.0 * PI);
                accumulate(&mut hist, rbin, cbin, obin, mag * weight);
            }
        }

        let mut values = [0.0f64; DESCRIPTOR_LEN];
        let mut idx = 0;
        for r in 0..DESCR_WIDTH {
            for c in 0..DESCR_WIDTH {
                let base = ((r + 1) * PADDED + (c + 1)) * DESCR_BINS;
                values[idx..idx + DESCR_BINS].copy_from_slice(&hist[base..base + DESCR_BINS]);
                idx += DESCR_BINS;
            }
        }
        if !normalize(&mut values) {
            return Err(DescribeSkip::Flat);
        }
        values.iter_mut().for_each(|v| *v = v.min(f64::from(DESCR_CLAMP)));
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Descriptor(values.map(|v| round_down(v / norm))))
    }
}

struct Candidate {
    layer: usize,
    x: usize,
    y: usize,
    /// (dx, dy, dlayer)
    offset: [f32; 3],
}

fn is_extremum(dog: &[Plane], layer: usize, x: usize, y: usize) -> bool {
    let v = dog[layer].at(x, y);
    let mut is_max = true;
    let mut is_min = true;
    for plane in &dog[layer - 1..=layer + 1] {
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                let n = plane.at(nx, ny);
                is_max &= v >= n;
                is_min &= v <= n;
            }
        }
    }
    (v > 0.0 && is_max) || (v < 0.0 && is_min)
}

/// Gradient (dx, dy, ds) and Hessian of the DoG stack at a sample.
fn derivatives(dog: &[Plane], s: usize, x: usize, y: usize) -> ([f32; 3], [[f32; 3]; 3]) {
    let (prev, cur, next) = (&dog[s - 1], &dog[s], &dog[s + 1]);
    let v2 = 2.0 * cur.at(x, y);
    let dx = 0.5 * (cur.at(x + 1, y) - cur.at(x - 1, y));
    let dy = 0.5 * (cur.at(x, y + 1) - cur.at(x, y - 1));
    let ds = 0.5 * (next.at(x, y) - prev.at(x, y));
    let dxx = cur.at(x + 1, y) + cur.at(x - 1, y) - v2;
    let dyy = cur.at(x, y + 1) + cur.at(x, y - 1) - v2;
    let dss = next.at(x, y) + prev.at(x, y) - v2;
    let dxy = 0.25 * (cur.at(x + 1, y + 1) - cur.at(x - 1, y + 1) - cur.at(x + 1, y - 1) + cur.at(x - 1, y - 1));
    let dxs = 0.25 * (next.at(x + 1, y) - next.at(x - 1, y) - prev.at(x + 1, y) + prev.at(x - 1, y));
    let dys = 0.25 * (next.at(x, y + 1) - next.at(x, y - 1) - prev.at(x, y + 1) + prev.at(x, y - 1));
    ([dx, dy, ds], [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
}

/// Solves `m · v = b` by Cramer's rule; `None` for singular systems.
fn solve3(m: &[[f32; 3]; 3], b: &[f32; 3]) -> Option<[f32; 3]> {
    let det3 = |a: &[[f32; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let det = det3(m);
    if det.abs() < f32::EPSILON * 1e-3 || !det.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, slot) in out.iter_mut().enumerate() {
        let mut a = *m;
        for row in 0..3 {
            a[row][col] = b[row];
        }
        *slot = det3(&a) / det;
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

fn orientation_histogram(img: &Plane, x: usize, y: usize, sigma_oct: f32) -> [f32; ORI_BINS] {
    let radius = (ORI_RADIUS_FACTOR * sigma_oct).round() as isize;
    let sigma_w = ORI_SIGMA_FACTOR * sigma_oct;
    let denom = 2.0 * sigma_w * sigma_w;
    let mut raw = [0.0f32; ORI_BINS];
    for i in -radius..=radius {
        let py = y as isize + i;
        if py <= 0 || py >= img.height as isize - 1 {
            continue;
        }
        for j in -radius..=radius {
            let px = x as isize + j;
            if px <= 0 || px >= img.width as isize - 1 {
                continue;
            }
            let (px, py) = (px as usize, py as usize);
            let gx = img.at(px + 1, py) - img.at(px - 1, py);
            let gy = img.at(px, py + 1) - img.at(px, py - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let w = (-((i * i + j * j) as f32) / denom).exp();
            let angle = gy.atan2(gx).rem_euclid(2.0 * PI);
            let bin = ((angle * ORI_BINS as f32 / (2.0 * PI)).round() as usize) % ORI_BINS;
            raw[bin] += w * mag;
        }
    }
    // [1 4 6 4 1] / 16 circular smoothing
    let mut hist = [0.0f32; ORI_BINS];
    for (b, slot) in hist.iter_mut().enumerate() {
        let at = |d: isize| raw[(b as isize + d).rem_euclid(ORI_BINS as isize) as usize];
        *slot = (at(-2) + at(2)) / 16.0 + 4.0 * (at(-1) + at(1)) / 16.0 + 6.0 * at(0) / 16.0;
    }
    hist
}

/// Trilinear distribution of one gradient sample into the padded histogram.
fn accumulate(hist: &mut [f64], rbin: f32, cbin: f32, obin: f32, value: f64) {
    const PADDED: usize = DESCR_WIDTH + 2;
    let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
    let (dr, dc, dobin) = (f64::from(rbin - r0), f64::from(cbin - c0), f64::from(obin - o0));
    let (r0, c0) = ((r0 as isize + 1) as usize, (c0 as isize + 1) as usize);
    let o0 = (o0 as usize) % DESCR_BINS;
    for (ri, wr) in [(0, 1.0 - dr), (1, dr)] {
        for (ci, wc) in [(0, 1.0 - dc), (1, dc)] {
            for (oi, wo) in [(0, 1.0 - dobin), (1, dobin)] {
                let idx = ((r0 + ri) * PADDED + (c0 + ci)) * DESCR_BINS + (o0 + oi) % DESCR_BINS;
                hist[idx] += value * wr * wc * wo;
            }
        }
    }
}

fn normalize(values: &mut [f64]) -> bool {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 || !norm.is_finite() {
        return false;
    }
    values.iter_mut().for_each(|v| *v /= norm);
    true
}

/// Nearest f32 not above the non-negative `q`, so the stored vector never
/// exceeds unit length.
fn round_down(q: f64) -> f32 {
    let f = q as f32;
    if f64::from(f) > q {
        f32::from_bits(f.to_bits() - 1)
    } else {
        f
    }
}

/// Keypoints of `img`; empty below the minimum size.
pub fn detect_keypoints(img: &Image, params: &DetectorParams) -> Vec<Keypoint> {
    ScaleSpace::build(img, params).map(|s| s.detect()).unwrap_or_default()
}

/// Descriptor of `kp` computed from a fresh scale space of `img`.
pub fn describe(img: &Image, kp: &Keypoint, params: &DetectorParams) -> Result<Descriptor, DescribeSkip> {
    let space = ScaleSpace::build(img, params).ok_or(DescribeSkip::OutOfBounds)?;
    space.describe(kp)
}

/// Detects keypoints and describes them, dropping keypoints whose
/// descriptor is skipped.
pub fn extract(img: &Image, params: &DetectorParams) -> LocalFeatures {
    let Some(space) = ScaleSpace::build(img, params) else {
        return LocalFeatures::default();
    };
    let mut out = LocalFeatures::default();
    for kp in space.detect() {
        if let Ok(d) = space.describe(&kp) {
            out.keypoints.push(kp);
            out.descriptors.push(d);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(size: usize, cx: f64, cy: f64, sigma: f64) -> Image {
        Image::grey_from_fn(size, size, |x, y| {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .unwrap()
    }

    fn textured(w: usize, h: usize) -> Image {
        Image::grey_from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            let mut v = 0.5 + 0.05 * (x * 0.31).sin() * (y * 0.17).cos();
            for i in 0..12 {
                let cx = (i * 37 % 97) as f64 / 97.0 * w as f64;
                let cy = (i * 53 % 89) as f64 / 89.0 * h as f64;
                let sigma = 2.0 + (i % 4) as f64;
                let amp = if i % 2 == 0 { 0.35 } else { -0.35 };
                v += amp * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp();
            }
            v.clamp(0.0, 1.0)
        })
        .unwrap()
    }

    #[test]
    fn constant_image_has_no_keypoints() {
        let img = Image::grey(64, 64, vec![0.4; 64 * 64]).unwrap();
        assert!(detect_keypoints(&img, &DetectorParams::default()).is_empty());
    }

    #[test]
    fn small_image_has_no_keypoints() {
        let img = blob(15, 7.0, 7.0, 2.0);
        assert!(detect_keypoints(&img, &DetectorParams::default()).is_empty());
    }

    #[test]
    fn gaussian_blob_detected_at_its_scale() {
        let img = blob(64, 32.0, 32.0, 4.0);
        let kps = detect_keypoints(&img, &DetectorParams::default());
        let step = 2f32.powf(1.0 / 3.0);
        let hit = kps.iter().any(|k| {
            (k.x - 32.0).abs() <= 1.0 && (k.y - 32.0).abs() <= 1.0 && k.scale >= 4.0 / step && k.scale <= 4.0 * step
        });
        assert!(hit, "no keypoint near the blob: {kps:?}");
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-7, 5), 1);
        assert_eq!(reflect(2, 1), 0);
    }

    #[test]
    fn descriptor_norm_and_nonnegativity() {
        let img = textured(96, 96);
        let feats = extract(&img, &DetectorParams::default());
        assert!(!feats.is_empty());
        for d in &feats.descriptors {
            let n = d.norm();
            assert!((1.0 - 1e-6..=1.0 + 1e-9).contains(&n), "norm {n}");
            assert!(d.0.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn out_of_bounds_support_is_skipped() {
        let img = textured(64, 64);
        let kp = Keypoint {
            x: 2.0,
            y: 30.0,
            scale: 2.0,
            orientation: 0.0,
        };
        assert_eq!(
            describe(&img, &kp, &DetectorParams::default()),
            Err(DescribeSkip::OutOfBounds)
        );
        let flat = Image::grey(64, 64, vec![0.5; 64 * 64]).unwrap();
        let center = Keypoint { x: 32.0, ..kp };
        assert_eq!(
            describe(&flat, &center, &DetectorParams::default()),
            Err(DescribeSkip::Flat)
        );
    }

    #[test]
    fn solve3_identity() {
        let m = [[2.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(solve3(&m, &[2.0, 2.0, 3.0]), Some([1.0, 0.5, 3.0]));
        assert_eq!(solve3(&[[0.0; 3]; 3], &[1.0, 1.0, 1.0]), None);
    }
}
