//! Preprocessing of fluorescence micrographs and image comparison.
//!
//! The chain is bright-frame subtraction, despiking, background-plane
//! subtraction, rotation and cropping; dark frames are assumed to be
//! subtracted already. Comparison images are then smoothed vertically and
//! normalised to unit sum before the residual sum of squares is taken.

use rayon::prelude::*;

use crate::beamline::DetectorImage;
use crate::config::DetectorSpec;
use crate::error::{Error, Result};
use crate::io::Grid;

/// Relative deviation from unit sum tolerated by [`rss`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;
/// Smallest fraction of pixels a plane-fit mask must cover.
pub const MIN_PLANE_MASK_FRACTION: f64 = 0.05;
pub const MAX_ROTATION_DEG: f64 = 5.0;

/// Read-only access to a row-major raster.
pub trait Raster {
    fn dims(&self) -> (usize, usize);
    fn values(&self) -> &[f64];
}

impl Raster for DetectorImage {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    fn values(&self) -> &[f64] {
        &self.data
    }
}

impl Raster for Grid {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    fn values(&self) -> &[f64] {
        &self.data
    }
}

impl Raster for RawImage {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    fn values(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Raw,
    DarkSubtracted,
    Processed,
}

/// A camera frame or an image derived from one.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: f64,
    pub data: Vec<f64>,
    pub provenance: Provenance,
    /// Pixels that carry data; `None` means all of them. Rotation clears
    /// the pixels whose source fell outside the frame.
    pub valid: Option<Vec<bool>>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, pixel_pitch: f64, data: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite pixel at row {}, column {}",
                i / width,
                i % width
            )));
        }
        Ok(RawImage {
            width,
            height,
            pixel_pitch,
            data,
            provenance,
            valid: None,
        })
    }

    /// Wraps a raster read from disk, requiring the detector's dimensions.
    pub fn from_grid(grid: Grid, det: &DetectorSpec, provenance: Provenance) -> Result<Self> {
        if (grid.width, grid.height) != (det.width_px, det.height_px) {
            return Err(Error::DimensionMismatch(format!(
                "image is {}x{}, detector is {}x{}",
                grid.width, grid.height, det.width_px, det.height_px
            )));
        }
        RawImage::new(grid.width, grid.height, det.pixel_pitch, grid.data, provenance)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn with_data(&self, data: Vec<f64>) -> RawImage {
        RawImage {
            data,
            provenance: Provenance::Processed,
            ..self.clone()
        }
    }

    /// Intensity-weighted centre (row, column) in pixels.
    pub fn centroid(&self) -> (f64, f64) {
        let (mut s, mut sr, mut sc) = (0.0, 0.0, 0.0);
        for (i, v) in self.data.iter().enumerate() {
            s += v;
            sr += v * (i / self.width) as f64;
            sc += v * (i % self.width) as f64;
        }
        (sr / s, sc / s)
    }
}

fn same_dims(a: &impl Raster, b: &impl Raster) -> Result<()> {
    if a.dims() != b.dims() {
        let ((aw, ah), (bw, bh)) = (a.dims(), b.dims());
        return Err(Error::DimensionMismatch(format!("{aw}x{ah} vs {bw}x{bh}")));
    }
    Ok(())
}

/// Subtracts a bright frame, or the mean of several (e.g. taken before and
/// after the exposure).
pub fn subtract_background(img: &RawImage, bright: &[&RawImage]) -> Result<RawImage> {
    if bright.is_empty() {
        return Err(Error::Data("no bright frame given".into()));
    }
    for b in bright {
        same_dims(img, *b)?;
    }
    let n = bright.len() as f64;
    let data = img
        .data
        .iter()
        .enumerate()
        .map(|(i, v)| v - bright.iter().map(|b| b.data[i]).sum::<f64>() / n)
        .collect();
    Ok(img.with_data(data))
}

/// Quantile of a sorted sample by linear interpolation between order
/// statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[i] + frac * (sorted[i + 1] - sorted[i])
}

/// Clamps pixels outside the [q, 1 − q] quantile range to the quantiles.
pub fn despike(img: &RawImage, q: f64) -> Result<RawImage> {
    if !(q > 0.0 && q < 0.5) {
        return Err(Error::Domain(format!("despike quantile must lie in (0, 0.5), got {q}")));
    }
    let mut sorted = img.data.clone();
    sorted.par_sort_unstable_by(f64::total_cmp);
    let lo = quantile_sorted(&sorted, q);
    let hi = quantile_sorted(&sorted, 1.0 - q);
    Ok(img.with_data(img.data.iter().map(|v| v.clamp(lo, hi)).collect()))
}

/// Least-squares plane a + b·column + c·row over the pixels where
/// `mask` is true, subtracted from every pixel.
pub fn subtract_plane(img: &RawImage, mask: &[bool]) -> Result<RawImage> {
    if mask.len() != img.data.len() {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} pixels, image {}",
            mask.len(),
            img.data.len()
        )));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if (n as f64) < MIN_PLANE_MASK_FRACTION * img.data.len() as f64 {
        return Err(Error::Data(format!(
            "plane-fit mask covers {n} of {} pixels, need at least {:.0}%",
            img.data.len(),
            100.0 * MIN_PLANE_MASK_FRACTION
        )));
    }
    let w = img.width;
    let coords = |i: usize| ((i % w) as f64, (i / w) as f64);
    // Centred moments keep the normal equations well conditioned.
    let (mut mx, mut my, mut mz) = (0.0, 0.0, 0.0);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (x, y) = coords(i);
        mx += x;
        my += y;
        mz += img.data[i];
    }
    let nf = n as f64;
    let (mx, my, mz) = (mx / nf, my / nf, mz / nf);
    let (mut sxx, mut syy, mut sxy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (x, y) = coords(i);
        let (dx, dy, dz) = (x - mx, y - my, img.data[i] - mz);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
        sxz += dx * dz;
        syz += dy * dz;
    }
    let det = sxx * syy - sxy * sxy;
    if !(det > 1e-9 * sxx * syy) {
        return Err(Error::Data("plane-fit mask pixels are collinear; plane is undetermined".into()));
    }
    let b = (sxz * syy - syz * sxy) / det;
    let c = (syz * sxx - sxz * sxy) / det;
    let a = mz - b * mx - c * my;
    let data = img
        .data
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (x, y) = coords(i);
            v - (a + b * x + c * y)
        })
        .collect();
    Ok(img.with_data(data))
}

/// Rotates the image content by `theta_deg` counter-clockwise (as displayed
/// with row 0 on top) about the frame centre, with bilinear interpolation.
/// Pixels whose source lies outside the frame are set to zero and marked
/// invalid.
pub fn rotate(img: &RawImage, theta_deg: f64) -> Result<RawImage> {
    if !(theta_deg.abs() < MAX_ROTATION_DEG) {
        return Err(Error::Domain(format!(
            "rotation must be below {MAX_ROTATION_DEG} degrees, got {theta_deg}"
        )));
    }
    if theta_deg == 0.0 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width, img.height);
    let (cx, cy) = (0.5 * (w - 1) as f64, 0.5 * (h - 1) as f64);
    let (s, c) = theta_deg.to_radians().sin_cos();
    let old_valid = img.valid.as_deref();
    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut vals = vec![0.0; w];
            let mut ok = vec![false; w];
            for col in 0..w {
                let dx = col as f64 - cx;
                let dy = cy - r as f64;
                let sx = cx + c * dx + s * dy;
                let sy = cy - (-s * dx + c * dy);
                if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
                    continue;
                }
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                let at = |y: usize, x: usize| img.data[y * w + x];
                vals[col] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
                    + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
                ok[col] = old_valid.map_or(true, |v| v[y0 * w + x0] && v[y0 * w + x1] && v[y1 * w + x0] && v[y1 * w + x1]);
            }
            (vals, ok)
        })
        .collect();
    let mut data = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for (v, o) in rows {
        data.extend(v);
        valid.extend(o);
    }
    let mut out = img.with_data(data);
    out.valid = Some(valid);
    Ok(out)
}

/// Rectangle in pixels: top-left corner plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub col: usize,
    pub row: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.height && col >= self.col && col < self.col + self.width
    }
}

pub fn crop(img: &RawImage, rect: Rect) -> Result<RawImage> {
    if rect.width == 0 || rect.height == 0 {
        return Err(Error::Data("empty crop rectangle".into()));
    }
    if rect.col + rect.width > img.width || rect.row + rect.height > img.height {
        return Err(Error::Data(format!(
            "crop {}x{}+{}+{} exceeds {}x{} image",
            rect.width, rect.height, rect.col, rect.row, img.width, img.height
        )));
    }
    let take = |v: &[f64]| -> Vec<f64> {
        (rect.row..rect.row + rect.height)
            .flat_map(|r| v[r * img.width + rect.col..r * img.width + rect.col + rect.width].iter().copied())
            .collect()
    };
    let mut out = img.with_data(take(&img.data));
    out.width = rect.width;
    out.height = rect.height;
    out.valid = img.valid.as_ref().map(|v| {
        (rect.row..rect.row + rect.height)
            .flat_map(|r| v[r * img.width + rect.col..r * img.width + rect.col + rect.width].iter().copied())
            .collect()
    });
    Ok(out)
}

/// Column-wise boxcar of width 2h + 1; near the edges the truncated window
/// is renormalised.
pub fn vertical_smooth(data: &[f64], width: usize, half: usize) -> Vec<f64> {
    if half == 0 {
        return data.to_vec();
    }
    let height = data.len() / width;
    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(width).enumerate().for_each(|(r, row)| {
        let lo = r.saturating_sub(half);
        let hi = (r + half).min(height - 1);
        let n = (hi - lo + 1) as f64;
        for rr in lo..=hi {
            for (o, v) in row.iter_mut().zip(&data[rr * width..(rr + 1) * width]) {
                *o += v;
            }
        }
        for o in row.iter_mut() {
            *o /= n;
        }
    });
    out
}

pub fn vertical_smooth_image(img: &RawImage, half: usize) -> RawImage {
    if half == 0 {
        return img.clone();
    }
    img.with_data(vertical_smooth(&img.data, img.width, half))
}

/// Scales `data` to unit sum.
pub fn normalize_unity(data: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = data.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Err(Error::Data(format!("cannot normalise image with total {total}")));
    }
    Ok(data.iter().map(|v| v / total).collect())
}

pub fn normalize_unity_image(img: &RawImage) -> Result<RawImage> {
    Ok(img.with_data(normalize_unity(&img.data)?))
}

/// Residual sum of squares between two unit-sum images, optionally over
/// the pixels where `mask` is true only.
pub fn rss(a: &impl Raster, b: &impl Raster, mask: Option<&[bool]>) -> Result<f64> {
    same_dims(a, b)?;
    for (name, img) in [("first", a.values()), ("second", b.values())] {
        let total: f64 = img.iter().sum();
        if !((total - 1.0).abs() <= NORMALIZATION_TOLERANCE) {
            return Err(Error::Data(format!("{name} image is not normalised (sum {total})")));
        }
    }
    if let Some(m) = mask {
        if m.len() != a.values().len() {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} pixels, images {}",
                m.len(),
                a.values().len()
            )));
        }
    }
    Ok(rss_unchecked(a.values(), b.values(), mask))
}

/// [`rss`] without the dimension and normalisation checks. The sum runs in
/// fixed-size chunks so the result does not depend on the thread count.
pub fn rss_unchecked(a: &[f64], b: &[f64], mask: Option<&[bool]>) -> f64 {
    const CHUNK: usize = 4096;
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .enumerate()
        .map(|(k, (ca, cb))| {
            let base = k * CHUNK;
            ca.iter()
                .zip(cb)
                .enumerate()
                .filter(|(i, _)| mask.map_or(true, |m| m[base + i]))
                .map(|(_, (x, y))| (x - y) * (x - y))
                .sum::<f64>()
        })
        .collect();
    partial.iter().sum()
}

/// Settings of the preprocessing chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub despike_quantile: f64,
    pub theta_deg: f64,
    pub crop: Rect,
    /// Pixels used for the background plane; defaults to everything
    /// outside the crop rectangle.
    pub plane_mask: Option<Vec<bool>>,
    /// Contaminated pixels (false) excluded from the plane fit.
    pub exclude: Option<Vec<bool>>,
}

impl Pipeline {
    pub fn new(crop: Rect) -> Pipeline {
        Pipeline {
            despike_quantile: 1e-5,
            theta_deg: 0.4,
            crop,
            plane_mask: None,
            exclude: None,
        }
    }

    /// Background-plane mask after applying the default and exclusions.
    pub fn plane_mask_for(&self, img: &RawImage) -> Result<Vec<bool>> {
        let n = img.data.len();
        let mut mask = match &self.plane_mask {
            Some(m) if m.len() != n => {
                return Err(Error::DimensionMismatch(format!("plane mask has {} pixels, image {n}", m.len())))
            }
            Some(m) => m.clone(),
            None => (0..n).map(|i| !self.crop.contains(i / img.width, i % img.width)).collect(),
        };
        if let Some(ex) = &self.exclude {
            if ex.len() != n {
                return Err(Error::DimensionMismatch(format!("exclusion mask has {} pixels, image {n}", ex.len())));
            }
            for (m, keep) in mask.iter_mut().zip(ex) {
                *m &= keep;
            }
        }
        Ok(mask)
    }

    /// Runs bright subtraction, despiking, plane subtraction, rotation and
    /// cropping in that order.
    pub fn run(&self, img: &RawImage, bright: &[&RawImage]) -> Result<RawImage> {
        let mut cur = if bright.is_empty() {
            img.clone()
        } else {
            subtract_background(img, bright)?
        };
        cur = despike(&cur, self.despike_quantile)?;
        let mask = self.plane_mask_for(&cur)?;
        cur = subtract_plane(&cur, &mask)?;
        cur = rotate(&cur, self.theta_deg)?;
        crop(&cur, self.crop)
    }
}
