//! Raster geometry: rotation about the image center, the largest blank-free
//! axis-aligned rectangle of a rotated image, rotated-square sampling by
//! inverse mapping, and square resizing.
//!
//! Pixel model: pixel `(x, y)` has its center at integer coordinates, so the
//! source content of a `w x h` raster is the hull `[0, w-1] x [0, h-1]`.
//! A rotated-frame pixel is blank-free when its center maps back inside that
//! hull. Rotation is about `((w-1)/2, (h-1)/2)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Raster;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("raster dimensions must be positive, got {width}x{height}")]
    EmptyRaster { width: usize, height: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(usize),
    #[error("raster data length {actual} does not match dimensions (expected {expected})")]
    DataLength { expected: usize, actual: usize },
    #[error("rotation angle {0} is outside [-pi, pi]")]
    InvalidAngle(f64),
    #[error("square of side {t} at ({x}, {y}) exceeds the {rect_width}x{rect_height} inscribed rectangle")]
    SquareOutOfBounds {
        x: usize,
        y: usize,
        t: usize,
        rect_width: usize,
        rect_height: usize,
    },
    #[error(
        "crop {width}x{height} at ({x}, {y}) exceeds the {source_width}x{source_height} source"
    )]
    CropOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
        source_width: usize,
        source_height: usize,
    },
    #[error("output size must be at least 1")]
    ZeroSize,
}

/// Sampling kernel. Bilinear is used for RGB content, nearest for label masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

/// Size of the largest blank-free axis-aligned rectangle in the rotated frame.
/// The rectangle is centered on the image center.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InscribedRect {
    pub width: usize,
    pub height: usize,
}

impl InscribedRect {
    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

fn check_angle(theta: f64) -> Result<(), GeometryError> {
    if theta.is_finite() && (-PI..=PI).contains(&theta) {
        Ok(())
    } else {
        Err(GeometryError::InvalidAngle(theta))
    }
}

/// `(sin, cos)` with values that are zero up to rounding snapped to zero, so
/// lattice angles map pixel centers exactly onto pixel centers.
fn snapped_sin_cos(theta: f64) -> (f64, f64) {
    let (mut s, mut c) = theta.sin_cos();
    if s.abs() < 1e-12 {
        s = 0.0;
        c = c.signum();
    }
    if c.abs() < 1e-12 {
        c = 0.0;
        s = s.signum();
    }
    (s, c)
}

/// Closed-form largest axis-aligned rectangle inside a `w x h` rectangle
/// rotated by an angle with the given `|sin|` and `|cos|`.
///
/// Two regimes: when the short side is small relative to the long side the
/// rectangle touches only the two long edges (half-constrained); otherwise it
/// touches all four edges (fully constrained).
fn continuous_inscribed(w: f64, h: f64, sin_a: f64, cos_a: f64) -> (f64, f64) {
    if sin_a == 0.0 {
        return (w, h);
    }
    if cos_a == 0.0 {
        return (h, w);
    }
    if w <= 0.0 || h <= 0.0 {
        return (0.0, 0.0);
    }
    let width_is_longer = w >= h;
    let (long, short) = if width_is_longer { (w, h) } else { (h, w) };
    if short <= 2.0 * sin_a * cos_a * long || (sin_a - cos_a).abs() < 1e-10 {
        let x = 0.5 * short;
        if width_is_longer {
            (x / sin_a, x / cos_a)
        } else {
            (x / cos_a, x / sin_a)
        }
    } else {
        let cos_2a = cos_a * cos_a - sin_a * sin_a;
        (
            (w * cos_a - h * sin_a) / cos_2a,
            (h * cos_a - w * sin_a) / cos_2a,
        )
    }
}

/// Largest blank-free, centered, axis-aligned rectangle (in whole pixels) of
/// a `w x h` raster rotated by `theta` radians.
pub fn max_inscribed_rect(w: usize, h: usize, theta: f64) -> Result<InscribedRect, GeometryError> {
    if w == 0 || h == 0 {
        return Err(GeometryError::EmptyRaster {
            width: w,
            height: h,
        });
    }
    check_angle(theta)?;
    let (s, c) = snapped_sin_cos(theta);
    let (s, c) = (s.abs(), c.abs());
    let (span_w, span_h) = ((w - 1) as f64, (h - 1) as f64);
    let (wr, hr) = continuous_inscribed(span_w, span_h, s, c);
    // Pixel centers span a length of (count - 1).
    let to_pixels = |len: f64| (len + 1e-7).floor().max(0.0) as usize + 1;
    let seed = InscribedRect {
        width: to_pixels(wr),
        height: to_pixels(hr),
    };
    if s == 0.0 || c == 0.0 {
        return Ok(seed);
    }
    Ok(refine_on_lattice(seed, span_w, span_h, s, c))
}

/// Flooring the continuous optimum can miss the best whole-pixel shape,
/// since area is flat along the binding constraint. Scans every pixel width,
/// takes the tallest fitting height, and keeps the largest area, preferring
/// the shape nearest the floored continuous optimum on ties.
fn refine_on_lattice(
    seed: InscribedRect,
    span_w: f64,
    span_h: f64,
    s: f64,
    c: f64,
) -> InscribedRect {
    const EPS: f64 = 1e-7;
    let mut best = InscribedRect {
        width: 0,
        height: 0,
    };
    let distance = |r: InscribedRect| r.width.abs_diff(seed.width) + r.height.abs_diff(seed.height);
    let mut width = 1usize;
    loop {
        let a = (width - 1) as f64;
        if a * c > span_w + EPS || a * s > span_h + EPS {
            break;
        }
        let b = ((span_w - a * c) / s).min((span_h - a * s) / c);
        let candidate = InscribedRect {
            width,
            height: (b + EPS).floor().max(0.0) as usize + 1,
        };
        let (area, best_area) = (candidate.area(), best.area());
        if area > best_area || (area == best_area && distance(candidate) < distance(best)) {
            best = candidate;
        }
        width += 1;
    }
    best
}

/// The inverse mapping from inscribed-rectangle pixel coordinates of a
/// rotated raster back to source coordinates.
#[derive(Clone, Copy, Debug)]
pub struct RotatedFrame {
    source_width: usize,
    source_height: usize,
    sin: f64,
    cos: f64,
    rect: InscribedRect,
}

impl RotatedFrame {
    pub fn new(
        source_width: usize,
        source_height: usize,
        theta: f64,
    ) -> Result<Self, GeometryError> {
        let rect = max_inscribed_rect(source_width, source_height, theta)?;
        let (sin, cos) = snapped_sin_cos(theta);
        Ok(Self {
            source_width,
            source_height,
            sin,
            cos,
            rect,
        })
    }

    pub fn rect(&self) -> InscribedRect {
        self.rect
    }

    /// Source coordinates of the rotated-frame pixel `(x, y)`, where `(0, 0)`
    /// is the top-left pixel of the inscribed rectangle.
    #[inline]
    pub fn source_point(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - (self.rect.width as f64 - 1.0) * 0.5;
        let dy = y - (self.rect.height as f64 - 1.0) * 0.5;
        let cx = (self.source_width as f64 - 1.0) * 0.5;
        let cy = (self.source_height as f64 - 1.0) * 0.5;
        (
            cx + self.cos * dx + self.sin * dy,
            cy - self.sin * dx + self.cos * dy,
        )
    }

    /// Checks that a `t x t` square at `top_left` lies inside the rectangle.
    pub fn check_square(&self, top_left: (usize, usize), t: usize) -> Result<(), GeometryError> {
        let (x, y) = top_left;
        if t == 0 || x + t > self.rect.width || y + t > self.rect.height {
            return Err(GeometryError::SquareOutOfBounds {
                x,
                y,
                t,
                rect_width: self.rect.width,
                rect_height: self.rect.height,
            });
        }
        Ok(())
    }
}

/// Bilinear sample at a source point, clamped to the pixel-center hull.
/// Writes one value per channel into `out`.
#[inline]
pub fn sample_bilinear(img: &Raster, sx: f64, sy: f64, out: &mut [u8]) {
    let max_x = (img.width() - 1) as f64;
    let max_y = (img.height() - 1) as f64;
    let sx = sx.clamp(0.0, max_x);
    let sy = sy.clamp(0.0, max_y);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    for (c, slot) in out.iter_mut().enumerate().take(img.channels()) {
        let a = img.get(x0, y0, c) as f64;
        let b = img.get(x1, y0, c) as f64;
        let d = img.get(x0, y1, c) as f64;
        let e = img.get(x1, y1, c) as f64;
        let top = a + (b - a) * fx;
        let bottom = d + (e - d) * fx;
        let v = top + (bottom - top) * fy;
        *slot = v.round_ties_even().clamp(0.0, 255.0) as u8;
    }
}

/// Nearest-neighbour sample at a source point, clamped to the raster.
#[inline]
pub fn sample_nearest(img: &Raster, sx: f64, sy: f64, out: &mut [u8]) {
    let x = (sx + 0.5).floor().clamp(0.0, (img.width() - 1) as f64) as usize;
    let y = (sy + 0.5).floor().clamp(0.0, (img.height() - 1) as f64) as usize;
    out[..img.channels()].copy_from_slice(img.pixel(x, y));
}

/// Extracts the `t x t` square at `top_left` (inscribed-rectangle pixels) of
/// `img` rotated by `theta`, without materializing the rotated image.
pub fn sample_rotated_square(
    img: &Raster,
    theta: f64,
    top_left: (usize, usize),
    t: usize,
    interp: Interpolation,
) -> Result<Raster, GeometryError> {
    let frame = RotatedFrame::new(img.width(), img.height(), theta)?;
    sample_in_frame(img, &frame, top_left, t, interp)
}

/// Like [`sample_rotated_square`] with a prebuilt frame; `img` must have the
/// frame's source dimensions.
pub fn sample_in_frame(
    img: &Raster,
    frame: &RotatedFrame,
    top_left: (usize, usize),
    t: usize,
    interp: Interpolation,
) -> Result<Raster, GeometryError> {
    debug_assert_eq!(
        (img.width(), img.height()),
        (frame.source_width, frame.source_height)
    );
    frame.check_square(top_left, t)?;
    let channels = img.channels();
    let mut out = Raster::filled(t, t, channels, 0);
    let mut px = [0u8; 3];
    let (x0, y0) = top_left;
    for v in 0..t {
        for u in 0..t {
            let (sx, sy) = frame.source_point((x0 + u) as f64, (y0 + v) as f64);
            match interp {
                Interpolation::Bilinear => sample_bilinear(img, sx, sy, &mut px),
                Interpolation::Nearest => sample_nearest(img, sx, sy, &mut px),
            }
            let base = (v * t + u) * channels;
            out.data_mut()[base..base + channels].copy_from_slice(&px[..channels]);
        }
    }
    Ok(out)
}

/// Source coordinate of output index `d` when resizing `len_in` samples to
/// `len_out` with corner-aligned sampling. A single output sample reads the
/// input center.
#[inline]
fn corner_aligned(d: usize, len_in: usize, len_out: usize) -> f64 {
    if len_out == 1 {
        (len_in as f64 - 1.0) * 0.5
    } else {
        (d * (len_in - 1)) as f64 / (len_out - 1) as f64
    }
}

/// Resizes a raster to `s x s`.
///
/// Corner-aligned: output corners coincide with input corners, and a 1-pixel
/// output samples the input center. Bilinear results round half to even.
pub fn resize(patch: &Raster, s: usize, interp: Interpolation) -> Result<Raster, GeometryError> {
    if s == 0 {
        return Err(GeometryError::ZeroSize);
    }
    if patch.width() == s && patch.height() == s {
        return Ok(patch.clone());
    }
    let channels = patch.channels();
    let mut out = Raster::filled(s, s, channels, 0);
    let xs: Vec<f64> = (0..s)
        .map(|d| corner_aligned(d, patch.width(), s))
        .collect();
    let mut px = [0u8; 3];
    for v in 0..s {
        let sy = corner_aligned(v, patch.height(), s);
        for (u, &sx) in xs.iter().enumerate() {
            match interp {
                Interpolation::Bilinear => sample_bilinear(patch, sx, sy, &mut px),
                Interpolation::Nearest => sample_nearest(patch, sx, sy, &mut px),
            }
            let base = (v * s + u) * channels;
            out.data_mut()[base..base + channels].copy_from_slice(&px[..channels]);
        }
    }
    Ok(out)
}
