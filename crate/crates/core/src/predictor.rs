//! Whole-image prediction by sliding windows.
//!
//! For an `n x m` image (rows x cols) and window side `t`, windows start at
//! `(i t/2, j t/2)` for `i` in `0..=2(n/t - 1)` and `j` in
//! `0..=2(floor(m/t) - 1)`, giving `(2n/t - 1)(2 floor(m/t) - 1)` windows.
//! The image is diseased iff the largest window probability reaches the
//! threshold.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Label;
use crate::geometry::{resize, GeometryError, Interpolation};
use crate::model::{ModelError, PatchClassifier};
use crate::raster::Raster;

pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("window side {t} does not divide the {n} image rows")]
    IndivisiblePatchSize { n: usize, t: usize },
    #[error("window side {t} exceeds the smaller image side {limit}")]
    PatchTooLarge { t: usize, limit: usize },
    #[error("window side {0} must be even and positive")]
    OddPatchSize(usize),
    #[error("{0} rows has no integral fifth; pass an explicit window size")]
    NoDefaultWindow(usize),
    #[error("threshold {0} is not a probability")]
    InvalidThreshold(f64),
    #[error("probability grid has {actual} entries, expected {expected}")]
    GridMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// How the grid treats margins left uncovered when `t` does not divide a side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverMode {
    /// Only the half-stride lattice; `t` must divide the row count.
    #[default]
    Lattice,
    /// Lattice plus windows flush with the right and bottom edges.
    EdgeCover,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    /// Grid row index.
    pub row: usize,
    /// Grid column index.
    pub col: usize,
    /// Top-left pixel row.
    pub top: usize,
    /// Top-left pixel column.
    pub left: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowGrid {
    pub image_rows: usize,
    pub image_cols: usize,
    pub t: usize,
    pub stride: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Row-major over the grid.
    pub windows: Vec<Window>,
}

impl WindowGrid {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// `t = n / 5` when that is an even integer.
pub fn default_window_size(n: usize) -> Result<usize, PredictError> {
    if n > 0 && n.is_multiple_of(5) && (n / 5).is_multiple_of(2) {
        Ok(n / 5)
    } else {
        Err(PredictError::NoDefaultWindow(n))
    }
}

pub fn enumerate_windows(n: usize, m: usize, t: usize) -> Result<WindowGrid, PredictError> {
    enumerate_windows_with(n, m, t, CoverMode::Lattice)
}

fn offsets(len: usize, t: usize, stride: usize, edge_cover: bool) -> Vec<usize> {
    let count = 2 * (len / t) - 1;
    let mut v: Vec<usize> = (0..count).map(|i| i * stride).collect();
    let last = *v.last().expect("at least one window");
    if edge_cover && last + t < len {
        v.push(len - t);
    }
    v
}

pub fn enumerate_windows_with(
    n: usize,
    m: usize,
    t: usize,
    mode: CoverMode,
) -> Result<WindowGrid, PredictError> {
    if t == 0 || !t.is_multiple_of(2) {
        return Err(PredictError::OddPatchSize(t));
    }
    if t > n.min(m) {
        return Err(PredictError::PatchTooLarge { t, limit: n.min(m) });
    }
    if mode == CoverMode::Lattice && !n.is_multiple_of(t) {
        return Err(PredictError::IndivisiblePatchSize { n, t });
    }
    let stride = t / 2;
    let edge = mode == CoverMode::EdgeCover;
    let tops = offsets(n, t, stride, edge);
    let lefts = offsets(m, t, stride, edge);
    let windows = tops
        .iter()
        .enumerate()
        .flat_map(|(row, &top)| {
            lefts.iter().enumerate().map(move |(col, &left)| Window {
                row,
                col,
                top,
                left,
            })
        })
        .collect();
    Ok(WindowGrid {
        image_rows: n,
        image_cols: m,
        t,
        stride,
        grid_rows: tops.len(),
        grid_cols: lefts.len(),
        windows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredWindow {
    pub row: usize,
    pub col: usize,
    pub top: usize,
    pub left: usize,
    pub t: usize,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePrediction {
    pub grid: WindowGrid,
    /// One probability per window, row-major over the grid.
    pub probabilities: Vec<f64>,
    pub max_prob: f64,
    pub threshold: f64,
    pub verdict: Label,
    /// Windows at or above the threshold, highest probability first.
    pub positive_windows: Vec<ScoredWindow>,
}

fn check_threshold(threshold: f64) -> Result<(), PredictError> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(PredictError::InvalidThreshold(threshold))
    }
}

impl ImagePrediction {
    /// Aggregates per-window probabilities: late blight iff the maximum is at
    /// least `threshold`.
    pub fn from_probabilities(
        grid: WindowGrid,
        probabilities: Vec<f64>,
        threshold: f64,
    ) -> Result<Self, PredictError> {
        check_threshold(threshold)?;
        if probabilities.len() != grid.len() {
            return Err(PredictError::GridMismatch {
                expected: grid.len(),
                actual: probabilities.len(),
            });
        }
        let max_prob = probabilities
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let verdict = if max_prob >= threshold {
            Label::LateBlight
        } else {
            Label::Healthy
        };
        let mut positive_windows: Vec<ScoredWindow> = grid
            .windows
            .iter()
            .zip(&probabilities)
            .filter(|(_, &p)| p >= threshold)
            .map(|(w, &p)| ScoredWindow {
                row: w.row,
                col: w.col,
                top: w.top,
                left: w.left,
                t: grid.t,
                probability: p,
            })
            .collect();
        positive_windows.sort_by(|a, b| {
            b.probability
                .total_cmp(&a.probability)
                .then((a.row, a.col).cmp(&(b.row, b.col)))
        });
        Ok(Self {
            grid,
            probabilities,
            max_prob,
            threshold,
            verdict,
            positive_windows,
        })
    }

    pub fn probability_at(&self, row: usize, col: usize) -> f64 {
        self.probabilities[row * self.grid.grid_cols + col]
    }
}

/// Crops every window, resizes it to the classifier input and classifies it.
pub fn predict_image<C: PatchClassifier + ?Sized>(
    classifier: &C,
    img: &Raster,
    t: usize,
    threshold: f64,
    mode: CoverMode,
) -> Result<ImagePrediction, PredictError> {
    check_threshold(threshold)?;
    let grid = enumerate_windows_with(img.height(), img.width(), t, mode)?;
    let s = classifier.input_size();
    let probabilities = grid
        .windows
        .par_iter()
        .map(|w| {
            let crop = img.crop(w.left, w.top, t, t)?;
            let input = resize(&crop, s, Interpolation::Bilinear)?;
            Ok(classifier.predict_proba(&input)?)
        })
        .collect::<Result<Vec<f64>, PredictError>>()?;
    ImagePrediction::from_probabilities(grid, probabilities, threshold)
}

/// Single-channel heatmap (one pixel per window, probability scaled to
/// 0-255) and the positive windows in image coordinates.
pub fn localization_map(prediction: &ImagePrediction) -> (Raster, Vec<ScoredWindow>) {
    let data = prediction
        .probabilities
        .iter()
        .map(|p| (p.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8)
        .collect();
    let heatmap = Raster::new(
        prediction.grid.grid_cols,
        prediction.grid.grid_rows,
        1,
        data,
    )
    .expect("grid dimensions are positive");
    (heatmap, prediction.positive_windows.clone())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PredictError + '_ {
    move |source| PredictError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Binary PGM (P5) of a single-channel raster.
pub fn write_pgm(path: &Path, raster: &Raster) -> Result<(), PredictError> {
    assert_eq!(raster.channels(), 1, "PGM holds a single channel");
    let mut bytes = format!("P5\n{} {}\n255\n", raster.width(), raster.height()).into_bytes();
    bytes.extend_from_slice(raster.data());
    fs::write(path, bytes).map_err(io_err(path))
}

/// CSV with one line per window: `row,col,top_left_y,top_left_x,t,probability`.
pub fn window_csv(prediction: &ImagePrediction) -> String {
    let mut out = String::from("row,col,top_left_y,top_left_x,t,probability\n");
    for (w, p) in prediction
        .grid
        .windows
        .iter()
        .zip(&prediction.probabilities)
    {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            w.row, w.col, w.top, w.left, prediction.grid.t, p
        )
        .expect("string write");
    }
    out
}

pub fn write_window_csv(path: &Path, prediction: &ImagePrediction) -> Result<(), PredictError> {
    fs::write(path, window_csv(prediction)).map_err(io_err(path))
}
