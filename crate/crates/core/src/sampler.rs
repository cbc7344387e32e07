//! Random rotated-patch generation.
//!
//! Each patch is drawn by picking a rotation angle uniformly in `[-pi, pi)`,
//! a side length `t` uniformly among the integers in `[0.15 l, 0.25 l]`
//! (`l` = shorter image side), and a position uniformly inside the largest
//! blank-free rectangle of the rotated image. Diseased images are labelled
//! per patch by pushing the same transform through the segmentation mask.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{
    read_png, write_png, Dataset, DatasetError, FieldImage, Label, SegMask, MASK_SYMPTOM,
};
use crate::geometry::{sample_in_frame, GeometryError, Interpolation, RotatedFrame};
use crate::raster::Raster;
use crate::rng::{Stream, UniformSource};

/// Redraws of `(theta, t)` before an image is declared too small.
pub const MAX_REDRAWS: usize = 100;
pub const PATCHSET_FILE: &str = "patchset.json";
pub const PATCHSET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(
        "no patch fits a {cols}x{rows} image after {attempts} draws (zoom range {t_min}..={t_max})"
    )]
    PatchCannotFit {
        rows: usize,
        cols: usize,
        t_min: usize,
        t_max: usize,
        attempts: usize,
    },
    #[error("invalid zoom range [{0}, {1}]")]
    InvalidZoom(f64, f64),
    #[error("mask value {0} is not one of 0, 1, 2")]
    InvalidMaskValue(u8),
    #[error("mask is {mask_width}x{mask_height} but image is {width}x{height}")]
    MaskDimensionMismatch {
        width: usize,
        height: usize,
        mask_width: usize,
        mask_height: usize,
    },
    #[error("rho must be at least 1")]
    InvalidRho,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("image {id}: {source}")]
    Image {
        id: String,
        #[source]
        source: Box<SamplerError>,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("patch-set archive: {0}")]
    Archive(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Patch side bounds as fractions of the shorter image side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoomRange {
    pub min_fraction: f64,
    pub max_fraction: f64,
}

impl Default for ZoomRange {
    fn default() -> Self {
        Self {
            min_fraction: 0.15,
            max_fraction: 0.25,
        }
    }
}

impl ZoomRange {
    /// Integer side bounds `[ceil(min l), floor(max l)]`.
    pub fn side_bounds(&self, l: usize) -> Result<(usize, usize), SamplerError> {
        let (lo, hi) = (self.min_fraction, self.max_fraction);
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(SamplerError::InvalidZoom(lo, hi));
        }
        let t_min = ((lo * l as f64) - 1e-9).ceil().max(1.0) as usize;
        let t_max = ((hi * l as f64) + 1e-9).floor() as usize;
        if t_max < t_min {
            return Err(SamplerError::InvalidZoom(lo, hi));
        }
        Ok((t_min, t_max))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub source_image_id: String,
    /// Rotation in radians, in `[-pi, pi]`.
    pub theta: f64,
    /// Patch side in pixels.
    pub t: usize,
    /// `(x, y)` of the top-left pixel inside the inscribed rectangle.
    pub top_left: (usize, usize),
}

/// Draws rotation, zoom and position for an image of `rows x cols`.
///
/// Each unit draw maps linearly onto its range, so a source that always
/// returns 0.5 yields `theta = 0`, the middle side length and a centered
/// square.
pub fn draw_patch_spec<R: UniformSource + ?Sized>(
    rng: &mut R,
    image_id: &str,
    rows: usize,
    cols: usize,
    zoom: ZoomRange,
) -> Result<PatchSpec, SamplerError> {
    let l = rows.min(cols);
    let (t_min, t_max) = zoom.side_bounds(l)?;
    for _ in 0..MAX_REDRAWS {
        let theta = rng.next_range(-std::f64::consts::PI, std::f64::consts::PI);
        let t = rng.next_int_inclusive(t_min, t_max);
        let rect = RotatedFrame::new(cols, rows, theta)?.rect();
        if t > rect.width || t > rect.height {
            continue;
        }
        let x = rng.next_int_inclusive(0, rect.width - t);
        let y = rng.next_int_inclusive(0, rect.height - t);
        return Ok(PatchSpec {
            source_image_id: image_id.to_string(),
            theta,
            t,
            top_left: (x, y),
        });
    }
    Err(SamplerError::PatchCannotFit {
        rows,
        cols,
        t_min,
        t_max,
        attempts: MAX_REDRAWS,
    })
}

/// Labels a mask patch: late blight iff at least `min_symptom_pixels`
/// samples carry the symptom value.
pub fn label_from_mask(
    mask_patch: &Raster,
    min_symptom_pixels: usize,
) -> Result<(Label, usize), SamplerError> {
    let mut count = 0usize;
    for &v in mask_patch.data() {
        match v {
            0 | 1 => {}
            MASK_SYMPTOM => count += 1,
            other => return Err(SamplerError::InvalidMaskValue(other)),
        }
    }
    let label = if count >= min_symptom_pixels.max(1) {
        Label::LateBlight
    } else {
        Label::Healthy
    };
    Ok((label, count))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPatch {
    pub pixels: Raster,
    pub label: Label,
    pub spec: PatchSpec,
    pub symptom_pixel_count: usize,
}

/// Mask patch for a spec, sampled with nearest interpolation.
pub fn extract_mask_patch(mask: &SegMask, spec: &PatchSpec) -> Result<Raster, SamplerError> {
    let m = mask.raster();
    let frame = RotatedFrame::new(m.width(), m.height(), spec.theta)?;
    Ok(sample_in_frame(
        m,
        &frame,
        spec.top_left,
        spec.t,
        Interpolation::Nearest,
    )?)
}

/// Extracts the RGB patch (bilinear) and, for diseased images, labels it from
/// the identically transformed mask patch (nearest).
pub fn extract_labeled_patch(
    img: &FieldImage,
    spec: &PatchSpec,
    min_symptom_pixels: usize,
) -> Result<LabeledPatch, SamplerError> {
    let frame = RotatedFrame::new(img.cols(), img.rows(), spec.theta)?;
    let pixels = sample_in_frame(
        &img.pixels,
        &frame,
        spec.top_left,
        spec.t,
        Interpolation::Bilinear,
    )?;
    let (label, symptom_pixel_count) = match (&img.label, &img.mask) {
        (Label::LateBlight, Some(mask)) => {
            let m = mask.raster();
            if m.width() != img.cols() || m.height() != img.rows() {
                return Err(SamplerError::MaskDimensionMismatch {
                    width: img.cols(),
                    height: img.rows(),
                    mask_width: m.width(),
                    mask_height: m.height(),
                });
            }
            let mask_patch =
                sample_in_frame(m, &frame, spec.top_left, spec.t, Interpolation::Nearest)?;
            label_from_mask(&mask_patch, min_symptom_pixels)?
        }
        (Label::LateBlight, None) => {
            return Err(DatasetError::LabelMaskInconsistency {
                id: img.id.clone(),
                reason: "diseased image has no mask".into(),
            }
            .into())
        }
        (Label::Healthy, _) => (Label::Healthy, 0),
    };
    Ok(LabeledPatch {
        pixels,
        label,
        spec: spec.clone(),
        symptom_pixel_count,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub rho: usize,
    pub seed: u64,
    pub zoom: ZoomRange,
    pub min_symptom_pixels: usize,
}

impl SamplerConfig {
    pub fn new(rho: usize, seed: u64) -> Self {
        Self {
            rho,
            seed,
            zoom: ZoomRange::default(),
            min_symptom_pixels: 1,
        }
    }
}

/// `rho` labeled patches per source image, in dataset order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub config: SamplerConfig,
    pub dataset_digest: String,
    pub patches: Vec<LabeledPatch>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.patches
            .iter()
            .filter(|p| p.label == Label::LateBlight)
            .count()
    }

    /// Patches whose source is `id`.
    pub fn from_image<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a LabeledPatch> + 'a {
        self.patches
            .iter()
            .filter(move |p| p.spec.source_image_id == id)
    }

    /// SHA-256 over configuration, specs, labels and pixel contents.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.config.rho as u64).to_le_bytes());
        h.update(self.config.seed.to_le_bytes());
        h.update(self.config.zoom.min_fraction.to_le_bytes());
        h.update(self.config.zoom.max_fraction.to_le_bytes());
        h.update((self.config.min_symptom_pixels as u64).to_le_bytes());
        h.update(self.dataset_digest.as_bytes());
        for p in &self.patches {
            h.update((p.spec.source_image_id.len() as u64).to_le_bytes());
            h.update(p.spec.source_image_id.as_bytes());
            h.update(p.spec.theta.to_le_bytes());
            h.update((p.spec.t as u64).to_le_bytes());
            h.update((p.spec.top_left.0 as u64).to_le_bytes());
            h.update((p.spec.top_left.1 as u64).to_le_bytes());
            h.update([p.label.as_target()]);
            h.update((p.symptom_pixel_count as u64).to_le_bytes());
            h.update(p.pixels.data());
        }
        hex::encode(h.finalize())
    }
}

fn sample_image(
    img: &FieldImage,
    index: usize,
    config: &SamplerConfig,
) -> Result<Vec<LabeledPatch>, SamplerError> {
    let mut stream = Stream::new(config.seed, index as u64);
    let specs = (0..config.rho)
        .map(|_| draw_patch_spec(&mut stream, &img.id, img.rows(), img.cols(), config.zoom))
        .collect::<Result<Vec<_>, _>>()?;
    specs
        .iter()
        .map(|spec| extract_labeled_patch(img, spec, config.min_symptom_pixels))
        .collect()
}

/// Samples `rho` patches from every image.
///
/// Image `i` (in dataset order) draws from stream `i` of `config.seed`, so
/// the result does not depend on how images are scheduled across threads.
pub fn generate_patchset(
    dataset: &Dataset,
    config: SamplerConfig,
) -> Result<PatchSet, SamplerError> {
    if config.rho == 0 {
        return Err(SamplerError::InvalidRho);
    }
    if dataset.is_empty() {
        return Err(SamplerError::EmptyDataset);
    }
    let per_image: Vec<Vec<LabeledPatch>> = dataset
        .images()
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            sample_image(img, i, &config).map_err(|e| SamplerError::Image {
                id: img.id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(PatchSet {
        config,
        dataset_digest: dataset.digest(),
        patches: per_image.into_iter().flatten().collect(),
    })
}

// ---------------------------------------------------------------------------
// Archive
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub source_image_id: String,
    pub theta: f64,
    pub t: usize,
    pub top_left: (usize, usize),
    pub label: Label,
    pub symptom_pixel_count: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSetIndex {
    pub version: u32,
    pub rho: usize,
    pub seed: u64,
    pub zoom: ZoomRange,
    pub min_symptom_pixels: usize,
    pub manifest_digest: String,
    pub patches: Vec<PatchRecord>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SamplerError + '_ {
    move |source| SamplerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `patchset.json` plus one PNG per patch into `dir`.
pub fn save_patchset(set: &PatchSet, dir: &Path) -> Result<PathBuf, SamplerError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let digits = set.len().saturating_sub(1).to_string().len().max(5);
    let records = set
        .patches
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let file = format!("patch_{i:0digits$}.png");
            write_png(&dir.join(&file), &p.pixels)?;
            Ok(PatchRecord {
                source_image_id: p.spec.source_image_id.clone(),
                theta: p.spec.theta,
                t: p.spec.t,
                top_left: p.spec.top_left,
                label: p.label,
                symptom_pixel_count: p.symptom_pixel_count,
                file,
            })
        })
        .collect::<Result<Vec<_>, SamplerError>>()?;
    let index = PatchSetIndex {
        version: PATCHSET_VERSION,
        rho: set.config.rho,
        seed: set.config.seed,
        zoom: set.config.zoom,
        min_symptom_pixels: set.config.min_symptom_pixels,
        manifest_digest: set.dataset_digest.clone(),
        patches: records,
    };
    let path = dir.join(PATCHSET_FILE);
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(path)
}

/// Reads an archive written by [`save_patchset`].
pub fn load_patchset(dir: &Path) -> Result<PatchSet, SamplerError> {
    let path = dir.join(PATCHSET_FILE);
    if !path.exists() {
        return Err(DatasetError::MissingFile(path).into());
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let index: PatchSetIndex = serde_json::from_str(&text)
        .map_err(|e| SamplerError::Archive(format!("{}: {e}", path.display())))?;
    if index.version != PATCHSET_VERSION {
        return Err(SamplerError::Archive(format!(
            "unsupported version {}",
            index.version
        )));
    }
    let patches = index
        .patches
        .into_iter()
        .map(|r| {
            let pixels = read_png(&dir.join(&r.file), 3)?;
            if pixels.width() != r.t || pixels.height() != r.t {
                return Err(SamplerError::Archive(format!(
                    "{} is {}x{}, expected {}x{}",
                    r.file,
                    pixels.width(),
                    pixels.height(),
                    r.t,
                    r.t
                )));
            }
            Ok(LabeledPatch {
                pixels,
                label: r.label,
                spec: PatchSpec {
                    source_image_id: r.source_image_id,
                    theta: r.theta,
                    t: r.t,
                    top_left: r.top_left,
                },
                symptom_pixel_count: r.symptom_pixel_count,
            })
        })
        .collect::<Result<Vec<_>, SamplerError>>()?;
    Ok(PatchSet {
        config: SamplerConfig {
            rho: index.rho,
            seed: index.seed,
            zoom: index.zoom,
            min_symptom_pixels: index.min_symptom_pixels,
        },
        dataset_digest: index.manifest_digest,
        patches,
    })
}
