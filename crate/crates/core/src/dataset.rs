//! Labeled field images: manifest loading and saving, PNG rasters, and the
//! deterministic synthetic dataset used as a stand-in for real imagery.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::raster::Raster;
use crate::rng::{derive_seed, Stream, UniformSource};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Mask sample values.
pub const MASK_BACKGROUND: u8 = 0;
pub const MASK_PLANT: u8 = 1;
pub const MASK_SYMPTOM: u8 = 2;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to parse manifest {path}: {source}")]
    ManifestParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported manifest version {0}")]
    UnsupportedVersion(u32),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode or encode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("image {id}: mask is {mask_width}x{mask_height} but image is {width}x{height}")]
    MaskDimensionMismatch {
        id: String,
        width: usize,
        height: usize,
        mask_width: usize,
        mask_height: usize,
    },
    #[error("image {id}: {reason}")]
    LabelMaskInconsistency { id: String, reason: String },
    #[error("image {id}: mask value {value} is not one of 0, 1, 2")]
    InvalidMaskValue { id: String, value: u8 },
    #[error("image {id}: expected {expected} channels, found {found}")]
    ChannelMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate image id {0}")]
    DuplicateId(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
}

/// Whole-image or patch class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Healthy,
    LateBlight,
}

impl Label {
    pub fn as_target(self) -> u8 {
        match self {
            Label::Healthy => 0,
            Label::LateBlight => 1,
        }
    }

    pub fn from_target(c: u8) -> Self {
        if c == 0 {
            Label::Healthy
        } else {
            Label::LateBlight
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Healthy => "healthy",
            Label::LateBlight => "late_blight",
        })
    }
}

/// Single-channel label map: 0 background, 1 plant, 2 symptom.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMask(Raster);

impl SegMask {
    pub fn new(raster: Raster) -> Result<Self, DatasetError> {
        Self::with_id("<mask>", raster)
    }

    fn with_id(id: &str, raster: Raster) -> Result<Self, DatasetError> {
        if raster.channels() != 1 {
            return Err(DatasetError::ChannelMismatch {
                id: id.to_string(),
                expected: 1,
                found: raster.channels(),
            });
        }
        if let Some(&value) = raster.data().iter().find(|&&v| v > MASK_SYMPTOM) {
            return Err(DatasetError::InvalidMaskValue {
                id: id.to_string(),
                value,
            });
        }
        Ok(Self(raster))
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }

    pub fn symptom_pixels(&self) -> usize {
        self.0.count_value(MASK_SYMPTOM)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldImage {
    pub id: String,
    pub pixels: Raster,
    pub label: Label,
    pub mask: Option<SegMask>,
}

impl FieldImage {
    /// Validates the label/mask invariants.
    pub fn new(
        id: impl Into<String>,
        pixels: Raster,
        label: Label,
        mask: Option<SegMask>,
    ) -> Result<Self, DatasetError> {
        let id = id.into();
        if pixels.channels() != 3 {
            return Err(DatasetError::ChannelMismatch {
                id,
                expected: 3,
                found: pixels.channels(),
            });
        }
        if let Some(mask) = &mask {
            let m = mask.raster();
            if m.width() != pixels.width() || m.height() != pixels.height() {
                return Err(DatasetError::MaskDimensionMismatch {
                    id,
                    width: pixels.width(),
                    height: pixels.height(),
                    mask_width: m.width(),
                    mask_height: m.height(),
                });
            }
        }
        match (label, &mask) {
            (Label::LateBlight, None) => {
                return Err(DatasetError::LabelMaskInconsistency {
                    id,
                    reason: "diseased image has no mask".into(),
                })
            }
            (Label::LateBlight, Some(m)) if m.symptom_pixels() == 0 => {
                return Err(DatasetError::LabelMaskInconsistency {
                    id,
                    reason: "diseased image mask has no symptom pixels".into(),
                })
            }
            (Label::Healthy, Some(m)) if m.symptom_pixels() > 0 => {
                return Err(DatasetError::LabelMaskInconsistency {
                    id,
                    reason: "healthy image mask contains symptom pixels".into(),
                })
            }
            _ => {}
        }
        Ok(Self {
            id,
            pixels,
            label,
            mask,
        })
    }

    /// Rows (n).
    pub fn rows(&self) -> usize {
        self.pixels.height()
    }

    /// Columns (m).
    pub fn cols(&self) -> usize {
        self.pixels.width()
    }
}

/// Immutable, id-ordered collection of field images.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    images: Vec<FieldImage>,
}

impl Dataset {
    pub fn new(mut images: Vec<FieldImage>) -> Result<Self, DatasetError> {
        if images.is_empty() {
            return Err(DatasetError::EmptyDataset);
        }
        images.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in images.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(DatasetError::DuplicateId(pair[0].id.clone()));
            }
        }
        Ok(Self { images })
    }

    pub fn images(&self) -> &[FieldImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn diseased_count(&self) -> usize {
        self.images
            .iter()
            .filter(|i| i.label == Label::LateBlight)
            .count()
    }

    pub fn healthy_count(&self) -> usize {
        self.len() - self.diseased_count()
    }

    pub fn get(&self, id: &str) -> Option<&FieldImage> {
        self.images.iter().find(|i| i.id == id)
    }

    /// SHA-256 over ids, labels, dimensions and raster contents.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for img in &self.images {
            h.update((img.id.len() as u64).to_le_bytes());
            h.update(img.id.as_bytes());
            h.update([img.label.as_target()]);
            h.update((img.pixels.width() as u64).to_le_bytes());
            h.update((img.pixels.height() as u64).to_le_bytes());
            h.update(img.pixels.data());
            match &img.mask {
                Some(m) => {
                    h.update([1]);
                    h.update(m.raster().data());
                }
                None => h.update([0]),
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: String,
    pub mask_path: Option<String>,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub images: Vec<ManifestEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_png(path: &Path, channels: usize) -> Result<Raster, DatasetError> {
    if !path.exists() {
        return Err(DatasetError::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h, data) = if channels == 3 {
        let rgb = img.to_rgb8();
        (rgb.width(), rgb.height(), rgb.into_raw())
    } else {
        let l = img.to_luma8();
        (l.width(), l.height(), l.into_raw())
    };
    Raster::new(w as usize, h as usize, channels, data)
        .map_err(|e| DatasetError::InvalidConfig(e.to_string()))
}

pub fn write_png(path: &Path, raster: &Raster) -> Result<(), DatasetError> {
    let color = if raster.channels() == 3 {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    image::save_buffer_with_format(
        path,
        raster.data(),
        raster.width() as u32,
        raster.height() as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads every image and mask named by a manifest; paths resolve relative to
/// the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, DatasetError> {
    if !manifest_path.exists() {
        return Err(DatasetError::MissingFile(manifest_path.to_path_buf()));
    }
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| DatasetError::ManifestParse {
            path: manifest_path.to_path_buf(),
            source,
        })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(DatasetError::UnsupportedVersion(manifest.version));
    }
    if manifest.images.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let root = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let images = manifest
        .images
        .iter()
        .map(|entry| {
            let pixels = read_png(&root.join(&entry.image_path), 3)?;
            let mask = match &entry.mask_path {
                Some(p) => Some(SegMask::with_id(&entry.id, read_png(&root.join(p), 1)?)?),
                None => None,
            };
            FieldImage::new(entry.id.clone(), pixels, entry.label, mask)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Dataset::new(images)
}

/// Writes PNG rasters and `manifest.json` into `dir`; returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf, DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(dataset.len());
    for img in dataset.images() {
        let image_path = format!("{}.png", img.id);
        write_png(&dir.join(&image_path), &img.pixels)?;
        let mask_path = match &img.mask {
            Some(mask) => {
                let p = format!("{}_mask.png", img.id);
                write_png(&dir.join(&p), mask.raster())?;
                Some(p)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id: img.id.clone(),
            image_path,
            mask_path,
            label: img.label,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        images: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_count: usize,
    pub diseased_count: usize,
    /// Rows (n).
    pub rows: usize,
    /// Columns (m).
    pub cols: usize,
    /// Inclusive range of lesions per diseased image.
    pub blob_count: (usize, usize),
    /// Inclusive range of lesion semi-axes in pixels.
    pub blob_radius: (usize, usize),
    /// Coarsest wavelength of the colour noise, in pixels.
    pub texture_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_count: 22,
            diseased_count: 9,
            rows: 1000,
            cols: 1500,
            blob_count: (4, 8),
            blob_radius: (40, 75),
            texture_scale: 40.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// Default configuration at another image size, with lesion and texture
    /// scales proportional to the row count.
    pub fn with_size(rows: usize, cols: usize) -> Self {
        let base = Self::default();
        let k = rows as f64 / base.rows as f64;
        let scale = |v: usize| ((v as f64 * k).round() as usize).max(2);
        Self {
            rows,
            cols,
            blob_radius: (scale(base.blob_radius.0), scale(base.blob_radius.1)),
            texture_scale: (base.texture_scale * k).max(2.0),
            ..base
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: &str| Err(DatasetError::InvalidConfig(msg.to_string()));
        if self.image_count == 0 {
            return bad("image_count must be at least 1");
        }
        if self.diseased_count > self.image_count {
            return bad("diseased_count exceeds image_count");
        }
        if self.rows < 16 || self.cols < 16 {
            return bad("images must be at least 16x16");
        }
        if self.blob_radius.0 < 2 || self.blob_radius.0 > self.blob_radius.1 {
            return bad("blob radius range must satisfy 2 <= min <= max");
        }
        if self.blob_count.0 == 0 || self.blob_count.0 > self.blob_count.1 {
            return bad("blob count range must satisfy 1 <= min <= max");
        }
        if self.texture_scale.is_nan() || self.texture_scale < 2.0 {
            return bad("texture scale must be at least 2 pixels");
        }
        Ok(())
    }
}

/// Generator output: the dataset plus the lesion pixel count painted into
/// each image (zero for healthy images), in dataset order.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub painted_symptom_pixels: Vec<usize>,
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
struct ValueNoise {
    cell: f64,
    cols: usize,
    lattice: Vec<f32>,
}

impl ValueNoise {
    fn new(stream: &mut Stream, width: usize, height: usize, cell: f64) -> Self {
        let cols = (width as f64 / cell).ceil() as usize + 2;
        let rows = (height as f64 / cell).ceil() as usize + 2;
        let lattice = (0..cols * rows)
            .map(|_| stream.next_unit() as f32)
            .collect();
        Self {
            cell,
            cols,
            lattice,
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        let fx = x as f64 / self.cell;
        let fy = y as f64 / self.cell;
        let ix = fx as usize;
        let iy = fy as usize;
        let smooth = |t: f64| (t * t * (3.0 - 2.0 * t)) as f32;
        let tx = smooth(fx - ix as f64);
        let ty = smooth(fy - iy as f64);
        let idx = |cx: usize, cy: usize| self.lattice[cy * self.cols + cx];
        let top = idx(ix, iy) + (idx(ix + 1, iy) - idx(ix, iy)) * tx;
        let bottom = idx(ix, iy + 1) + (idx(ix + 1, iy + 1) - idx(ix, iy + 1)) * tx;
        top + (bottom - top) * ty
    }
}

/// Three octaves of value noise, normalized to `[0, 1]`.
struct Texture {
    octaves: [ValueNoise; 3],
}

impl Texture {
    fn new(stream: &mut Stream, width: usize, height: usize, scale: f64) -> Self {
        Self {
            octaves: [
                ValueNoise::new(stream, width, height, scale),
                ValueNoise::new(stream, width, height, scale / 2.0),
                ValueNoise::new(stream, width, height, (scale / 4.0).max(1.0)),
            ],
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        (0.5 * self.octaves[0].at(x, y)
            + 0.3 * self.octaves[1].at(x, y)
            + 0.2 * self.octaves[2].at(x, y))
        .clamp(0.0, 1.0)
    }
}

#[inline]
fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

#[inline]
fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Star-shaped outline `1 + sum_k amp_k cos(k phi + phase_k)`.
struct Outline {
    terms: Vec<(f64, f64, f64)>,
}

impl Outline {
    fn random(stream: &mut Stream, harmonics: &[(f64, f64)]) -> Self {
        let terms = harmonics
            .iter()
            .map(|&(k, max_amp)| {
                (
                    k,
                    stream.next_range(0.3, 1.0) * max_amp,
                    stream.next_range(0.0, std::f64::consts::TAU),
                )
            })
            .collect();
        Self { terms }
    }

    #[inline]
    fn radius(&self, phi: f64) -> f64 {
        1.0 + self
            .terms
            .iter()
            .map(|&(k, a, p)| a * (k * phi + p).cos())
            .sum::<f64>()
    }
}

/// Rotated ellipse with a perturbed outline, rasterized over its bounding box.
struct Shape {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    outline: Outline,
    max_extent: f64,
}

impl Shape {
    /// Normalized radial position of `(x, y)` relative to the outline:
    /// below 1 means inside.
    #[inline]
    fn level(&self, x: usize, y: usize) -> f64 {
        let dx = x as f64 - self.cx;
        let dy = y as f64 - self.cy;
        let u = (self.cos * dx + self.sin * dy) / self.a;
        let v = (-self.sin * dx + self.cos * dy) / self.b;
        let r = (u * u + v * v).sqrt();
        if r == 0.0 {
            return 0.0;
        }
        r / self.outline.radius(v.atan2(u))
    }

    fn bounds(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let e = self.max_extent;
        let x0 = (self.cx - e).floor().max(0.0) as usize;
        let y0 = (self.cy - e).floor().max(0.0) as usize;
        let x1 = ((self.cx + e).ceil() as usize + 1).min(width);
        let y1 = ((self.cy + e).ceil() as usize + 1).min(height);
        (x0, y0, x1, y1)
    }
}

fn random_shape(
    stream: &mut Stream,
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    harmonics: &[(f64, f64)],
) -> Shape {
    let angle = stream.next_range(0.0, std::f64::consts::PI);
    let outline = Outline::random(stream, harmonics);
    let amp: f64 = outline.terms.iter().map(|t| t.1).sum();
    Shape {
        cx,
        cy,
        a,
        b,
        cos: angle.cos(),
        sin: angle.sin(),
        outline,
        max_extent: a.max(b) * (1.0 + amp),
    }
}

const SOIL: [f32; 3] = [158.0, 140.0, 112.0];
const SOIL_DARK: [f32; 3] = [128.0, 112.0, 88.0];
const LESION_CORE: [f32; 3] = [58.0, 38.0, 22.0];
const LESION_EDGE: [f32; 3] = [112.0, 86.0, 44.0];

/// Paints one image. Returns RGB pixels, the mask, and the number of lesion
/// pixels painted.
fn render_image(
    config: &SynthConfig,
    stream: &mut Stream,
    diseased: bool,
) -> (Raster, Raster, usize) {
    let (w, h) = (config.cols, config.rows);
    let l = w.min(h) as f64;
    let texture = Texture::new(stream, w, h, config.texture_scale);
    let mut rgb = vec![[0f32; 3]; w * h];
    let mut mask = vec![MASK_BACKGROUND; w * h];

    for y in 0..h {
        for x in 0..w {
            rgb[y * w + x] = mix(SOIL_DARK, SOIL, texture.at(x, y));
        }
    }

    // Canopy: overlapping lobed leaves, later leaves occlude earlier ones.
    let leaf_count = ((w * h) as f64 * 2.3e-4 * (1000.0 / l).powi(2))
        .round()
        .max(1.0) as usize;
    let clusters: Vec<(f64, f64, f64)> = (0..(leaf_count / 40).max(1))
        .map(|_| {
            (
                stream.next_range(0.0, w as f64),
                stream.next_range(0.0, h as f64),
                stream.next_range(0.12, 0.3) * l,
            )
        })
        .collect();
    for _ in 0..leaf_count {
        let (ccx, ccy, spread) = clusters[stream.next_int_inclusive(0, clusters.len() - 1)];
        let cx = ccx + stream.next_range(-1.0, 1.0) * spread * 1.6;
        let cy = ccy + stream.next_range(-1.0, 1.0) * spread * 1.6;
        let a = stream.next_range(0.03, 0.07) * l;
        let b = a * stream.next_range(0.5, 0.8);
        let shape = random_shape(stream, cx, cy, a, b, &[(3.0, 0.08), (5.0, 0.05)]);
        let base = [
            stream.next_range(40.0, 85.0) as f32,
            stream.next_range(105.0, 165.0) as f32,
            stream.next_range(25.0, 65.0) as f32,
        ];
        let (x0, y0, x1, y1) = shape.bounds(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                let level = shape.level(x, y);
                if level < 1.0 {
                    let idx = y * w + x;
                    let n = texture.at(x, y);
                    // Darker towards the leaf edge and in low-noise regions.
                    let shade = (0.72 + 0.28 * (1.0 - level * level) as f32) * (0.8 + 0.4 * n);
                    rgb[idx] = [base[0] * shade, base[1] * shade, base[2] * shade];
                    mask[idx] = MASK_PLANT;
                }
            }
        }
    }

    let mut painted = 0usize;
    if diseased {
        let plant_pixels: Vec<usize> = (0..w * h).filter(|&i| mask[i] == MASK_PLANT).collect();
        let count = stream.next_int_inclusive(config.blob_count.0, config.blob_count.1);
        for _ in 0..count {
            if plant_pixels.is_empty() {
                break;
            }
            let center = plant_pixels[stream.next_int_inclusive(0, plant_pixels.len() - 1)];
            let (cx, cy) = ((center % w) as f64, (center / w) as f64);
            let a = stream.next_range(
                config.blob_radius.0 as f64,
                config.blob_radius.1 as f64 + 1.0,
            );
            let b = (a * stream.next_range(0.6, 1.0)).max(config.blob_radius.0 as f64);
            let shape = random_shape(
                stream,
                cx,
                cy,
                a,
                b,
                &[(2.0, 0.12), (5.0, 0.08), (9.0, 0.05)],
            );
            let (x0, y0, x1, y1) = shape.bounds(w, h);
            for y in y0..y1 {
                for x in x0..x1 {
                    let idx = y * w + x;
                    if mask[idx] == MASK_BACKGROUND {
                        continue;
                    }
                    let level = shape.level(x, y);
                    if level < 1.0 {
                        let n = texture.at(x, y);
                        let t = (level * level) as f32 * (0.7 + 0.6 * n);
                        let c = mix(LESION_CORE, LESION_EDGE, t.min(1.0));
                        // Slight blend with the leaf colour at the rim.
                        let rim = ((level - 0.85).max(0.0) / 0.15) as f32 * 0.35;
                        rgb[idx] = mix(c, rgb[idx], rim);
                        if mask[idx] != MASK_SYMPTOM {
                            mask[idx] = MASK_SYMPTOM;
                            painted += 1;
                        }
                    }
                }
            }
        }
    }

    let data = rgb
        .iter()
        .flat_map(|p| [to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
        .collect();
    (
        Raster::new(w, h, 3, data).expect("dimensions match"),
        Raster::new(w, h, 1, mask).expect("dimensions match"),
        painted,
    )
}

/// Builds the synthetic dataset in memory. Output depends only on `config`.
///
/// Image `i` is named `img_{i:02}` and draws from stream `i` of a seed
/// derived from `config.seed`; which images are diseased is decided by a
/// separate stream.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticDataset, DatasetError> {
    config.validate()?;
    let mut order: Vec<usize> = (0..config.image_count).collect();
    Stream::new(derive_seed(config.seed, "synth/labels"), 0).shuffle(&mut order);
    let diseased: BTreeSet<usize> = order[..config.diseased_count].iter().copied().collect();

    let image_seed = derive_seed(config.seed, "synth/images");
    let width = config
        .image_count
        .saturating_sub(1)
        .to_string()
        .len()
        .max(2);
    let mut images = Vec::with_capacity(config.image_count);
    let mut painted_counts = Vec::with_capacity(config.image_count);
    for i in 0..config.image_count {
        let mut stream = Stream::new(image_seed, i as u64);
        let is_diseased = diseased.contains(&i);
        let (pixels, mask, painted) = render_image(config, &mut stream, is_diseased);
        let id = format!("img_{i:0width$}");
        let (label, mask) = if is_diseased && painted > 0 {
            (Label::LateBlight, Some(SegMask(mask)))
        } else if is_diseased {
            return Err(DatasetError::InvalidConfig(format!(
                "image {id} received no lesion pixels; increase canopy or blob size"
            )));
        } else {
            (Label::Healthy, None)
        };
        images.push(FieldImage::new(id, pixels, label, mask)?);
        painted_counts.push(painted);
    }
    Ok(SyntheticDataset {
        dataset: Dataset::new(images)?,
        painted_symptom_pixels: painted_counts,
    })
}
