//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls the code under test to compute an expected
//! value.

#![allow(dead_code)]

use isd4l::dataset::Label;
use isd4l::model::loss::{loss_and_logit_grad, LossKind, LossParams};
use isd4l::model::network::{backward, forward, Architecture, Workspace};
use isd4l::model::ModelError;
use isd4l::model::PatchClassifier;
use isd4l::raster::Raster;
use isd4l::rng::{Stream, UniformSource};
use isd4l::sampler::{LabeledPatch, PatchSet, PatchSpec, SamplerConfig};

/// Brute-force search for the largest centered axis-aligned lattice
/// rectangle whose pixel centers all fall inside a `w x h` pixel-center hull
/// rotated by `theta`.
///
/// Each of the four parity combinations (odd/even width and height) has its
/// own lattice of candidate centers. Every lattice point is tested directly
/// against the hull and a 2D prefix sum answers "are all points of this
/// rectangle valid" in constant time. Returns the maximum area and every
/// `(width, height)` attaining it.
pub struct InscribedOracle {
    half: isize,
    /// `valid[pw][ph]`: prefix sums over the `(2*half+1)^2` lattice.
    prefix: [[Vec<u32>; 2]; 2],
}

impl InscribedOracle {
    pub fn new(w: usize, h: usize, theta: f64) -> Self {
        let half = ((w * w + h * h) as f64).sqrt().ceil() as isize / 2 + 2;
        let side = (2 * half + 1) as usize;
        let (s, c) = (theta.sin(), theta.cos());
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let eps = 1e-9;
        let inside = |dx: f64, dy: f64| {
            let sx = cx + c * dx + s * dy;
            let sy = cy - s * dx + c * dy;
            sx >= -eps && sx <= w as f64 - 1.0 + eps && sy >= -eps && sy <= h as f64 - 1.0 + eps
        };
        let build = |pw: usize, ph: usize| {
            let mut p = vec![0u32; (side + 1) * (side + 1)];
            for j in 0..side {
                let dy = j as f64 - half as f64 + 0.5 * ph as f64;
                for i in 0..side {
                    let dx = i as f64 - half as f64 + 0.5 * pw as f64;
                    let v = inside(dx, dy) as u32;
                    p[(j + 1) * (side + 1) + i + 1] =
                        v + p[j * (side + 1) + i + 1] + p[(j + 1) * (side + 1) + i]
                            - p[j * (side + 1) + i];
                }
            }
            p
        };
        Self {
            half,
            prefix: [[build(0, 0), build(0, 1)], [build(1, 0), build(1, 1)]],
        }
    }

    /// Index range of a centered run of `n` lattice points.
    fn span(&self, n: usize) -> (usize, usize) {
        let h = self.half as usize;
        if n % 2 == 1 {
            (h - (n - 1) / 2, h + (n - 1) / 2)
        } else {
            (h - n / 2, h + n / 2 - 1)
        }
    }

    /// True when every pixel center of a centered `width x height` rectangle
    /// lies inside the rotated hull.
    pub fn is_valid(&self, width: usize, height: usize) -> bool {
        if width == 0
            || height == 0
            || width > 2 * self.half as usize
            || height > 2 * self.half as usize
        {
            return false;
        }
        let side = (2 * self.half + 1) as usize + 1;
        let p = &self.prefix[(width + 1) % 2][(height + 1) % 2];
        let (x0, x1) = self.span(width);
        let (y0, y1) = self.span(height);
        let sum = p[(y1 + 1) * side + x1 + 1] + p[y0 * side + x0]
            - p[y0 * side + x1 + 1]
            - p[(y1 + 1) * side + x0];
        sum as usize == width * height
    }

    /// Maximum area and all maximizing shapes.
    pub fn best(&self) -> (usize, Vec<(usize, usize)>) {
        let limit = 2 * self.half as usize;
        let mut best = 0;
        let mut shapes = Vec::new();
        for width in 1..=limit {
            let height = (1..=limit)
                .rev()
                .find(|&h| self.is_valid(width, h))
                .unwrap_or(0);
            if height == 0 {
                continue;
            }
            let area = width * height;
            if area > best {
                best = area;
                shapes.clear();
            }
            if area == best {
                shapes.push((width, height));
            }
        }
        (best, shapes)
    }
}

/// Whether all four corners of the square given by `spec` map into the
/// pixel-center hull of a `cols x rows` source. The hull is convex, so the
/// corners decide the whole square.
pub fn square_inside_hull(
    spec: &PatchSpec,
    rect: (usize, usize),
    rows: usize,
    cols: usize,
) -> bool {
    let (s, c) = (spec.theta.sin(), spec.theta.cos());
    let (rw, rh) = rect;
    let (cx, cy) = ((cols as f64 - 1.0) / 2.0, (rows as f64 - 1.0) / 2.0);
    let eps = 1e-7;
    let (x0, y0) = spec.top_left;
    let t = spec.t;
    [
        (x0, y0),
        (x0 + t - 1, y0),
        (x0, y0 + t - 1),
        (x0 + t - 1, y0 + t - 1),
    ]
    .iter()
    .all(|&(x, y)| {
        let dx = x as f64 - (rw as f64 - 1.0) / 2.0;
        let dy = y as f64 - (rh as f64 - 1.0) / 2.0;
        let sx = cx + c * dx + s * dy;
        let sy = cy - s * dx + c * dy;
        sx >= -eps && sx <= cols as f64 - 1.0 + eps && sy >= -eps && sy <= rows as f64 - 1.0 + eps
    })
}

/// Pearson chi-square statistic of `samples` in `[lo, hi)` over `bins`
/// equal-width bins against the uniform distribution.
pub fn chi_square_uniform(samples: &[f64], lo: f64, hi: f64, bins: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let b = (((x - lo) / (hi - lo)) * bins as f64).floor() as isize;
        counts[b.clamp(0, bins as isize - 1) as usize] += 1;
    }
    let expected = samples.len() as f64 / bins as f64;
    counts
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum()
}

/// Random micro-network parameters with every tensor (including biases and
/// the output layer) nonzero, so every gradient path is exercised.
pub fn random_params(arch: &Architecture, rng: &mut Stream) -> Vec<Vec<f64>> {
    arch.tensor_specs()
        .iter()
        .map(|s| (0..s.len()).map(|_| rng.next_range(-0.6, 0.6)).collect())
        .collect()
}

pub fn network_loss(
    arch: &Architecture,
    params: &[Vec<f64>],
    input: &[f64],
    kind: LossKind,
    target: u8,
) -> f64 {
    let mut ws = Workspace::new(arch);
    let z = forward(arch, params, input, &mut ws);
    loss_and_logit_grad(kind, z, target, LossParams::default()).0
}

/// Relative error between the analytic parameter gradient of one
/// forward/backward pass and central finite differences with step `h`.
/// Measured as `|g_a - g_fd| / max(|g_a|, |g_fd|, floor)` over the whole
/// gradient vector.
pub fn network_gradient_error(
    arch: &Architecture,
    params: &[Vec<f64>],
    input: &[f64],
    kind: LossKind,
    target: u8,
    h: f64,
) -> f64 {
    let mut ws = Workspace::new(arch);
    let z = forward(arch, params, input, &mut ws);
    let (_, dz) = loss_and_logit_grad(kind, z, target, LossParams::default());
    let mut grads = arch.zeros::<f64>();
    backward(arch, params, &mut ws, dz, &mut grads);

    let mut p = params.to_vec();
    let (mut diff, mut na, mut nf) = (0.0f64, 0.0f64, 0.0f64);
    for t in 0..p.len() {
        for i in 0..p[t].len() {
            let orig = p[t][i];
            p[t][i] = orig + h;
            let up = network_loss(arch, &p, input, kind, target);
            p[t][i] = orig - h;
            let down = network_loss(arch, &p, input, kind, target);
            p[t][i] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = grads[t][i];
            diff += (a - fd).powi(2);
            na += a * a;
            nf += fd * fd;
        }
    }
    diff.sqrt() / na.sqrt().max(nf.sqrt()).max(1e-8)
}

/// Classifier returning a fixed probability for windows containing a
/// marker pixel (value 255 in the red channel) and `background` otherwise.
pub struct MarkerClassifier {
    pub input_size: usize,
    pub marked: f64,
    pub background: f64,
}

impl PatchClassifier for MarkerClassifier {
    fn input_size(&self) -> usize {
        self.input_size
    }

    fn predict_proba(&self, patch: &Raster) -> Result<f64, ModelError> {
        let marked = patch
            .data()
            .chunks_exact(patch.channels())
            .any(|px| px[0] == 255);
        Ok(if marked { self.marked } else { self.background })
    }
}

/// RGB patch of side `t` filled with soil, optionally carrying a dark round
/// lesion in the middle.
pub fn toy_patch(t: usize, diseased: bool, rng: &mut Stream) -> Raster {
    let r = t as f64 * 0.3;
    let c = (t as f64 - 1.0) / 2.0;
    Raster::from_fn(t, t, 3, |x, y| {
        let noise = (rng.next_unit() * 30.0) as u8;
        let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
        if diseased && d < r {
            [60 + noise / 3, 35 + noise / 3, 20]
        } else {
            [70 + noise, 150 + noise, 60 + noise]
        }
    })
}

/// Balanced, trivially separable patch set of `n` toy patches.
pub fn toy_patchset(n: usize, t: usize, seed: u64) -> PatchSet {
    let mut rng = Stream::new(seed, 99);
    let patches = (0..n)
        .map(|i| {
            let diseased = i % 2 == 0;
            LabeledPatch {
                pixels: toy_patch(t, diseased, &mut rng),
                label: if diseased {
                    Label::LateBlight
                } else {
                    Label::Healthy
                },
                spec: PatchSpec {
                    source_image_id: format!("toy_{:02}", i / 10),
                    theta: 0.0,
                    t,
                    top_left: (0, 0),
                },
                symptom_pixel_count: if diseased { 1 } else { 0 },
            }
        })
        .collect();
    PatchSet {
        config: SamplerConfig::new(n, seed),
        dataset_digest: "toy".into(),
        patches,
    }
}
