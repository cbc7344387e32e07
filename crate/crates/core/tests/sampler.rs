mod common;

use std::f64::consts::PI;

use common::{chi_square_uniform, square_inside_hull};
use isd4l::dataset::{generate_synthetic, Label, SynthConfig};
use isd4l::geometry::{max_inscribed_rect, sample_in_frame, Interpolation, RotatedFrame};
use isd4l::raster::Raster;
use isd4l::rng::Stream;
use isd4l::sampler::{
    draw_patch_spec, extract_mask_patch, generate_patchset, SamplerConfig, ZoomRange,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn small_synth() -> SynthConfig {
    SynthConfig {
        image_count: 4,
        diseased_count: 2,
        rows: 200,
        cols: 300,
        blob_radius: (6, 12),
        texture_scale: 20.0,
        ..SynthConfig::default()
    }
}

#[test]
fn draws_cover_the_stated_ranges() {
    let mut rng = Stream::new(11, 0);
    let n = 20_000;
    let mut thetas = Vec::with_capacity(n);
    let (mut t_lo, mut t_hi) = (usize::MAX, 0);
    for _ in 0..n {
        let spec = draw_patch_spec(&mut rng, "x", 4000, 6000, ZoomRange::default()).unwrap();
        assert!((600..=1000).contains(&spec.t), "{}", spec.t);
        t_lo = t_lo.min(spec.t);
        t_hi = t_hi.max(spec.t);
        thetas.push(spec.theta);
        let rect = max_inscribed_rect(6000, 4000, spec.theta).unwrap();
        assert!(square_inside_hull(
            &spec,
            (rect.width, rect.height),
            4000,
            6000
        ));
    }
    assert_eq!((t_lo, t_hi), (600, 1000));
    let stat = chi_square_uniform(&thetas, -PI, PI, 36);
    let p = 1.0 - ChiSquared::new(35.0).unwrap().cdf(stat);
    assert!(p > 0.001, "chi-square {stat}, p = {p}");
}

#[test]
fn padded_sentinel_never_leaks_into_patches() {
    let (w, h, pad) = (60usize, 40usize, 3usize);
    let padded = Raster::from_fn(w + 2 * pad, h + 2 * pad, 1, |x, y| {
        let inside = (pad..pad + w).contains(&x) && (pad..pad + h).contains(&y);
        if inside {
            [0, 0, 0]
        } else {
            [255, 255, 255]
        }
    });
    let mut rng = Stream::new(5, 1);
    for _ in 0..2_000 {
        let spec = draw_patch_spec(&mut rng, "s", h, w, ZoomRange::default()).unwrap();
        let frame = RotatedFrame::new(w, h, spec.theta).unwrap();
        for v in 0..spec.t {
            for u in 0..spec.t {
                let (sx, sy) =
                    frame.source_point((spec.top_left.0 + u) as f64, (spec.top_left.1 + v) as f64);
                let mut px = [0u8; 3];
                isd4l::geometry::sample_bilinear(
                    &padded,
                    sx + pad as f64,
                    sy + pad as f64,
                    &mut px,
                );
                assert_eq!(
                    px[0], 0,
                    "spec {spec:?} reads outside at ({u},{v}) -> ({sx},{sy})"
                );
            }
        }
    }
}

#[test]
fn labels_follow_the_transformed_mask() {
    let synth = generate_synthetic(&small_synth()).unwrap();
    let set = generate_patchset(&synth.dataset, SamplerConfig::new(25, 3)).unwrap();
    assert_eq!(set.len(), 100);
    assert!(set.positives() > 0);
    for p in &set.patches {
        let img = synth.dataset.get(&p.spec.source_image_id).unwrap();
        assert_eq!((p.pixels.width(), p.pixels.height()), (p.spec.t, p.spec.t));
        match &img.mask {
            Some(mask) if img.label == Label::LateBlight => {
                let m = extract_mask_patch(mask, &p.spec).unwrap();
                let symptoms = m.count_value(2);
                assert_eq!(p.symptom_pixel_count, symptoms);
                assert_eq!(p.label == Label::LateBlight, symptoms >= 1);
            }
            _ => assert_eq!(p.label, Label::Healthy),
        }
        let frame = RotatedFrame::new(img.cols(), img.rows(), p.spec.theta).unwrap();
        let again = sample_in_frame(
            &img.pixels,
            &frame,
            p.spec.top_left,
            p.spec.t,
            Interpolation::Bilinear,
        )
        .unwrap();
        assert_eq!(again, p.pixels);
    }
}

#[test]
fn patch_sets_are_deterministic_and_thread_independent() {
    let synth = generate_synthetic(&small_synth()).unwrap();
    let cfg = SamplerConfig::new(10, 21);
    let digest_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| generate_patchset(&synth.dataset, cfg).unwrap().digest())
    };
    let one = digest_with(1);
    assert_eq!(one, digest_with(3));
    assert_eq!(
        one,
        generate_patchset(&synth.dataset, cfg).unwrap().digest()
    );
    assert_ne!(
        one,
        generate_patchset(&synth.dataset, SamplerConfig::new(10, 22))
            .unwrap()
            .digest()
    );
}

#[test]
fn patch_count_is_rho_per_image() {
    let synth = generate_synthetic(&small_synth()).unwrap();
    for rho in [1, 7] {
        let set = generate_patchset(&synth.dataset, SamplerConfig::new(rho, 0)).unwrap();
        assert_eq!(set.len(), rho * synth.dataset.len());
        for img in synth.dataset.images() {
            assert_eq!(set.from_image(&img.id).count(), rho);
        }
    }
}
