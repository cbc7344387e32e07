use isd4l::dataset::{generate_synthetic, Label, SynthConfig};
use isd4l::evaluation::{run_loo, EvalError, LooConfig, LooReport};
use isd4l::model::TrainConfig;
use isd4l::predictor::CoverMode;
use isd4l::sampler::SamplerConfig;

fn tiny_dataset(images: usize, diseased: usize) -> isd4l::dataset::Dataset {
    generate_synthetic(&SynthConfig {
        image_count: images,
        diseased_count: diseased,
        rows: 100,
        cols: 150,
        blob_radius: (5, 9),
        texture_scale: 15.0,
        ..SynthConfig::default()
    })
    .unwrap()
    .dataset
}

fn tiny_config(rho: usize) -> LooConfig {
    LooConfig {
        sampler: SamplerConfig::new(rho, 3),
        train: TrainConfig {
            input_size: 16,
            epochs: 2,
            batch_size: 4,
            conv_channels: vec![4, 8],
            hidden: 6,
            ..TrainConfig::default()
        },
        window: 20,
        threshold: 0.8,
        cover: CoverMode::Lattice,
    }
}

#[test]
fn minimal_two_image_run() {
    let ds = tiny_dataset(2, 1);
    let run = run_loo(&ds, &tiny_config(1)).unwrap();
    let r = &run.report;
    assert_eq!(r.folds.len(), 2);
    for f in &r.folds {
        assert_eq!(f.train_patch_count, 1);
        assert_eq!(f.patches.len(), 1);
        assert_eq!(f.train_source_ids.len(), 1);
        assert_ne!(f.train_source_ids[0], f.held_out_image_id);
    }
    r.check_consistency().unwrap();
}

#[test]
fn folds_are_exhaustive_and_reports_are_consistent() {
    let ds = tiny_dataset(4, 2);
    let cfg = tiny_config(5);
    let run = run_loo(&ds, &cfg).unwrap();
    let r = &run.report;
    let held: Vec<&str> = r
        .folds
        .iter()
        .map(|f| f.held_out_image_id.as_str())
        .collect();
    let ids: Vec<&str> = ds.images().iter().map(|i| i.id.as_str()).collect();
    assert_eq!(held, ids);
    for f in &r.folds {
        assert_eq!(f.patches.len(), 5);
        assert_eq!(f.train_patch_count, 15);
        for p in &f.patches {
            assert_eq!(
                run.patchset.patches[p.patch_index].spec.source_image_id,
                f.held_out_image_id
            );
        }
    }
    let c = r.confusion;
    assert_eq!(c.true_positive + c.false_negative, ds.diseased_count());
    assert_eq!(c.true_negative + c.false_positive, ds.healthy_count());
    r.check_consistency().unwrap();

    let back = LooReport::from_json(&r.to_json()).unwrap();
    assert_eq!(&back, r);
    assert_eq!(back.digest(), r.digest());
    assert!(r.to_text().contains("Mean accuracy"));

    let again = run_loo(&ds, &cfg).unwrap();
    assert_eq!(again.report.digest(), r.digest());
    let pooled = rayon::ThreadPoolBuilder::new()
        .num_threads(2)
        .build()
        .unwrap()
        .install(|| run_loo(&ds, &cfg).unwrap());
    assert_eq!(pooled.report.digest(), r.digest());
}

#[test]
fn tampered_reports_fail_the_consistency_check() {
    let ds = tiny_dataset(2, 1);
    let mut report = run_loo(&ds, &tiny_config(3)).unwrap().report;
    report.folds[0].image_verdict = match report.folds[0].image_verdict {
        Label::Healthy => Label::LateBlight,
        Label::LateBlight => Label::Healthy,
    };
    assert!(report.check_consistency().is_err());
}

#[test]
fn single_class_datasets_are_rejected() {
    let ds = tiny_dataset(3, 0);
    assert!(matches!(
        run_loo(&ds, &tiny_config(2)),
        Err(EvalError::InsufficientData {
            healthy: 3,
            diseased: 0
        })
    ));
}
