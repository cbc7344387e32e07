mod common;

use common::{network_gradient_error, random_params, toy_patchset};
use isd4l::model::loss::{
    cross_entropy, cross_entropy_grad, focal_loss, focal_loss_grad, loss_and_logit_grad, sigmoid,
    LossKind, LossParams,
};
use isd4l::model::network::Architecture;
use isd4l::model::{prepare_patchset, train, ModelState, PatchClassifier, TrainConfig};
use isd4l::rng::{Stream, UniformSource};

fn micro() -> Architecture {
    Architecture {
        input_size: 8,
        conv_channels: vec![3, 4],
        hidden: 5,
    }
}

fn toy_config(seed: u64) -> TrainConfig {
    TrainConfig {
        input_size: 16,
        epochs: 25,
        batch_size: 8,
        learning_rate: 3e-3,
        seed,
        conv_channels: vec![4, 8],
        hidden: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn focal_spot_value() {
    let p = LossParams::default();
    // -0.5 * ln(0.5) * 0.5^2
    let expected = 0.5 * std::f64::consts::LN_2 * 0.25;
    assert!((focal_loss(0.5, 1, p) - expected).abs() < 1e-12);
    assert!((focal_loss(0.5, 1, p) - 0.086643).abs() < 1e-6);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = Stream::new(8, 0);
    for i in 0..300 {
        let params = LossParams {
            alpha: rng.next_range(0.05, 0.95),
            gamma: [0.5, 1.0, 2.0][i % 3],
        };
        let c = (rng.next_unit() < 0.5) as u8;
        let p = rng.next_range(0.02, 0.98);
        let h = 1e-5;
        for (f, g) in [
            (
                &(|p: f64| focal_loss(p, c, params)) as &dyn Fn(f64) -> f64,
                focal_loss_grad(p, c, params),
            ),
            (&|p: f64| cross_entropy(p, c), cross_entropy_grad(p, c)),
        ] {
            let fd = (f(p + h) - f(p - h)) / (2.0 * h);
            assert!(
                (fd - g).abs() <= 1e-5 * fd.abs().max(g.abs()).max(1e-3),
                "p={p} c={c}: {g} vs {fd}"
            );
        }
        let z = rng.next_range(-8.0, 8.0);
        for kind in [LossKind::Focal, LossKind::CrossEntropy] {
            let (_, dz) = loss_and_logit_grad(kind, z, c, params);
            let l = |z: f64| loss_and_logit_grad(kind, z, c, params).0;
            let fd = (l(z + h) - l(z - h)) / (2.0 * h);
            assert!(
                (fd - dz).abs() <= 1e-5 * fd.abs().max(dz.abs()).max(1e-3),
                "z={z} c={c}: {dz} vs {fd}"
            );
            let p = sigmoid(z);
            assert!(p > 0.0 && p < 1.0);
        }
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    let arch = micro();
    let mut rng = Stream::new(2024, 0);
    for config in 0..60 {
        let params = random_params(&arch, &mut rng);
        let input: Vec<f64> = (0..3 * 64).map(|_| rng.next_unit()).collect();
        let kind = if config % 2 == 0 {
            LossKind::Focal
        } else {
            LossKind::CrossEntropy
        };
        let target = (config / 2 % 2) as u8;
        let err = network_gradient_error(&arch, &params, &input, kind, target, 1e-6);
        assert!(err < 1e-4, "config {config}: relative error {err}");
    }
}

#[test]
fn separable_patches_are_learned_exactly() {
    let set = toy_patchset(40, 24, 1);
    let cfg = toy_config(5);
    let model = train(&set, &cfg).unwrap();
    let losses = &model.metadata.epoch_losses;
    assert_eq!(losses.len(), cfg.epochs);
    assert!(losses.last().unwrap() < &losses[0]);
    let correct = set
        .patches
        .iter()
        .filter(|p| (model.predict_proba(&p.pixels).unwrap() >= 0.5) == (p.label.as_target() == 1))
        .count();
    assert_eq!(correct, 40);
}

#[test]
fn training_is_deterministic_in_the_seed() {
    let set = toy_patchset(16, 16, 2);
    let cfg = TrainConfig {
        epochs: 3,
        ..toy_config(9)
    };
    let a = train(&set, &cfg).unwrap();
    let b = train(&set, &cfg).unwrap();
    assert_eq!(a.weight_digest(), b.weight_digest());
    assert_eq!(a, b);
    let c = train(&set, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.weight_digest(), c.weight_digest());
}

#[test]
fn focal_and_cross_entropy_runs_differ() {
    let set = toy_patchset(16, 16, 3);
    let focal = train(
        &set,
        &TrainConfig {
            epochs: 3,
            ..toy_config(1)
        },
    )
    .unwrap();
    let ce = train(
        &set,
        &TrainConfig {
            epochs: 3,
            loss: LossKind::CrossEntropy,
            ..toy_config(1)
        },
    )
    .unwrap();
    assert_ne!(focal.metadata.epoch_losses, ce.metadata.epoch_losses);
    assert_ne!(focal.weight_digest(), ce.weight_digest());
}

#[test]
fn prepared_and_raw_prediction_agree() {
    let set = toy_patchset(6, 20, 4);
    let model = train(
        &set,
        &TrainConfig {
            epochs: 2,
            ..toy_config(2)
        },
    )
    .unwrap();
    let prepared = prepare_patchset(&set, 16).unwrap();
    for (p, s) in set.patches.iter().zip(&prepared) {
        assert_eq!(
            model.predict_proba(&p.pixels).unwrap(),
            model.predict_prepared(&s.input)
        );
    }
    let rasters: Vec<_> = set.patches.iter().map(|p| p.pixels.clone()).collect();
    let batch = model.predict_batch(&rasters).unwrap();
    for (b, p) in batch.iter().zip(&set.patches) {
        assert!((b - model.predict_proba(&p.pixels).unwrap()).abs() <= 1e-6);
    }
    let untrained = ModelState::initialized(model.architecture.clone(), 0).unwrap();
    assert_eq!(untrained.predict_prepared(&prepared[0].input), 0.5);
}

#[test]
fn reference_depth_gradients_match_finite_differences() {
    let arch = Architecture {
        input_size: 16,
        conv_channels: vec![3, 4, 4, 5],
        hidden: 4,
    };
    let mut rng = Stream::new(77, 0);
    for config in 0..6 {
        let params = random_params(&arch, &mut rng);
        let input: Vec<f64> = (0..3 * 256).map(|_| rng.next_unit()).collect();
        let kind = if config % 2 == 0 {
            LossKind::Focal
        } else {
            LossKind::CrossEntropy
        };
        let err =
            network_gradient_error(&arch, &params, &input, kind, (config % 3 == 0) as u8, 1e-6);
        assert!(err < 1e-4, "config {config}: relative error {err}");
    }
}
