mod common;

use common::*;
use lsir::config::Ablation;
use lsir::mimic::MimicVariant;
use lsir::model::{objective, ModelData};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const VARIANTS: [MimicVariant; 3] = [
    MimicVariant::InactiveMixture,
    MimicVariant::RandomMask,
    MimicVariant::DistributionShift,
];

#[test]
fn finite_differences_match_every_configuration() {
    let t = toy(true, 3);
    let data = ModelData::new(&t.train, &t.social, &t.labels, &t.clusters).unwrap();
    let batch = full_batch(&t.train, 5);
    for ablation in Ablation::ALL {
        for variant in VARIANTS {
            let cfg = toy_config(ablation, variant);
            let params = toy_params(&cfg, &t, 11);
            let (groups, _) = finite_difference_check(&cfg, &params, &data, &batch, 1e-5);
            for g in groups {
                assert!(
                    g.rel_err <= 1e-4,
                    "{ablation}/{variant:?} {}: {:.3e}",
                    g.name,
                    g.rel_err
                );
            }
        }
    }
}

#[test]
fn identity_user_features_and_more_iterations() {
    let t = toy(false, 8);
    let data = ModelData::new(&t.train, &t.social, &t.labels, &t.clusters).unwrap();
    let batch = full_batch(&t.train, 1);
    let cfg = lsir::config::TrainConfig {
        iterations: 2,
        standard_infonce: true,
        ..toy_config(Ablation::Full, MimicVariant::InactiveMixture)
    };
    let params = toy_params(&cfg, &t, 2);
    let (groups, _) = finite_difference_check(&cfg, &params, &data, &batch, 1e-5);
    for g in groups {
        assert!(g.rel_err <= 1e-4, "{}: {:.3e}", g.name, g.rel_err);
    }
}

#[test]
fn split_step_gradients_add_up_to_the_total() {
    let t = toy(true, 4);
    let data = ModelData::new(&t.train, &t.social, &t.labels, &t.clusters).unwrap();
    let batch = full_batch(&t.train, 2);
    let cfg = toy_config(Ablation::Full, MimicVariant::InactiveMixture);
    let params = toy_params(&cfg, &t, 6);
    let joint = objective(&cfg, &params, &data, &batch, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let split_cfg = lsir::config::TrainConfig {
        mimic_lr: Some(1e-2),
        ..cfg.clone()
    };
    let split = objective(
        &split_cfg,
        &params,
        &data,
        &batch,
        Some(&joint.frozen),
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    let mimic = split.mimic_grads.expect("separate mimic gradients");
    assert!(joint.mimic_grads.is_none());
    for ((a, b), c) in joint.grads.iter().zip(&split.grads).zip(&mimic) {
        let sum = b + c;
        for (x, y) in a.iter().zip(sum.iter()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }
}

#[test]
fn regulariser_gradient_is_two_lambda_theta() {
    let t = toy(true, 9);
    let data = ModelData::new(&t.train, &t.social, &t.labels, &t.clusters).unwrap();
    let batch = full_batch(&t.train, 3);
    let base = toy_config(Ablation::NoMimic, MimicVariant::InactiveMixture);
    let params = toy_params(&base, &t, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let without = lsir::config::TrainConfig {
        lambda: 0.0,
        ..base.clone()
    };
    let g0 = objective(&without, &params, &data, &batch, None, &mut rng).unwrap();
    let with = lsir::config::TrainConfig {
        lambda: 0.3,
        ..base
    };
    let g1 = objective(&with, &params, &data, &batch, Some(&g0.frozen), &mut rng).unwrap();
    for ((a, b), (_, theta)) in g0.grads.iter().zip(&g1.grads).zip(params.tensors()) {
        let diff = b - a;
        for (d, th) in diff.iter().zip(theta.iter()) {
            assert!((d - 0.6 * th).abs() < 1e-12, "{d} vs {}", 0.6 * th);
        }
    }
}
