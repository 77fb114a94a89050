//! Cross-module pipeline checks: convergence on the noiseless oracle,
//! checkpoint reuse, and finetuning on the pretraining distribution.

use archperf::data::vocabulary_for;
use archperf::dgsa::DgsaConfig;
use archperf::embed::{EncoderKind, EncoderSpec};
use archperf::graph::OpRegistry;
use archperf::model::{Model, TaskKind};
use archperf::synth::{default_families, default_platforms, generate_synthetic, OracleConfig};
use archperf::tensor::AdamHyper;
use archperf::train::{evaluate, finetune, train, TrainConfig};

struct Pipeline {
    registry: OpRegistry,
    train_ds: archperf::data::Dataset,
    model: Model,
}

fn converged_pipeline(noise_sigma: f64, n_samples: usize, epochs: usize) -> Pipeline {
    let registry = OpRegistry::standard();
    let platforms = default_platforms();
    let families = default_families();
    let train_ds = generate_synthetic(
        &OracleConfig::standard(noise_sigma, 501),
        &platforms,
        n_samples,
        &families,
        TaskKind::Latency,
        &registry,
    )
    .unwrap();
    let vocab = vocabulary_for(&train_ds, &platforms, &registry).unwrap();
    let dgsa = DgsaConfig { d_model: 32, ..Default::default() };
    let mut model = Model::new(
        dgsa,
        EncoderSpec::new(EncoderKind::HashDeterministic, 32),
        vocab,
        TaskKind::Latency,
        77,
    )
    .unwrap();
    let cfg = TrainConfig { epochs, batch_size: 32, seed: 77, ..Default::default() };
    train(&mut model, &train_ds, None, &registry, &cfg).unwrap();
    Pipeline { registry, train_ds, model }
}

#[test]
fn converged_noiseless_run_scores_high_on_its_train_set() {
    let p = converged_pipeline(0.0, 400, 40);
    let report = evaluate(&p.model, &p.train_ds, &p.registry, 1, None).unwrap();
    assert!(
        report.acc_at_10_pct >= 95.0,
        "converged run should fit its train set: Acc10 {:.2}%, MAPE {:.2}%",
        report.acc_at_10_pct,
        report.mape_pct
    );
}

#[test]
fn checkpoint_reuse_reproduces_pretraining_metrics() {
    let p = converged_pipeline(0.05, 160, 6);
    let before = evaluate(&p.model, &p.train_ds, &p.registry, 1, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pretrained.ckpt.json");
    p.model.save(&path).unwrap();
    let reloaded = Model::load(&path).unwrap();
    let after = evaluate(&reloaded, &p.train_ds, &p.registry, 1, None).unwrap();
    assert_eq!(before.mape_pct.to_bits(), after.mape_pct.to_bits());
    assert_eq!(before.acc_at_10_pct.to_bits(), after.acc_at_10_pct.to_bits());
    assert_eq!(before.kendall_tau.to_bits(), after.kendall_tau.to_bits());
}

#[test]
fn finetuning_on_the_pretrain_distribution_does_not_degrade() {
    let p = converged_pipeline(0.05, 240, 10);
    let registry = p.registry;
    let before = evaluate(&p.model, &p.train_ds, &registry, 1, None).unwrap();

    // Fresh samples from the same distribution.
    let tune_ds = generate_synthetic(
        &OracleConfig::standard(0.05, 502),
        &default_platforms(),
        160,
        &default_families(),
        TaskKind::Latency,
        &registry,
    )
    .unwrap();
    let mut model = p.model;
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 32,
        seed: 78,
        hyper: AdamHyper { lr: 1e-4, ..AdamHyper::default() },
        ..Default::default()
    };
    finetune(&mut model, &tune_ds, None, &registry, &cfg).unwrap();
    let after = evaluate(&model, &p.train_ds, &registry, 1, None).unwrap();
    assert!(
        after.mape_pct <= before.mape_pct * 1.10,
        "finetuning on the same distribution degraded MAPE {:.2}% -> {:.2}%",
        before.mape_pct,
        after.mape_pct
    );
}
