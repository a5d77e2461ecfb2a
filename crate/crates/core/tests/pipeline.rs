//! File round-trips and training workflows across module boundaries.

use std::fs::File;

use dnmf_core::data::catalog::{load_catalog, CatalogFormat};
use dnmf_core::data::synth::{generate_synthetic, Noise, SynthConfig};
use dnmf_core::matrix::mse_columns;
use dnmf_core::mu::{factorize, iterate_h, MuConfig};
use dnmf_core::net::{infer, UnrolledModel};
use dnmf_core::nnls::NnlsConfig;
use dnmf_core::train::{load_checkpoint, save_checkpoint, train_supervised, train_unsupervised, AdamState, TrainConfig};
use dnmf_core::{NonNegMatrix, RegParams};

#[test]
fn catalog_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cat = generate_synthetic(&SynthConfig::new(4, 30, 11).with_noise(Noise::Poisson)).unwrap();
    let (v, w, h) = (dir.path().join("V.csv"), dir.path().join("W.csv"), dir.path().join("H.csv"));
    cat.write_counts(File::create(&v).unwrap()).unwrap();
    cat.write_truth_w(File::create(&w).unwrap()).unwrap();
    cat.write_truth_h(File::create(&h).unwrap()).unwrap();
    let format = CatalogFormat {
        mutation_catalog: true,
        truth_w: Some(w),
        truth_h: Some(h),
    };
    let back = load_catalog(&v, &format).unwrap();
    assert_eq!(back.counts, cat.counts);
    assert_eq!(back.truth_w, cat.truth_w);
    assert_eq!(back.truth_h, cat.truth_h);
    assert_eq!(back.labels, cat.labels);
    assert_eq!(back.sample_ids, cat.sample_ids);
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cat = generate_synthetic(&SynthConfig::new(3, 40, 2)).unwrap();
    let truth = cat.truth_h.clone().unwrap();
    let cfg = |epochs| TrainConfig {
        epochs,
        ..Default::default()
    };
    let init = UnrolledModel::supervised_init(96, 3, 4).unwrap();

    let mut adam = AdamState::default();
    let (straight, _) = train_supervised(&cat.counts, &truth, init.clone(), &cfg(6), &mut adam).unwrap();

    let mut adam = AdamState::default();
    let (half, _) = train_supervised(&cat.counts, &truth, init, &cfg(3), &mut adam).unwrap();
    let path = dir.path().join("ckpt.json");
    save_checkpoint(&path, &half, &adam).unwrap();
    let (model, mut adam) = load_checkpoint(&path).unwrap();
    let (resumed, _) = train_supervised(&cat.counts, &truth, model, &cfg(3), &mut adam).unwrap();

    assert_eq!(resumed, straight);
}

#[test]
fn saved_model_reproduces_inference() {
    let dir = tempfile::tempdir().unwrap();
    let cat = generate_synthetic(&SynthConfig::new(3, 25, 4)).unwrap();
    let model = UnrolledModel::unsupervised_init(96, 3, 5, 0.5).unwrap();
    let fit = train_unsupervised(&cat.counts, model, &TrainConfig { epochs: 5, ..Default::default() }, &mut AdamState::default(), &NnlsConfig::default()).unwrap();
    let path = dir.path().join("model.json");
    fit.model.save(&path).unwrap();
    let loaded = UnrolledModel::load(&path).unwrap();
    assert_eq!(infer(&loaded, &cat.counts).unwrap(), infer(&fit.model, &cat.counts).unwrap());
}

#[test]
fn network_seeded_with_mu_dictionary_reproduces_mu_inference() {
    let cat = generate_synthetic(&SynthConfig::new(3, 30, 6)).unwrap();
    let fit = factorize(&cat.counts, 3, &MuConfig::training()).unwrap();
    let model = UnrolledModel::from_dictionary(&fit.w, 50, RegParams::NONE, 1.0).unwrap();
    let h0 = NonNegMatrix::filled(3, 30, 1.0).unwrap();
    let mu = iterate_h(&cat.counts, &fit.w, &h0, RegParams::NONE, 50).unwrap();
    let net = infer(&model, &cat.counts).unwrap();
    assert!(mse_columns(&net, &mu).unwrap() < 1e-20);
}

#[test]
fn supervised_training_beats_its_initialization() {
    let cat = generate_synthetic(&SynthConfig::new(3, 60, 8)).unwrap();
    let truth = cat.truth_h.clone().unwrap();
    let init = UnrolledModel::supervised_init(96, 3, 10).unwrap();
    let before = mse_columns(&infer(&init, &cat.counts).unwrap(), &truth).unwrap();
    let (model, trace) = train_supervised(&cat.counts, &truth, init, &TrainConfig { epochs: 50, ..Default::default() }, &mut AdamState::default()).unwrap();
    let after = mse_columns(&infer(&model, &cat.counts).unwrap(), &truth).unwrap();
    assert_eq!(trace.epochs(), 50);
    assert!(after < before, "{after} vs {before}");
    assert!(trace.loss.last() < trace.loss.first());
}
