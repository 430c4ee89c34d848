//! Training loop behaviour through the public API: reproducibility,
//! checkpoints on disk and segmentation quality at the toy settings.

use std::fs;

use mono2d::trainer::{
    mean_dice, run_experiment, split_dataset, train, ExperimentSpec, HeadModel, TrainConfig,
};
use mono2d::{ChannelMode, FilterBank, Mono2d};

fn small_spec(seed: u64) -> ExperimentSpec {
    let mut spec = ExperimentSpec::toy(seed);
    spec.shape = (32, 32);
    spec.train_count = 12;
    spec.test_count = 4;
    spec.train.epochs = 3;
    spec.train.n_scales = 3;
    spec
}

#[test]
fn same_seed_gives_identical_runs() {
    let spec = small_spec(9);
    let a = run_experiment(&spec).unwrap();
    let b = run_experiment(&spec).unwrap();
    assert_eq!(a.outcome.log, b.outcome.log);
    assert_eq!(a.outcome.model.bank(), b.outcome.model.bank());
    assert_eq!(a.outcome.model.head.params(), b.outcome.model.head.params());
    assert_eq!(a.report, b.report);

    let c = run_experiment(&small_spec(10)).unwrap();
    assert_ne!(a.outcome.model.bank(), c.outcome.model.bank());
}

#[test]
fn trained_model_survives_a_checkpoint_round_trip() {
    let spec = small_spec(4);
    let data = spec.training_set().unwrap();
    let outcome = train(&spec.train, &data).unwrap();
    let model = &outcome.model;

    let dir = tempfile::tempdir().unwrap();
    let bank_path = dir.path().join("bank.ckpt");
    let head_path = dir.path().join("head.ckpt");
    fs::write(&bank_path, model.bank().unwrap().to_checkpoint()).unwrap();
    fs::write(&head_path, model.head.to_checkpoint()).unwrap();

    let bank = FilterBank::from_checkpoint(&fs::read_to_string(&bank_path).unwrap()).unwrap();
    let head = HeadModel::from_checkpoint(&fs::read_to_string(&head_path).unwrap()).unwrap();
    assert_eq!(&bank, model.bank().unwrap());
    assert_eq!(head.params(), model.head.params());

    let layer = Mono2d::new(bank, spec.train.lowpass, ChannelMode::Both);
    let image = &spec.source_test_set().unwrap()[0].image;
    let restored = head
        .predict(layer.forward(image).unwrap().channels())
        .unwrap();
    assert_eq!(restored, model.predict(image).unwrap());
}

#[test]
fn lr_schedule_is_logged_per_epoch() {
    let config = TrainConfig {
        learning_rate: 0.02,
        min_lr: 2e-4,
        epochs: 4,
        n_scales: 2,
        ..TrainConfig::default()
    };
    let data = small_spec(1).training_set().unwrap();
    let outcome = train(&config, &data).unwrap();
    let lrs: Vec<f64> = outcome.log.iter().map(|r| r.lr).collect();
    assert_eq!(lrs.len(), 4);
    assert!((lrs[0] - 0.02).abs() < 1e-15);
    assert!(lrs.windows(2).all(|w| w[1] < w[0]));
    assert!(outcome
        .log
        .iter()
        .all(|r| r.train_loss.is_finite() && (0.0..=1.0).contains(&r.val_dice)));
}

/// Full toy run: the monogenic model segments the source domain well and
/// does not overfit its training split.
#[test]
fn toy_run_segments_source_domain() {
    let spec = ExperimentSpec::toy(0);
    let result = run_experiment(&spec).unwrap();
    assert!(
        result.report.source_dice >= 0.85,
        "source dice {}",
        result.report.source_dice
    );

    let data = spec.training_set().unwrap();
    let (train_split, val_split) = split_dataset(&data, spec.train.val_fraction);
    let train_dice = mean_dice(&result.outcome.model, train_split).unwrap();
    let val_dice = mean_dice(&result.outcome.model, val_split).unwrap();
    assert!((val_dice - result.outcome.best_val_dice).abs() < 1e-12);
    assert!(
        train_dice >= val_dice - 0.05,
        "train {train_dice} val {val_dice}"
    );
}
