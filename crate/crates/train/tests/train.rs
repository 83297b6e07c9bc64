mod common;

use tsg_core::TsgModel;
use tsg_oracle::miou as oracle_miou;
use tsg_segbench::{generate_dataset, GenConfig, IGNORE_INDEX};
use tsg_train::train::{
    load_data, metrics_csv, MetricsRow, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE,
    METRICS_HEADER, NORMS_FILE,
};
use tsg_train::{evaluate, train, train_on, RunConfig, TrainError};

#[test]
fn zero_lr_freezes_every_parameter() {
    let cfg = RunConfig {
        lr: 0.0,
        ..common::tiny()
    };
    let fresh = TsgModel::<f32>::new(cfg.model_config().unwrap(), cfg.seed).unwrap();
    let out = train::<f32>(&cfg, None).unwrap();
    for (a, b) in fresh.store.params().iter().zip(out.model.store.params()) {
        let x: Vec<u32> = a.tensor.to_vec().iter().map(|v| v.to_bits()).collect();
        let y: Vec<u32> = b.tensor.to_vec().iter().map(|v| v.to_bits()).collect();
        assert_eq!(x, y, "{}", a.name);
    }
}

#[test]
fn equal_seeds_give_identical_artifacts() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let cfg = common::tiny_f64();
    for d in &dirs {
        train::<f64>(&cfg, Some(d.path())).unwrap();
    }
    for f in [METRICS_FILE, CHECKPOINT_FILE, CONFIG_FILE] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let other = RunConfig {
        seed: 9,
        ..cfg
    };
    let d = tempfile::tempdir().unwrap();
    train::<f64>(&other, Some(d.path())).unwrap();
    assert_ne!(
        std::fs::read(d.path().join(CHECKPOINT_FILE)).unwrap(),
        std::fs::read(dirs[0].path().join(CHECKPOINT_FILE)).unwrap()
    );
}

#[test]
fn run_writes_resolved_config_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        steps: 7,
        ..common::tiny()
    };
    let out = train::<f32>(&cfg, Some(dir.path())).unwrap();
    let resolved = std::fs::read_to_string(dir.path().join(CONFIG_FILE)).unwrap();
    assert_eq!(RunConfig::from_text(&resolved).unwrap(), cfg);

    let metrics = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    // Rows at steps 3, 6 and the final step 7.
    let steps: Vec<usize> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(steps, [3, 6, 7]);
    for l in &lines[1..] {
        let cols: Vec<&str> = l.split(',').collect();
        assert_eq!(cols.len(), 4);
        cols.iter().for_each(|c| assert!(c.parse::<f64>().is_ok(), "{l}"));
    }
    assert_eq!(out.metrics.len(), 3);
    assert_eq!(out.losses.len(), 7);
}

#[test]
fn metrics_rows_use_fixed_formatting() {
    let rows = [
        MetricsRow { step: 10, lr: 1e-3, loss: 0.5, miou: Some(0.25) },
        MetricsRow { step: 20, lr: 0.0, loss: 0.125, miou: None },
    ];
    assert_eq!(
        metrics_csv(&rows),
        "step,lr,loss,mIoU\n10,1.000000e-3,0.500000,0.250000\n20,0.000000e0,0.125000,nan\n"
    );
}

#[test]
fn loss_goes_down_on_a_tiny_run() {
    let cfg = RunConfig {
        steps: 40,
        lr: 3e-3,
        train_samples: 2,
        ..common::tiny()
    };
    let out = train::<f32>(&cfg, None).unwrap();
    let head: f64 = out.losses[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = out.losses[35..].iter().sum::<f64>() / 5.0;
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn diverging_run_aborts_with_a_norm_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        lr: 1e300,
        steps: 5,
        precision: tsg_train::Precision::F64,
        ..common::tiny()
    };
    match train::<f64>(&cfg, Some(dir.path())) {
        Err(TrainError::NonFiniteLoss { step, samples, dump }) => {
            assert!(step > 0);
            assert_eq!(samples.len(), cfg.batch_size);
            assert_eq!(dump, dir.path().join(NORMS_FILE));
            let text = std::fs::read_to_string(dump).unwrap();
            assert!(text.starts_with("name,numel,l2_norm,finite\n"));
            assert!(text.contains("decoder.queries"));
        }
        other => panic!("expected a non-finite loss, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn untrained_model_scores_like_the_all_background_predictor() {
    let cfg = common::tiny();
    let (_, val) = load_data(&cfg).unwrap();
    let model = TsgModel::<f32>::new(cfg.model_config().unwrap(), 0).unwrap();
    let report = evaluate(&model, &val).unwrap();
    let gt: Vec<usize> = val.iter().flat_map(|s| s.label_vec()).collect();
    let (_, expected) = oracle_miou(&vec![0; gt.len()], &gt, cfg.classes, IGNORE_INDEX);
    assert_eq!(report.miou, Some(expected));
}

#[test]
fn evaluation_rejects_empty_and_mismatched_data() {
    let cfg = common::tiny();
    let model = TsgModel::<f32>::new(cfg.model_config().unwrap(), 0).unwrap();
    assert!(matches!(evaluate(&model, &[]), Err(TrainError::EmptyDataset)));
    let gen = GenConfig {
        classes: 4,
        ..cfg.gen_config()
    };
    let data = generate_dataset(0, 1, &gen).unwrap();
    assert!(matches!(
        evaluate(&model, &data),
        Err(TrainError::ClassMismatch { data: 4, model: 3 })
    ));
    let gen = GenConfig {
        height: 32,
        width: 32,
        ..cfg.gen_config()
    };
    let data = generate_dataset(0, 1, &gen).unwrap();
    assert!(matches!(
        evaluate(&model, &data),
        Err(TrainError::ImageSizeMismatch { .. })
    ));
    let (train_set, _) = load_data(&cfg).unwrap();
    assert!(matches!(
        train_on::<f32>(&cfg, &train_set, &[], None),
        Err(TrainError::EmptyDataset)
    ));
}

#[test]
fn zero_val_samples_evaluates_on_training_data() {
    let cfg = RunConfig {
        val_samples: 0,
        ..common::tiny()
    };
    let (train_set, val) = load_data(&cfg).unwrap();
    assert_eq!(train_set, val);
    let cfg = common::tiny();
    let (train_set, val) = load_data(&cfg).unwrap();
    assert_eq!(val.len(), 2);
    assert_ne!(train_set[0], val[0]);
}

#[test]
fn report_csv_lists_every_metric() {
    let cfg = common::tiny();
    let (_, val) = load_data(&cfg).unwrap();
    let model = TsgModel::<f32>::new(cfg.model_config().unwrap(), 0).unwrap();
    let csv = evaluate(&model, &val).unwrap().to_csv();
    let keys: Vec<&str> = csv.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        keys,
        [
            "metric", "mIoU", "pixel_accuracy", "patch_accuracy", "patch_mIoU", "small_IoU",
            "medium_IoU", "large_IoU", "IoU_class0", "IoU_class1", "IoU_class2"
        ]
    );
}
