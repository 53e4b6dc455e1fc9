use std::fs;

use fnr_core::checkpoint::Checkpoint;
use fnr_core::config::{Precision, RunConfig};
use fnr_core::data::{gen_synthetic_clusters, save_dataset, Dataset, Encoding, SyntheticKind};
use fnr_core::metrics::{parse_roc_csv, trapezoid_area};
use fnr_core::model::Mode;
use fnr_core::train::{self, evaluate_checkpoint, run_ablation, PreparedData, Trainer};
use fnr_core::FnrError;

fn small(kind: SyntheticKind) -> RunConfig {
    RunConfig {
        synthetic: Some(kind),
        synthetic_n: 400,
        synthetic_d: 8,
        k: 8,
        hidden: 8,
        batch_size: 64,
        max_epochs: 12,
        ..RunConfig::default()
    }
}

#[test]
fn evaluating_the_checkpoint_reproduces_the_final_report() {
    for precision in [Precision::Standard, Precision::Extended] {
        let cfg = RunConfig {
            precision,
            ..small(SyntheticKind::Clusters)
        };
        let data = PreparedData::from_config(&cfg).unwrap();
        let outcome = train::train_on(&cfg, &data).unwrap();
        assert_eq!(outcome.checkpoint.precision, precision);
        let again = evaluate_checkpoint(&outcome.checkpoint, &data.test).unwrap();
        assert_eq!(again, outcome.test_report);
    }
}

#[test]
fn run_directory_contents() {
    let cfg = small(SyntheticKind::Clusters);
    let outcome = train::train(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    train::write_run(dir.path(), &cfg, &outcome).unwrap();

    let echoed = RunConfig::from_file(dir.path().join("config.toml")).unwrap();
    assert_eq!(echoed, cfg);

    let log = fs::read_to_string(dir.path().join("loss_log.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), outcome.history.len());
    for key in [
        "epoch",
        "l_t",
        "l_i",
        "l_s",
        "l_c",
        "total",
        "val_total",
        "lr_factor",
    ] {
        assert!(lines[0].get(key).is_some(), "{key}");
    }

    let ck = Checkpoint::load(dir.path().join("checkpoint.fnr")).unwrap();
    assert_eq!(ck, outcome.checkpoint);

    let roc = parse_roc_csv(&fs::read_to_string(dir.path().join("roc.csv")).unwrap()).unwrap();
    assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
    assert_eq!(
        (roc.last().unwrap().fpr, roc.last().unwrap().tpr),
        (1.0, 1.0)
    );
    assert!((trapezoid_area(&roc) - outcome.test_report.auc).abs() < 1e-9);

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(
        report["accuracy"].as_f64().unwrap(),
        outcome.test_report.accuracy
    );
}

#[test]
fn best_snapshot_is_the_validation_minimum() {
    let cfg = small(SyntheticKind::Clusters);
    let outcome = train::train(&cfg).unwrap();
    let best = outcome
        .history
        .iter()
        .min_by(|a, b| a.val_total.total_cmp(&b.val_total))
        .unwrap();
    assert_eq!(outcome.best_epoch(), best.epoch);
}

#[test]
fn resume_continues_the_epoch_count() {
    let cfg = RunConfig {
        max_epochs: 4,
        ..small(SyntheticKind::Clusters)
    };
    let first = train::train(&cfg).unwrap();
    let resumed_cfg = RunConfig {
        max_epochs: 7,
        ..cfg
    };
    let resumed = train::resume(&resumed_cfg, &first.checkpoint).unwrap();
    let epochs: Vec<usize> = resumed.history.iter().map(|r| r.epoch).collect();
    let start = first.checkpoint.epoch + 1;
    assert_eq!(epochs, (start..=7).collect::<Vec<_>>());

    let mut no_state = first.checkpoint.clone();
    no_state.optimizer = None;
    assert!(matches!(
        train::resume(&resumed_cfg, &no_state),
        Err(FnrError::Data(_))
    ));
}

#[test]
fn divergence_aborts_with_epoch_and_step() {
    let cfg = RunConfig {
        classifier_lr: 1e37,
        projector_lr: 1e37,
        ..small(SyntheticKind::Clusters)
    };
    match train::train(&cfg) {
        Err(FnrError::Numeric(msg)) => assert!(msg.starts_with("epoch 1 step "), "{msg}"),
        other => panic!("expected a numeric failure, got {other:?}"),
    }
}

#[test]
fn manifest_dataset_matches_generated_dataset() {
    let cfg = small(SyntheticKind::Clusters);
    let records = gen_synthetic_clusters(
        cfg.synthetic_n,
        cfg.synthetic_d,
        cfg.data_seed,
        cfg.synthetic_separation,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_dataset(
        dir.path(),
        &Dataset::from_records("clusters", records).unwrap(),
        Encoding::Binary,
    )
    .unwrap();
    let from_file = RunConfig {
        synthetic: None,
        dataset: Some(manifest),
        ..cfg.clone()
    };
    let a = train::train(&cfg).unwrap();
    let b = train::train(&from_file).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.test_report, b.test_report);
}

#[test]
fn ablation_table_has_one_row_per_mode() {
    let cfg = RunConfig {
        max_epochs: 3,
        ..small(SyntheticKind::Xor)
    };
    let dir = tempfile::tempdir().unwrap();
    let table = run_ablation(&cfg, Some(dir.path())).unwrap();
    let modes: Vec<Mode> = table.rows.iter().map(|r| r.mode).collect();
    assert_eq!(modes, Mode::ALL.to_vec());
    for m in Mode::ALL {
        assert!(dir.path().join(m.as_str()).join("report.json").exists());
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ablation.json")).unwrap())
            .unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 4);
    assert!(fs::read_to_string(dir.path().join("ablation.txt"))
        .unwrap()
        .contains("fused_ws"));
}

#[test]
fn trainer_steps_one_epoch_at_a_time() {
    let cfg = small(SyntheticKind::Clusters);
    let data = PreparedData::from_config(&cfg).unwrap();
    let mut t = Trainer::<f32>::new(&cfg, &data).unwrap();
    let before = t.params().clone();
    let rec = t.run_epoch(&data).unwrap();
    assert_eq!(rec.epoch, 1);
    assert_ne!(t.params(), &before);
    // ceil(n_train / 64) optimizer steps, trailing singletons merged.
    let steps = t.state().adam.step_count() as usize;
    assert!(steps == data.train.len().div_ceil(64) || steps == data.train.len() / 64);
}
