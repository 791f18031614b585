use std::collections::BTreeSet;

use proptest::prelude::*;
use ubert::data::{build_vocab, generate_synthetic, DatasetRecord, SyntheticSpec};
use ubert::eval::{evaluate, span_f1, GoldScorer, TaskMetrics};
use ubert::model::{ModelConfig, UbertModel};
use ubert::schema::TaskKind;
use ubert::train::{train, TrainConfig, TrainError};

fn corpus(task: TaskKind, n: usize, seed: u64) -> Vec<DatasetRecord> {
    generate_synthetic(&SyntheticSpec {
        task,
        vocab_size: 60,
        num_records: n,
        max_text_len: 12,
        num_categories: 3,
        seed,
    })
    .unwrap()
}

fn small_model(records: &[DatasetRecord]) -> UbertModel {
    let config = ModelConfig {
        hidden_dim: 16,
        ffn_dim: 32,
        ..ModelConfig::default()
    };
    UbertModel::new(config, build_vocab(records).unwrap()).unwrap()
}

fn bits(m: &UbertModel) -> Vec<u64> {
    m.params().iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn zero_learning_rate_is_identity() {
    let records = corpus(TaskKind::Ner, 10, 1);
    for optimizer in [ubert::train::Optimizer::Sgd, ubert::train::Optimizer::default()] {
        let mut m = small_model(&records);
        let before = bits(&m);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            optimizer,
            ..TrainConfig::default()
        };
        train(&mut m, &records, &cfg).unwrap();
        assert_eq!(before, bits(&m));
    }
}

#[test]
fn single_unit_is_memorized() {
    let records = corpus(TaskKind::Ner, 1, 2);
    let mut m = UbertModel::new(ModelConfig::default(), build_vocab(&records).unwrap()).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let history = train(&mut m, &records, &cfg).unwrap();
    assert_eq!(history.len(), 200);
    assert!(history[199] < 0.01, "final loss {}", history[199]);
    assert!(history[199] < history[0]);
}

#[test]
fn same_seed_same_history() {
    let records = corpus(TaskKind::RelationExtraction, 12, 3);
    let cfg = TrainConfig {
        epochs: 3,
        batch_unit_size: 2,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = small_model(&records);
        let h = train(&mut m, &records, &cfg).unwrap();
        (h, bits(&m))
    };
    assert_eq!(run(), run());
}

#[test]
fn invalid_configs_are_rejected() {
    let records = corpus(TaskKind::Ner, 2, 4);
    let mut m = small_model(&records);
    for cfg in [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
        TrainConfig { batch_unit_size: 0, ..TrainConfig::default() },
        TrainConfig { threshold: 1.0, ..TrainConfig::default() },
    ] {
        assert!(matches!(train(&mut m, &records, &cfg), Err(TrainError::Config(_))));
    }
}

#[test]
fn gold_scores_reach_f1_one() {
    for (task, seed) in [
        (TaskKind::Classification, 5),
        (TaskKind::Ner, 6),
        (TaskKind::RelationExtraction, 7),
        (TaskKind::EventTrigger, 8),
    ] {
        let records = corpus(task, 40, seed);
        let report = evaluate(&GoldScorer::new(&records).unwrap(), &records, 0.5).unwrap();
        assert!(!report.tasks.is_empty());
        for (name, m) in &report.tasks {
            assert_eq!(m.f1, 1.0, "{name}");
        }
        if task == TaskKind::Classification {
            assert_eq!(report.classification_accuracy, Some(1.0));
        }
        if task == TaskKind::RelationExtraction {
            assert_eq!(report.relation_ambiguity_rate, Some(0.0));
        }
    }
}

#[test]
fn untrained_model_reports_bounded_metrics() {
    for (task, seed) in [(TaskKind::Ner, 9), (TaskKind::RelationExtraction, 10), (TaskKind::EventTrigger, 11)] {
        let records = corpus(task, 15, seed);
        let m = small_model(&records);
        let report = evaluate(&m, &records, 0.5).unwrap();
        for m in report.tasks.values() {
            for v in [m.precision, m.recall, m.f1] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        assert!(report.to_string().starts_with("records 15"));
    }
}

#[test]
fn f1_examples() {
    let s = |v: &[u8]| v.iter().copied().collect::<BTreeSet<u8>>();
    assert_eq!(span_f1(&s(&[1, 2]), &s(&[1, 2])), (1.0, 1.0, 1.0));
    assert_eq!(span_f1(&s(&[]), &s(&[1])), (0.0, 0.0, 0.0));
    assert_eq!(span_f1(&s(&[1, 2]), &s(&[2, 3])), (0.5, 0.5, 0.5));
    assert_eq!(TaskMetrics::from_counts(0, 0, 0).f1, 0.0);
}

proptest! {
    #[test]
    fn f1_bounds_and_symmetry(pred in proptest::collection::btree_set(0u8..12, 0..8), gold in proptest::collection::btree_set(0u8..12, 0..8)) {
        let (p, r, f) = span_f1(&pred, &gold);
        for v in [p, r, f] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let (p2, r2, f2) = span_f1(&gold, &pred);
        prop_assert_eq!((p, r), (r2, p2));
        prop_assert!((f - f2).abs() < 1e-15);
        if p + r > 0.0 {
            prop_assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-12);
        }
    }
}
