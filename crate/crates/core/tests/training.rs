use magna_core::attention::DiffusionConfig;
use magna_core::net::NetworkConfig;
use magna_core::toy::{compositional_kg, separable_nodes};
use magna_core::trainer::{evaluate_kg, evaluate_node, train_kg, train_node_classifier, TrainConfig};
use magna_core::Split;

fn small_net() -> NetworkConfig {
    NetworkConfig {
        num_blocks: 2,
        model_dim: 8,
        heads: 2,
        relation_dim: 8,
        diffusion: DiffusionConfig::new(0.2, 3).unwrap(),
        ..NetworkConfig::default()
    }
}

#[test]
fn separable_graph_fits_training_split() {
    let data = separable_nodes(20, 0.3, 3).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 200,
        patience: 200,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train_node_classifier(&data, small_net(), &cfg).unwrap();
    let train_acc = evaluate_node(&out.network, &out.params, &data, Split::Train).unwrap();
    assert_eq!(train_acc, 1.0);
    assert!(out.report.epochs <= 200);
}

#[test]
fn node_training_is_deterministic_and_reloadable() {
    let data = separable_nodes(30, 0.8, 4).unwrap();
    let cfg = TrainConfig {
        learning_rate: 5e-3,
        max_epochs: 30,
        patience: 10,
        seed: 7,
        ..TrainConfig::default()
    };
    let net = NetworkConfig {
        attention_dropout: 0.2,
        feature_dropout: 0.2,
        ..small_net()
    };
    let a = train_node_classifier(&data, net.clone(), &cfg).unwrap();
    let b = train_node_classifier(&data, net, &cfg).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.params, b.params);
    let val = evaluate_node(&a.network, &a.params, &data, Split::Val).unwrap();
    assert_eq!(val, a.report.best_val);
    assert_eq!(a.report.val_metric[a.report.best_epoch - 1], a.report.best_val);
    assert!(a.report.test_metric.is_some());
}

#[test]
fn early_stopping_respects_window() {
    let data = separable_nodes(12, 0.0, 5).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 500,
        patience: 5,
        seed: 2,
        ..TrainConfig::default()
    };
    let out = train_node_classifier(&data, small_net(), &cfg).unwrap();
    let r = &out.report;
    assert!(r.epochs < 500);
    assert_eq!(r.epochs - r.best_epoch, 5);
    assert!(r.val_metric[r.best_epoch..].iter().all(|&v| v <= r.best_val));
}

#[test]
fn compositional_kg_is_learned() {
    let kg = compositional_kg(4, 10, 1, 1).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        weight_decay: 0.0,
        max_epochs: 150,
        patience: 50,
        seed: 3,
        batch_size: 64,
        label_smoothing: 0.1,
    };
    let out = train_kg(&kg, small_net(), &cfg).unwrap();
    let (val, _) = evaluate_kg(&out.network, &out.params, &kg, &kg.valid).unwrap();
    assert_eq!(val.mrr, out.report.best_val);
    assert!(val.mrr > 0.9, "validation MRR {}", val.mrr);
}

#[test]
fn kg_one_batch_per_epoch_and_determinism() {
    let kg = compositional_kg(2, 3, 1, 1).unwrap();
    let cfg = TrainConfig {
        max_epochs: 5,
        patience: 5,
        seed: 11,
        batch_size: 10_000,
        ..TrainConfig::kg()
    };
    let a = train_kg(&kg, small_net(), &cfg).unwrap();
    let b = train_kg(&kg, small_net(), &cfg).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.report.train_loss.len(), a.report.epochs);
}

#[test]
fn deep_stacks_stay_finite() {
    let data = separable_nodes(16, 0.5, 6).unwrap();
    for depth in [3, 6, 12, 18, 24] {
        let cfg = TrainConfig {
            max_epochs: 2,
            patience: 2,
            ..TrainConfig::default()
        };
        let net = NetworkConfig {
            num_blocks: depth,
            model_dim: 4,
            heads: 2,
            relation_dim: 4,
            ..NetworkConfig::default()
        };
        let out = train_node_classifier(&data, net, &cfg).unwrap();
        assert!(out.report.train_loss.iter().all(|l| l.is_finite()), "depth {depth}");
    }
}
