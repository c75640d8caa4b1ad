//! Full-graph training loops with validation-driven early stopping.
//!
//! Test labels and test triples are touched only after training finishes,
//! by one evaluation of the best-validation parameters.

mod search;

pub use search::{apply, rank_trials, sample_trials, ParamSpace, Scale, SearchSpace, Trial, TrialResult};

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, KgDataset, NodeDataset, Split, Triple};
use crate::net::{HeadParamIds, HeadSpec, InputSpec, ModelSpec, Network, NetworkConfig};
use crate::numerics::{Adam, AdamConfig, Matrix, Tape};
use crate::tasks::{
    accuracy, classifier_logits, cross_entropy_loss, distmult_logits, filtered_ranks, kl_label_smoothing_loss,
    RankingMetrics, TripleRanks,
};
use crate::{Error, ParamStore, Result};

/// Optimization settings shared by both tasks.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Early-stopping window: stop once this many epochs pass without a
    /// strict improvement of the validation metric.
    pub patience: usize,
    pub seed: u64,
    /// Number of `(entity, relation)` queries per optimization step (KG only).
    pub batch_size: usize,
    /// Label smoothing of the 1-N targets (KG only).
    pub label_smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            weight_decay: 5e-6,
            max_epochs: 1000,
            patience: 200,
            seed: 0,
            batch_size: 1024,
            label_smoothing: 0.1,
        }
    }
}

impl TrainConfig {
    /// Defaults for knowledge-graph training (400-epoch cap).
    pub fn kg() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-9,
            max_epochs: 400,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight decay {} must be >= 0",
                self.weight_decay
            )));
        }
        if self.patience == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "patience, max_epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::InvalidConfig(format!(
                "label smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        Ok(())
    }
}

/// Strict-improvement early stopping over 1-based epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    window: usize,
    best: f64,
    best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
        }
    }

    /// Records the metric of `epoch`; returns `true` if it is a new best.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if metric > self.best {
            self.best = metric;
            self.best_epoch = epoch;
            true
        } else {
            false
        }
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        epoch - self.best_epoch >= self.window
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Training trajectory and final selection.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_metric: Vec<f64>,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Test metric of the best-validation parameters.
    pub test_metric: Option<f64>,
    /// Full test ranking metrics (KG only).
    pub test_ranking: Option<RankingMetrics>,
    /// Filled in by callers that have a clock.
    pub wall_seconds: Option<f64>,
}

/// A trained model: layout, best parameters and report.
#[derive(Debug, Clone)]
pub struct Trained {
    pub network: Network,
    pub params: ParamStore,
    pub report: TrainReport,
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(_) | Error::NonFiniteGradient(_) => Error::Diverged {
            epoch,
            reason: format!("{e}"),
        },
        other => other,
    }
}

/// Node-classification model layout for `data`.
pub fn node_model_spec(data: &NodeDataset, network: NetworkConfig) -> ModelSpec {
    ModelSpec {
        network,
        input: InputSpec::Features {
            dim: data.feature_dim(),
        },
        head: HeadSpec::Classifier {
            classes: data.num_classes,
        },
        graph_relations: data.graph.num_relations(),
    }
}

/// Message-passing graph used for node classification.
pub fn node_graph(data: &NodeDataset) -> Arc<Graph> {
    Arc::new(data.graph.with_isolated_self_loops())
}

/// Class logits of every node in evaluation mode.
pub fn node_logits(net: &Network, params: &ParamStore, data: &NodeDataset, graph: &Arc<Graph>) -> Result<Matrix> {
    let HeadParamIds::Classifier { weight, bias } = net.head() else {
        return Err(Error::InvalidConfig("model has no classifier head".into()));
    };
    let mut tape = Tape::new();
    let b = params.bind_frozen(&mut tape);
    let x = tape.constant(data.features.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = net.forward(&mut tape, &b, graph, Some(x), false, &mut rng)?;
    let logits = classifier_logits(&mut tape, out.repr, b.var(weight), b.var(bias))?;
    Ok(tape.value(logits).clone())
}

/// Accuracy on one split in evaluation mode.
pub fn evaluate_node(net: &Network, params: &ParamStore, data: &NodeDataset, split: Split) -> Result<f64> {
    let logits = node_logits(net, params, data, &node_graph(data))?;
    accuracy(&logits, &data.labeled(split))
}

/// Trains a node classifier on the train split, selecting by validation
/// accuracy.
pub fn train_node_classifier(data: &NodeDataset, network: NetworkConfig, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let train = data.labeled(Split::Train);
    let val = data.labeled(Split::Val);
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("train or validation split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (net, mut params) = Network::new(node_model_spec(data, network), &mut rng)?;
    let HeadParamIds::Classifier { weight, bias } = net.head() else {
        unreachable!("node spec has a classifier head");
    };
    let graph = node_graph(data);
    let mut adam = Adam::new(AdamConfig::new(cfg.learning_rate, cfg.weight_decay), &params);
    let mut stop = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_metric: Vec::new(),
        epochs: 0,
        best_epoch: 0,
        best_val: 0.0,
        test_metric: None,
        test_ranking: None,
        wall_seconds: None,
    };

    for epoch in 1..=cfg.max_epochs {
        let step = |params: &mut ParamStore, adam: &mut Adam, rng: &mut ChaCha8Rng| -> Result<f64> {
            let mut tape = Tape::new();
            let b = params.bind(&mut tape);
            let x = tape.constant(data.features.clone());
            let out = net.forward(&mut tape, &b, &graph, Some(x), true, rng)?;
            let logits = classifier_logits(&mut tape, out.repr, b.var(weight), b.var(bias))?;
            let (loss, _) = cross_entropy_loss(&mut tape, logits, &train)?;
            let value = tape.value(loss)[(0, 0)];
            tape.backward(loss)?;
            adam.step(params, &b.grads(&tape))?;
            Ok(value)
        };
        let loss = step(&mut params, &mut adam, &mut rng).map_err(|e| diverged(epoch, e))?;
        let logits = node_logits(&net, &params, data, &graph).map_err(|e| diverged(epoch, e))?;
        let val_acc = accuracy(&logits, &val)?;
        report.train_loss.push(loss);
        report.val_metric.push(val_acc);
        report.epochs = epoch;
        if stop.observe(epoch, val_acc) {
            best.clone_from(&params);
        }
        if stop.should_stop(epoch) {
            break;
        }
    }

    report.best_epoch = stop.best_epoch();
    report.best_val = stop.best();
    let test = data.labeled(Split::Test);
    if !test.is_empty() {
        let logits = node_logits(&net, &best, data, &graph)?;
        report.test_metric = Some(accuracy(&logits, &test)?);
    }
    Ok(Trained {
        network: net,
        params: best,
        report,
    })
}

/// Knowledge-graph model layout: trainable entity and relation inputs,
/// DistMult decoder over all relations including reverses.
pub fn kg_model_spec(kg: &KgDataset, network: NetworkConfig) -> ModelSpec {
    let dim = network.relation_dim;
    ModelSpec {
        network,
        input: InputSpec::Embeddings {
            count: kg.num_entities,
            dim,
        },
        head: HeadSpec::DistMult {
            relations: kg.num_relations(),
        },
        graph_relations: kg_graph(kg).num_relations(),
    }
}

/// Message-passing graph for a knowledge graph: training triples in both
/// directions, plus typed self-loops on entities without incoming edges.
pub fn kg_graph(kg: &KgDataset) -> Arc<Graph> {
    Arc::new(kg.graph.with_isolated_self_loops_typed())
}

/// Final entity representations and the DistMult relation table.
pub fn kg_embeddings(net: &Network, params: &ParamStore, graph: &Arc<Graph>) -> Result<(Matrix, Matrix)> {
    let HeadParamIds::DistMult { relations } = net.head() else {
        return Err(Error::InvalidConfig("model has no DistMult head".into()));
    };
    let mut tape = Tape::new();
    let b = params.bind_frozen(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = net.forward(&mut tape, &b, graph, None, false, &mut rng)?;
    Ok((tape.value(out.repr).clone(), params.get(relations).clone()))
}

/// Filtered ranks of `triples` in evaluation mode.
pub fn evaluate_kg(
    net: &Network,
    params: &ParamStore,
    kg: &KgDataset,
    triples: &[Triple],
) -> Result<(RankingMetrics, Vec<TripleRanks>)> {
    let graph = kg_graph(kg);
    let (ents, rels) = kg_embeddings(net, params, &graph)?;
    let ranks = filtered_ranks(kg, triples, |e, r| {
        crate::tasks::distmult_scores(ents.row(e), rels.row(r), &ents)
    })?;
    Ok((RankingMetrics::from_triple_ranks(&ranks)?, ranks))
}

/// Trains MAGNA + DistMult with 1-N scoring on both query directions,
/// selecting by validation MRR.
pub fn train_kg(kg: &KgDataset, network: NetworkConfig, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if kg.train.is_empty() || kg.valid.is_empty() {
        return Err(Error::Empty("train or validation triples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (net, mut params) = Network::new(kg_model_spec(kg, network), &mut rng)?;
    let HeadParamIds::DistMult { relations } = net.head() else {
        unreachable!("KG spec has a DistMult head");
    };
    let graph = kg_graph(kg);
    let mut queries = kg.train_queries();
    let mut adam = Adam::new(AdamConfig::new(cfg.learning_rate, cfg.weight_decay), &params);
    let mut stop = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_metric: Vec::new(),
        epochs: 0,
        best_epoch: 0,
        best_val: 0.0,
        test_metric: None,
        test_ranking: None,
        wall_seconds: None,
    };

    for epoch in 1..=cfg.max_epochs {
        queries.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in queries.chunks(cfg.batch_size) {
            let pairs: Vec<(usize, usize)> = batch.iter().map(|q| (q.0, q.1)).collect();
            let answers: Vec<Vec<usize>> = batch.iter().map(|q| q.2.clone()).collect();
            let mut step = || -> Result<f64> {
                let mut tape = Tape::new();
                let b = params.bind(&mut tape);
                let out = net.forward(&mut tape, &b, &graph, None, true, &mut rng)?;
                let logits = distmult_logits(&mut tape, out.repr, b.var(relations), &pairs)?;
                let loss = kl_label_smoothing_loss(&mut tape, logits, &answers, cfg.label_smoothing)?;
                let value = tape.value(loss)[(0, 0)];
                tape.backward(loss)?;
                adam.step(&mut params, &b.grads(&tape))?;
                Ok(value)
            };
            total += step().map_err(|e| diverged(epoch, e))?;
            batches += 1;
        }
        let (val, _) = evaluate_kg(&net, &params, kg, &kg.valid).map_err(|e| diverged(epoch, e))?;
        report.train_loss.push(total / batches as f64);
        report.val_metric.push(val.mrr);
        report.epochs = epoch;
        if stop.observe(epoch, val.mrr) {
            best.clone_from(&params);
        }
        if stop.should_stop(epoch) {
            break;
        }
    }

    report.best_epoch = stop.best_epoch();
    report.best_val = stop.best();
    if !kg.test.is_empty() {
        let (m, _) = evaluate_kg(&net, &best, kg, &kg.test)?;
        report.test_metric = Some(m.mrr);
        report.test_ranking = Some(m);
    }
    Ok(Trained {
        network: net,
        params: best,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_one_stops_after_first_non_improvement() {
        let mut s = EarlyStopping::new(1);
        assert!(s.observe(1, 0.5));
        assert!(!s.should_stop(1));
        assert!(!s.observe(2, 0.5));
        assert!(s.should_stop(2));
        assert_eq!(s.best_epoch(), 1);
    }

    #[test]
    fn never_stops_inside_window() {
        let mut s = EarlyStopping::new(3);
        s.observe(1, 1.0);
        for e in 2..4 {
            s.observe(e, 0.0);
            assert!(!s.should_stop(e));
        }
        s.observe(4, 0.0);
        assert!(s.should_stop(4));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::kg().validate().is_ok());
        let bad = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
