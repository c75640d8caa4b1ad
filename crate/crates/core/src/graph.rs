//! Edge-indexed graphs and the two dataset kinds built on them.
//!
//! Edges are stored grouped by destination node, so every per-node
//! reduction (softmax over incoming scores, aggregation of messages) scans
//! one contiguous segment of the edge list.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::{Error, Matrix, Result};

/// Directed, typed edge `src --rel--> dst`. Messages flow from `src` into `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: usize,
    pub rel: usize,
    pub dst: usize,
}

impl Edge {
    pub const fn new(src: usize, rel: usize, dst: usize) -> Self {
        Self { src, rel, dst }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    num_relations: usize,
    edges: Vec<Edge>,
    offsets: Arc<[usize]>,
    directed: bool,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    rel: Arc<[usize]>,
}

impl Graph {
    /// Validates `edges` and lays them out by destination.
    ///
    /// The order of edges sharing a destination is preserved. Duplicate
    /// `(src, rel, dst)` triples are rejected.
    pub fn new(num_nodes: usize, num_relations: usize, edges: Vec<Edge>, directed: bool) -> Result<Self> {
        if num_relations == 0 {
            return Err(Error::InvalidGraph("num_relations must be >= 1".into()));
        }
        for (i, e) in edges.iter().enumerate() {
            if e.src >= num_nodes || e.dst >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge {i}: node id out of range ({} -> {}, num_nodes = {num_nodes})",
                    e.src, e.dst
                )));
            }
            if e.rel >= num_relations {
                return Err(Error::InvalidGraph(format!(
                    "edge {i}: relation id {} out of range (num_relations = {num_relations})",
                    e.rel
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for e in &edges {
            if !seen.insert(*e) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge ({}, {}, {})",
                    e.src, e.rel, e.dst
                )));
            }
        }

        let mut counts = vec![0usize; num_nodes + 1];
        for e in &edges {
            counts[e.dst + 1] += 1;
        }
        for i in 0..num_nodes {
            counts[i + 1] += counts[i];
        }
        let offsets: Arc<[usize]> = counts.clone().into();
        let mut cursor = counts;
        let mut laid_out = vec![Edge::new(0, 0, 0); edges.len()];
        for e in edges {
            laid_out[cursor[e.dst]] = e;
            cursor[e.dst] += 1;
        }

        let src = laid_out.iter().map(|e| e.src).collect();
        let dst = laid_out.iter().map(|e| e.dst).collect();
        let rel = laid_out.iter().map(|e| e.rel).collect();
        Ok(Self {
            num_nodes,
            num_relations,
            edges: laid_out,
            offsets,
            directed,
            src,
            dst,
            rel,
        })
    }

    /// Builds an undirected graph: every input edge is stored in both
    /// directions (a self-loop is stored once).
    pub fn undirected(num_nodes: usize, num_relations: usize, edges: &[Edge]) -> Result<Self> {
        let mut both = Vec::with_capacity(edges.len() * 2);
        for e in edges {
            both.push(*e);
            if e.src != e.dst {
                both.push(Edge::new(e.dst, e.rel, e.src));
            }
        }
        Self::new(num_nodes, num_relations, both, false)
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    #[inline]
    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Edges in segment layout (grouped by destination).
    #[inline]
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edge indices whose destination is `node`.
    #[inline]
    pub fn incoming_segment(&self, node: usize) -> Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }

    #[inline]
    pub fn in_degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// Segment boundaries; `offsets()[i]..offsets()[i + 1]` is node `i`'s segment.
    #[inline]
    pub fn offsets(&self) -> &Arc<[usize]> {
        &self.offsets
    }

    pub fn sources(&self) -> &Arc<[usize]> {
        &self.src
    }

    pub fn destinations(&self) -> &Arc<[usize]> {
        &self.dst
    }

    pub fn relations(&self) -> &Arc<[usize]> {
        &self.rel
    }

    pub fn isolated_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_nodes).filter(|&i| self.in_degree(i) == 0)
    }

    /// Returns a graph where every node without incoming edges receives a
    /// self-loop with relation 0, so each softmax row is non-empty.
    pub fn with_isolated_self_loops(&self) -> Graph {
        let isolated: Vec<usize> = self.isolated_nodes().collect();
        if isolated.is_empty() {
            return self.clone();
        }
        let mut edges = self.edges.clone();
        edges.extend(isolated.into_iter().map(|i| Edge::new(i, 0, i)));
        Graph::new(self.num_nodes, self.num_relations, edges, self.directed)
            .expect("adding self-loops to empty segments keeps the graph valid")
    }

    /// Like [`Graph::with_isolated_self_loops`], but the loops use a fresh
    /// relation id `num_relations` (the result has one more relation).
    pub fn with_isolated_self_loops_typed(&self) -> Graph {
        let r = self.num_relations;
        let mut edges = self.edges.clone();
        edges.extend(self.isolated_nodes().map(|i| Edge::new(i, r, i)));
        Graph::new(self.num_nodes, r + 1, edges, self.directed)
            .expect("adding self-loops to empty segments keeps the graph valid")
    }

    /// Dense `N x N` matrix with `values[e]` at `(dst, src)` of edge `e`,
    /// i.e. the attention matrix whose row `i` aggregates into node `i`.
    pub fn dense_from_edges(&self, values: &[f64]) -> Result<Matrix> {
        if values.len() != self.num_edges() {
            return Err(Error::ShapeMismatch {
                op: "dense_from_edges",
                lhs: (self.num_edges(), 1),
                rhs: (values.len(), 1),
            });
        }
        let mut m = Matrix::zeros(self.num_nodes, self.num_nodes);
        for (e, &v) in self.edges.iter().zip(values) {
            m[(e.dst, e.src)] += v;
        }
        Ok(m)
    }

    /// Applies a node relabeling `perm[old] = new`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.num_nodes {
            return Err(Error::InvalidGraph("permutation length mismatch".into()));
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge::new(perm[e.src], e.rel, perm[e.dst]))
            .collect();
        Graph::new(self.num_nodes, self.num_relations, edges, self.directed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

/// Node-classification dataset: features `X`, per-node labels and splits.
#[derive(Debug, Clone)]
pub struct NodeDataset {
    pub graph: Graph,
    pub features: Matrix,
    pub labels: Vec<Option<usize>>,
    pub num_classes: usize,
    pub splits: Vec<Split>,
}

impl NodeDataset {
    pub fn new(
        graph: Graph,
        features: Matrix,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        if features.rows() != n {
            return Err(Error::InvalidGraph(format!(
                "features have {} rows for {n} nodes",
                features.rows()
            )));
        }
        if labels.len() != n || splits.len() != n {
            return Err(Error::InvalidGraph(
                "labels and splits must have one entry per node".into(),
            ));
        }
        for (i, (l, s)) in labels.iter().zip(&splits).enumerate() {
            if let Some(c) = l {
                if *c >= num_classes {
                    return Err(Error::InvalidGraph(format!(
                        "node {i}: class {c} >= num_classes {num_classes}"
                    )));
                }
            } else if *s != Split::None {
                return Err(Error::InvalidGraph(format!(
                    "node {i} is in split {s:?} but has no label"
                )));
            }
        }
        Ok(Self {
            graph,
            features,
            labels,
            num_classes,
            splits,
        })
    }

    pub fn split_nodes(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Labels of the nodes in `split`, paired with node ids.
    pub fn labeled(&self, split: Split) -> Vec<(usize, usize)> {
        self.split_nodes(split)
            .into_iter()
            .map(|i| (i, self.labels[i].expect("split nodes are labeled")))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, rel: usize, tail: usize) -> Self {
        Self { head, rel, tail }
    }
}

/// Knowledge graph with reverse relations.
///
/// Relation `k` has reverse `k + num_base_relations`; the message-passing
/// graph holds every training triple in both directions.
#[derive(Debug, Clone)]
pub struct KgDataset {
    pub graph: Graph,
    pub num_entities: usize,
    pub num_base_relations: usize,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    filter: BTreeMap<(usize, usize), BTreeSet<usize>>,
}

impl KgDataset {
    pub fn new(
        num_entities: usize,
        num_base_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let check = |t: &Triple| -> Result<()> {
            if t.head >= num_entities || t.tail >= num_entities || t.rel >= num_base_relations {
                return Err(Error::InvalidGraph(format!(
                    "triple ({}, {}, {}) out of range",
                    t.head, t.rel, t.tail
                )));
            }
            Ok(())
        };
        for t in train.iter().chain(&valid).chain(&test) {
            check(t)?;
        }
        let mut edges = Vec::with_capacity(train.len() * 2);
        for t in &train {
            edges.push(Edge::new(t.head, t.rel, t.tail));
            edges.push(Edge::new(t.tail, t.rel + num_base_relations, t.head));
        }
        let graph = Graph::new(num_entities, 2 * num_base_relations, edges, true)?;

        let mut filter: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
        for t in train.iter().chain(&valid).chain(&test) {
            filter.entry((t.head, t.rel)).or_default().insert(t.tail);
            filter
                .entry((t.tail, t.rel + num_base_relations))
                .or_default()
                .insert(t.head);
        }
        Ok(Self {
            graph,
            num_entities,
            num_base_relations,
            train,
            valid,
            test,
            filter,
        })
    }

    /// Relation count including reverses.
    pub fn num_relations(&self) -> usize {
        2 * self.num_base_relations
    }

    pub fn reverse_relation(&self, rel: usize) -> usize {
        if rel < self.num_base_relations {
            rel + self.num_base_relations
        } else {
            rel - self.num_base_relations
        }
    }

    /// True answers for the query `(entity, rel, ?)` across all splits.
    pub fn known_answers(&self, entity: usize, rel: usize) -> Option<&BTreeSet<usize>> {
        self.filter.get(&(entity, rel))
    }

    pub fn filter_index(&self) -> &BTreeMap<(usize, usize), BTreeSet<usize>> {
        &self.filter
    }

    /// 1-N training targets: every `(entity, relation)` query of the training
    /// split (both directions) with all its training answers, in key order.
    pub fn train_queries(&self) -> Vec<(usize, usize, Vec<usize>)> {
        let mut q: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
        for t in &self.train {
            q.entry((t.head, t.rel)).or_default().insert(t.tail);
            q.entry((t.tail, t.rel + self.num_base_relations))
                .or_default()
                .insert(t.head);
        }
        q.into_iter()
            .map(|((e, r), s)| (e, r, s.into_iter().collect()))
            .collect()
    }
}
