//! Small synthetic datasets with known structure.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Edge, Graph, KgDataset, NodeDataset, Split, Triple};
use crate::{Matrix, Result};

/// Two-community graph whose features carry the class plus noise.
///
/// Nodes `0..n/2` are class 0, the rest class 1. Each community is a ring
/// with one bridge between them. Features are `[class == 0, class == 1]`
/// scaled by 1 plus uniform noise in `[-noise, noise]`, followed by two
/// pure-noise columns. Splits cycle train / val / test.
pub fn separable_nodes(n: usize, noise: f64, seed: u64) -> Result<NodeDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = n / 2;
    let mut edges = Vec::new();
    for (lo, hi) in [(0, half), (half, n)] {
        for i in lo..hi {
            let j = if i + 1 == hi { lo } else { i + 1 };
            if i != j {
                edges.push(Edge::new(i, 0, j));
            }
        }
    }
    if half > 0 && half < n {
        edges.push(Edge::new(0, 0, half));
    }
    edges.sort();
    edges.dedup();
    let mut canonical: Vec<Edge> = Vec::new();
    for e in edges {
        let rev = Edge::new(e.dst, e.rel, e.src);
        if !canonical.contains(&rev) {
            canonical.push(e);
        }
    }
    let graph = Graph::undirected(n, 1, &canonical)?;
    let labels: Vec<Option<usize>> = (0..n).map(|i| Some(usize::from(i >= half))).collect();
    let features = Matrix::from_fn(n, 4, |i, c| {
        let class = usize::from(i >= half);
        let signal = if c == class { 1.0 } else { 0.0 };
        signal + rng.gen_range(-noise..=noise)
    });
    let splits = (0..n)
        .map(|i| match i % 3 {
            0 => Split::Train,
            1 => Split::Val,
            _ => Split::Test,
        })
        .collect();
    NodeDataset::new(graph, features, labels, 2, splits)
}

/// Knowledge graph where relation 2 is the composition of relations 0
/// and 1.
///
/// Hub `j` owns entities `b_j` and `c_j` with `(b_j, 1, c_j)`, plus
/// `members` entities `a` with `(a, 0, b_j)`. Every member implies
/// `(a, 2, c_j)`. Per hub, the last `valid + test` members have their
/// implied triple held out as validation then test triples; the rest are
/// in training. Entities are laid out hub by hub as `b, c, a_0, a_1, ...`.
pub fn compositional_kg(hubs: usize, members: usize, valid: usize, test: usize) -> Result<KgDataset> {
    let shown = members.saturating_sub(valid + test);
    let stride = members + 2;
    let mut train = Vec::new();
    let mut va = Vec::new();
    let mut te = Vec::new();
    for j in 0..hubs {
        let (b, c) = (j * stride, j * stride + 1);
        train.push(Triple::new(b, 1, c));
        for m in 0..members {
            let a = j * stride + 2 + m;
            train.push(Triple::new(a, 0, b));
            let implied = Triple::new(a, 2, c);
            if m < shown {
                train.push(implied);
            } else if m < shown + valid {
                va.push(implied);
            } else {
                te.push(implied);
            }
        }
    }
    KgDataset::new(hubs * stride, 3, train, va, te)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_shapes() {
        let d = separable_nodes(20, 0.3, 1).unwrap();
        assert_eq!(d.graph.num_nodes(), 20);
        assert_eq!(d.graph.isolated_nodes().count(), 0);
        assert_eq!(d.labeled(Split::Train).len(), 7);
    }

    #[test]
    fn compositional_counts() {
        let kg = compositional_kg(4, 10, 1, 2).unwrap();
        assert_eq!(kg.num_entities, 48);
        assert_eq!(kg.train.len(), 4 * (1 + 10 + 7));
        assert_eq!(kg.valid.len(), 4);
        assert_eq!(kg.test.len(), 8);
        assert!(kg.valid.iter().all(|t| t.rel == 2 && t.tail % 12 == 1));
    }
}
