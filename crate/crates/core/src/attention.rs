//! Edge attention and multi-hop attention diffusion.
//!
//! For an edge `j --k--> i` (node `i` aggregates from `j`) the score is
//!
//! ```text
//! s = LeakyReLU( v_a . tanh( h_i W_h || h_j W_t || r_k W_r ) )
//! ```
//!
//! with row-vector convention (`W_h: d x d`, `W_t: d x d`, `W_r: d_r x d`,
//! `v_a: 1 x 3d`). Scores are normalized by a softmax over each node's
//! incoming edges, giving a row-stochastic `A` that only has entries on
//! edges. Diffusion then aggregates with
//!
//! ```text
//! 𝒜 = Σ_i α (1 - α)^i A^i = α (I - (1 - α) A)^-1
//! ```
//!
//! approximated by `Z_0 = H`, `Z_{k+1} = (1 - α) A Z_k + α H`. The weights
//! `α (1 - α)^i` are never materialized.
//!
//! Because `tanh` acts elementwise, the concatenation splits into three
//! independent terms: `v_a` is partitioned as `[v_h | v_t | v_r]` and each
//! term is evaluated once per node (or relation) and then gathered onto
//! edges. This keeps the score computation at `O(N d^2 + |E|)` instead of
//! materializing an `|E| x 3d` matrix.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::RngCore;

use crate::graph::Graph;
use crate::numerics::{dense_solve, Matrix, Tape, Var};
use crate::params::Bindings;
use crate::{math, Error, ParamId, Result};

pub const LEAKY_RELU_SLOPE: f64 = 0.2;
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Largest graph the dense oracle accepts.
pub const ORACLE_MAX_NODES: usize = 2000;

/// Teleport probability `alpha` and hop count `K` of the diffusion.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DiffusionConfig {
    pub alpha: f64,
    pub hops: usize,
}

impl DiffusionConfig {
    pub fn new(alpha: f64, hops: usize) -> Result<Self> {
        let cfg = Self { alpha, hops };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "teleport probability {} outside (0, 1]",
                self.alpha
            )));
        }
        if self.hops == 0 {
            return Err(Error::InvalidConfig("hop count must be >= 1".into()));
        }
        Ok(())
    }

    /// Geometric weight `alpha (1 - alpha)^i` of paths of length `i`.
    pub fn theta(&self, i: usize) -> f64 {
        self.alpha * math::powi(1.0 - self.alpha, i as i32)
    }

    /// Bound on `|Z_K - 𝒜 H|_max` relative to `|H|_max`: `2 (1 - alpha)^K`.
    pub fn truncation_bound(&self) -> f64 {
        2.0 * math::powi(1.0 - self.alpha, self.hops as i32)
    }
}

/// Parameter ids of one attention head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadParams {
    pub w_h: ParamId,
    pub w_t: ParamId,
    pub w_r: ParamId,
    pub v_a: ParamId,
}

impl HeadParams {
    pub fn bind(&self, b: &Bindings) -> HeadVars {
        HeadVars {
            w_h: b.var(self.w_h),
            w_t: b.var(self.w_t),
            w_r: b.var(self.w_r),
            v_a: b.var(self.v_a),
        }
    }
}

/// Tape variables of one attention head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadVars {
    pub w_h: Var,
    pub w_t: Var,
    pub w_r: Var,
    pub v_a: Var,
}

/// Per-edge attention scores, `|E| x 1`.
///
/// `relations` is the `N_r x d_r` relation table.
pub fn edge_scores(tape: &mut Tape, h: Var, graph: &Arc<Graph>, head: &HeadVars, relations: Var) -> Result<Var> {
    let (n, d) = tape.shape(h);
    if n != graph.num_nodes() {
        return Err(Error::ShapeMismatch {
            op: "edge_scores",
            lhs: (n, d),
            rhs: (graph.num_nodes(), d),
        });
    }
    let (nr, dr) = tape.shape(relations);
    if nr < graph.num_relations() {
        return Err(Error::OutOfRange(format!(
            "graph uses {} relations but the table has {nr} rows",
            graph.num_relations()
        )));
    }
    for (w, rows) in [(head.w_h, d), (head.w_t, d), (head.w_r, dr)] {
        if tape.shape(w) != (rows, d) {
            return Err(Error::ShapeMismatch {
                op: "edge_scores",
                lhs: tape.shape(w),
                rhs: (rows, d),
            });
        }
    }
    if tape.shape(head.v_a) != (1, 3 * d) {
        return Err(Error::ShapeMismatch {
            op: "edge_scores",
            lhs: tape.shape(head.v_a),
            rhs: (1, 3 * d),
        });
    }

    let recv = tape.matmul(h, head.w_h)?;
    let recv = tape.tanh(recv)?;
    let send = tape.matmul(h, head.w_t)?;
    let send = tape.tanh(send)?;
    let rel = tape.matmul(relations, head.w_r)?;
    let rel = tape.tanh(rel)?;

    let v_h = tape.slice_cols(head.v_a, 0, d)?;
    let v_t = tape.slice_cols(head.v_a, d, d)?;
    let v_r = tape.slice_cols(head.v_a, 2 * d, d)?;
    let recv = tape.matmul_t(recv, v_h)?;
    let send = tape.matmul_t(send, v_t)?;
    let rel = tape.matmul_t(rel, v_r)?;

    let recv = tape.gather_rows(recv, graph.destinations())?;
    let send = tape.gather_rows(send, graph.sources())?;
    let rel = tape.gather_rows(rel, graph.relations())?;
    let s = tape.add(recv, send)?;
    let s = tape.add(s, rel)?;
    tape.leaky_relu(s, LEAKY_RELU_SLOPE)
}

/// Softmax of scores over each node's incoming edges.
///
/// Every node must have at least one incoming edge; see
/// [`Graph::with_isolated_self_loops`].
pub fn attention_weights(tape: &mut Tape, scores: Var, graph: &Arc<Graph>) -> Result<Var> {
    if let Some(i) = graph.isolated_nodes().next() {
        return Err(Error::InvalidGraph(format!(
            "node {i} has no incoming edges; add self-loops before computing attention"
        )));
    }
    tape.segment_softmax(scores, graph.offsets())
}

/// `Z_K` of the diffusion recursion, approximating `𝒜 H`.
pub fn attention_diffusion(
    tape: &mut Tape,
    att: Var,
    h: Var,
    cfg: &DiffusionConfig,
    graph: &Arc<Graph>,
) -> Result<Var> {
    cfg.validate()?;
    let mut z = h;
    for _ in 0..cfg.hops {
        z = tape.diffusion_step(att, z, h, cfg.alpha, graph)?;
    }
    Ok(z)
}

/// Dense attention diffusion `α (I - (1 - α) A)^-1`.
pub fn exact_diffusion_oracle(a: &Matrix, alpha: f64) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::ShapeMismatch {
            op: "exact_diffusion_oracle",
            lhs: a.shape(),
            rhs: (n, n),
        });
    }
    if n > ORACLE_MAX_NODES {
        return Err(Error::InvalidConfig(format!(
            "dense oracle limited to {ORACLE_MAX_NODES} nodes, got {n}"
        )));
    }
    DiffusionConfig::new(alpha, 1)?;
    let m = Matrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - (1.0 - alpha) * a[(i, j)]
    });
    dense_solve(&m, &Matrix::identity(n).scale(alpha))
}

/// How each head aggregates once attention is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregation {
    /// Multi-hop diffusion `Z_K`.
    Diffusion(DiffusionConfig),
    /// Single `A H` product (the one-hop graph-attention layer).
    OneHop,
}

/// Everything a multi-head layer needs besides its input.
#[derive(Debug, Clone, Copy)]
pub struct MultiHead<'a> {
    pub heads: &'a [HeadVars],
    pub relations: Var,
    pub w_o: Var,
    /// `(gamma, beta)`; `None` skips the input normalization.
    pub layer_norm: Option<(Var, Var)>,
    pub aggregation: Aggregation,
    pub attention_dropout: f64,
}

/// Multi-head attention diffusion:
/// `(head_1 || ... || head_M) W_o` with `head_m = 𝒜_m LN(H)`.
///
/// Attention dropout is sampled once per head and reused across all hops.
/// When `trace` is given, the per-edge attention of each head (before
/// dropout) is appended to it in head order.
pub fn multi_head_diffusion(
    tape: &mut Tape,
    h: Var,
    graph: &Arc<Graph>,
    layer: &MultiHead<'_>,
    train: bool,
    rng: &mut dyn RngCore,
    mut trace: Option<&mut Vec<Var>>,
) -> Result<Var> {
    if layer.heads.is_empty() {
        return Err(Error::InvalidConfig("at least one head required".into()));
    }
    let d = tape.shape(h).1;
    let want = (layer.heads.len() * d, d);
    if tape.shape(layer.w_o) != want {
        return Err(Error::ShapeMismatch {
            op: "multi_head_diffusion",
            lhs: tape.shape(layer.w_o),
            rhs: want,
        });
    }
    let normed = match layer.layer_norm {
        Some((g, b)) => tape.layer_norm(h, g, b, LAYER_NORM_EPS)?,
        None => h,
    };
    let mut outputs = Vec::with_capacity(layer.heads.len());
    for head in layer.heads {
        let scores = edge_scores(tape, normed, graph, head, layer.relations)?;
        let att = attention_weights(tape, scores, graph)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(att);
        }
        let att = tape.dropout(att, layer.attention_dropout, train, rng)?;
        let out = match layer.aggregation {
            Aggregation::Diffusion(cfg) => attention_diffusion(tape, att, normed, &cfg, graph)?,
            Aggregation::OneHop => tape.edge_spmm(att, normed, graph)?,
        };
        outputs.push(out);
    }
    let cat = if outputs.len() == 1 {
        outputs[0]
    } else {
        tape.concat_cols(&outputs)?
    };
    tape.matmul(cat, layer.w_o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::vec;

    fn path3() -> Arc<Graph> {
        Arc::new(Graph::undirected(3, 1, &[Edge::new(0, 0, 1), Edge::new(1, 0, 2)]).unwrap())
    }

    fn head_on(t: &mut Tape, d: usize, dr: usize, fill: f64) -> HeadVars {
        HeadVars {
            w_h: t.param(Matrix::filled(d, d, fill)),
            w_t: t.param(Matrix::filled(d, d, fill)),
            w_r: t.param(Matrix::filled(dr, d, fill)),
            v_a: t.param(Matrix::filled(1, 3 * d, fill)),
        }
    }

    #[test]
    fn zero_parameters_give_zero_scores() {
        let g = path3();
        let mut t = Tape::new();
        let h = t.constant(Matrix::from_fn(3, 2, |r, c| (r + c) as f64));
        let rel = t.constant(Matrix::filled(1, 4, 0.3));
        let head = head_on(&mut t, 2, 4, 0.0);
        let s = edge_scores(&mut t, h, &g, &head, rel).unwrap();
        assert!(t.value(s).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_edge_unit_weights_score() {
        let g = Arc::new(Graph::new(2, 1, vec![Edge::new(0, 0, 1)], true).unwrap());
        let mut t = Tape::new();
        let h = t.constant(Matrix::filled(2, 1, 0.1));
        let rel = t.constant(Matrix::filled(1, 1, 0.1));
        let head = head_on(&mut t, 1, 1, 1.0);
        let s = edge_scores(&mut t, h, &g, &head, rel).unwrap();
        let expected = 3.0 * 0.1f64.tanh();
        assert!((t.value(s)[(0, 0)] - expected).abs() < 1e-15);
        assert!((expected - 0.29901).abs() < 1e-5);
    }

    #[test]
    fn uniform_attention_on_path() {
        let g = path3();
        let mut t = Tape::new();
        let s = t.constant(Matrix::zeros(4, 1));
        let a = attention_weights(&mut t, s, &g).unwrap();
        let dense = g.dense_from_edges(t.value(a).as_slice()).unwrap();
        assert_eq!(
            dense,
            Matrix::from_rows(&[[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [0.0, 1.0, 0.0]])
        );
    }

    #[test]
    fn isolated_node_is_rejected_for_softmax() {
        let g = Arc::new(Graph::new(2, 1, vec![Edge::new(0, 0, 1)], true).unwrap());
        let mut t = Tape::new();
        let s = t.constant(Matrix::zeros(1, 1));
        assert!(matches!(attention_weights(&mut t, s, &g), Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn alpha_one_is_identity() {
        let g = path3();
        let mut t = Tape::new();
        let a = t.constant(Matrix::column(&[1.0, 0.5, 0.5, 1.0]));
        let h = t.constant(Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64 - 1.5));
        let z = attention_diffusion(&mut t, a, h, &DiffusionConfig::new(1.0, 7).unwrap(), &g).unwrap();
        assert_eq!(t.value(z), t.value(h));
    }

    #[test]
    fn all_ones_is_a_fixed_point() {
        let g = path3();
        let mut t = Tape::new();
        let s = t.constant(Matrix::column(&[0.3, -1.0, 2.0, 0.1]));
        let a = attention_weights(&mut t, s, &g).unwrap();
        let h = t.constant(Matrix::filled(3, 1, 1.0));
        let z = attention_diffusion(&mut t, a, h, &DiffusionConfig::new(0.2, 9).unwrap(), &g).unwrap();
        for v in t.value(z).as_slice() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bad_alpha_rejected() {
        assert!(DiffusionConfig::new(0.0, 3).is_err());
        assert!(DiffusionConfig::new(1.5, 3).is_err());
        assert!(DiffusionConfig::new(0.5, 0).is_err());
    }

    #[test]
    fn oracle_on_path() {
        let a = Matrix::from_rows(&[[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [0.0, 1.0, 0.0]]);
        let ppr = exact_diffusion_oracle(&a, 0.5).unwrap();
        let expected = Matrix::from_rows(&[
            [7.0 / 12.0, 1.0 / 3.0, 1.0 / 12.0],
            [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            [1.0 / 12.0, 1.0 / 3.0, 7.0 / 12.0],
        ]);
        assert!(ppr.sub(&expected).unwrap().max_abs() < 1e-15);
        let id = exact_diffusion_oracle(&Matrix::identity(4), 0.3).unwrap();
        assert!(id.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn single_head_identity_output_is_layer_norm() {
        let g = path3();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut t = Tape::new();
        let h = t.constant(Matrix::from_rows(&[[1.0, 2.0], [0.0, -1.0], [3.0, 3.5]]));
        let rel = t.constant(Matrix::filled(1, 2, 0.2));
        let head = head_on(&mut t, 2, 2, 0.1);
        let w_o = t.constant(Matrix::identity(2));
        let gamma = t.constant(Matrix::filled(1, 2, 1.0));
        let beta = t.constant(Matrix::zeros(1, 2));
        let layer = MultiHead {
            heads: &[head],
            relations: rel,
            w_o,
            layer_norm: Some((gamma, beta)),
            aggregation: Aggregation::Diffusion(DiffusionConfig::new(1.0, 4).unwrap()),
            attention_dropout: 0.0,
        };
        let out = multi_head_diffusion(&mut t, h, &g, &layer, false, &mut rng, None).unwrap();
        let ln = t.layer_norm(h, gamma, beta, LAYER_NORM_EPS).unwrap();
        assert_eq!(t.value(out), t.value(ln));
    }

    #[test]
    fn w_o_shape_checked() {
        let g = path3();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut t = Tape::new();
        let h = t.constant(Matrix::zeros(3, 2));
        let rel = t.constant(Matrix::zeros(1, 2));
        let head = head_on(&mut t, 2, 2, 0.1);
        let w_o = t.constant(Matrix::identity(3));
        let layer = MultiHead {
            heads: &[head],
            relations: rel,
            w_o,
            layer_norm: None,
            aggregation: Aggregation::OneHop,
            attention_dropout: 0.0,
        };
        assert!(multi_head_diffusion(&mut t, h, &g, &layer, false, &mut rng, None).is_err());
    }
}
