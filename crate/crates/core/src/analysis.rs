//! Spectral checks of attention diffusion and the attention-discrepancy
//! diagnostic.
//!
//! For a row-stochastic `A` with eigenvalue `λ`, the diffusion
//! `𝒜 = α (I - (1 - α) A)^-1` has the same eigenvectors and eigenvalue
//! `λ̂ = α / (1 - (1 - α) λ)`. With Laplacian eigenvalues `λᵍ = 1 - λ` and
//! `λ̂ᵍ = 1 - λ̂` the ratio is `λ̂ᵍ / λᵍ = 1 / (α / (1 - α) + λᵍ)`, which is
//! largest for small `λᵍ`: the diffusion acts as a low-pass filter.
//!
//! The eigen-solver needs a real spectrum. Symmetric inputs are used as
//! they are; reversible inputs (`π_i A_ij = π_j A_ji`, e.g. uniform
//! attention `D^-1 W` on any undirected graph) are first mapped to the
//! similar symmetric matrix `Π^1/2 A Π^-1/2`. Anything else is rejected;
//! [`average_symmetrized`] is the labeled escape hatch for learned attention.

use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::exact_diffusion_oracle;
use crate::graph::Graph;
use crate::math;
use crate::net::Network;
use crate::numerics::linalg::asymmetry;
use crate::numerics::{sym_eigen, Matrix, Tape};
use crate::{Error, ParamStore, Result};

const SYMMETRY_TOL: f64 = 1e-10;

/// `λ̂ = α / (1 - (1 - α) λ)`.
pub fn predicted_lambda_hat(lambda: f64, alpha: f64) -> f64 {
    alpha / (1.0 - (1.0 - alpha) * lambda)
}

/// `λ̂ᵍ / λᵍ = 1 / (α / (1 - α) + λᵍ)`, written to stay finite at `α = 1`.
pub fn predicted_ratio(lambda_g: f64, alpha: f64) -> f64 {
    (1.0 - alpha) / (alpha + (1.0 - alpha) * lambda_g)
}

/// How a spectrum was made real.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Symmetry {
    /// The input was symmetric.
    Symmetric,
    /// The input was reversible and analyzed through a similarity transform.
    Reversible,
}

/// Stationary weights `π` with `π_i A_ij = π_j A_ji`, or an error.
fn detailed_balance(a: &Matrix) -> Result<Vec<f64>> {
    let n = a.rows();
    let mut pi = vec![0.0; n];
    let mut queue = VecDeque::new();
    for root in 0..n {
        if pi[root] != 0.0 {
            continue;
        }
        pi[root] = 1.0;
        queue.push_back(root);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                let aij = a[(i, j)];
                if aij == 0.0 || j == i {
                    continue;
                }
                let aji = a[(j, i)];
                if aji <= 0.0 || aij < 0.0 {
                    return Err(Error::Asymmetric((aij - aji).abs()));
                }
                let want = pi[i] * aij / aji;
                if pi[j] == 0.0 {
                    pi[j] = want;
                    queue.push_back(j);
                } else if (pi[j] - want).abs() > SYMMETRY_TOL * pi[j].max(want) {
                    return Err(Error::Asymmetric((pi[j] - want).abs()));
                }
            }
        }
    }
    Ok(pi)
}

/// Symmetric matrix similar to `a` plus `sqrt(π)` (all ones if `a` is
/// already symmetric).
fn symmetric_form(a: &Matrix) -> Result<(Matrix, Vec<f64>, Symmetry)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::ShapeMismatch {
            op: "spectrum",
            lhs: a.shape(),
            rhs: (n, n),
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("spectrum input"));
    }
    if asymmetry(a) <= SYMMETRY_TOL {
        return Ok((a.clone(), vec![1.0; n], Symmetry::Symmetric));
    }
    let root: Vec<f64> = detailed_balance(a)?.into_iter().map(math::sqrt).collect();
    let s = Matrix::from_fn(n, n, |i, j| root[i] / root[j] * a[(i, j)]);
    let s = Matrix::from_fn(n, n, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]));
    Ok((s, root, Symmetry::Reversible))
}

/// `(A + Aᵀ) / 2`, for learned (non-reversible) attention. Results on this
/// matrix describe the symmetrized operator, not `A` itself.
pub fn average_symmetrized(a: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), a.cols(), |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
}

/// One eigenvalue of `A` and the matching quantities of `𝒜`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpectrumRow {
    pub lambda: f64,
    /// Eigenvalue of the dense diffusion matrix.
    pub lambda_hat: f64,
    pub lambda_hat_predicted: f64,
    pub lambda_g: f64,
    pub lambda_hat_g: f64,
    /// `λ̂ᵍ / λᵍ`; `None` where `λᵍ` vanishes.
    pub ratio: Option<f64>,
    pub ratio_predicted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpectrumReport {
    pub alpha: f64,
    pub symmetry: Symmetry,
    /// Ascending in `λ`.
    pub rows: Vec<SpectrumRow>,
    /// Largest `|λ̂ - λ̂_predicted|`.
    pub max_lambda_hat_error: f64,
    /// Largest `|ratio - ratio_predicted|` over rows with a defined ratio.
    pub max_ratio_error: f64,
}

/// Ratios are reported only where `|λᵍ|` exceeds this.
pub const RATIO_EPS: f64 = 1e-9;

/// Eigenvalues of `A` and of its dense diffusion, measured and predicted.
pub fn spectrum_report(a: &Matrix, alpha: f64) -> Result<SpectrumReport> {
    let (s, _, symmetry) = symmetric_form(a)?;
    let lambdas = sym_eigen(&s)?.values;
    let diffused = exact_diffusion_oracle(&s, alpha)?;
    let diffused = average_symmetrized(&diffused);
    let hats = sym_eigen(&diffused)?.values;

    let mut rows = Vec::with_capacity(lambdas.len());
    let mut max_lambda_hat_error = 0.0_f64;
    let mut max_ratio_error = 0.0_f64;
    for (&lambda, &lambda_hat) in lambdas.iter().zip(&hats) {
        let predicted = predicted_lambda_hat(lambda, alpha);
        let lambda_g = 1.0 - lambda;
        let lambda_hat_g = 1.0 - lambda_hat;
        let (ratio, ratio_predicted) = if lambda_g.abs() > RATIO_EPS {
            (Some(lambda_hat_g / lambda_g), Some(predicted_ratio(lambda_g, alpha)))
        } else {
            (None, None)
        };
        max_lambda_hat_error = max_lambda_hat_error.max((lambda_hat - predicted).abs());
        if let (Some(r), Some(p)) = (ratio, ratio_predicted) {
            max_ratio_error = max_ratio_error.max((r - p).abs());
        }
        rows.push(SpectrumRow {
            lambda,
            lambda_hat,
            lambda_hat_predicted: predicted,
            lambda_g,
            lambda_hat_g,
            ratio,
            ratio_predicted,
        });
    }
    Ok(SpectrumReport {
        alpha,
        symmetry,
        rows,
        max_lambda_hat_error,
        max_ratio_error,
    })
}

/// Largest `|𝒜 v - λ̂ v|_∞` over the eigenpairs `(λ, v)` of `A`, with
/// `λ̂` from the closed-form map and `𝒜` from the dense oracle.
pub fn verify_eigenvector_sharing(a: &Matrix, alpha: f64) -> Result<f64> {
    let (s, root, _) = symmetric_form(a)?;
    let eig = sym_eigen(&s)?;
    let diffused = exact_diffusion_oracle(a, alpha)?;
    let n = a.rows();
    let mut worst = 0.0_f64;
    for k in 0..n {
        // eigenvector of A is Π^-1/2 u for eigenvector u of the symmetric form
        let v: Vec<f64> = eig.vector(k).iter().zip(&root).map(|(u, r)| u / r).collect();
        let norm = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let hat = predicted_lambda_hat(eig.values[k], alpha);
        for i in 0..n {
            let av: f64 = diffused.row(i).iter().zip(&v).map(|(x, y)| x * y).sum();
            worst = worst.max((av - hat * v[i]).abs() / norm);
        }
    }
    Ok(worst)
}

/// Counts over equal-width bins `[edges[k], edges[k + 1])`; the last bin
/// is closed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize, low: f64, high: f64) -> Result<Self> {
        if bins == 0 || high.partial_cmp(&low) != Some(core::cmp::Ordering::Greater) {
            return Err(Error::InvalidConfig("histogram needs bins >= 1 and high > low".into()));
        }
        let width = (high - low) / bins as f64;
        let edges = (0..=bins).map(|k| low + width * k as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            if !(low..=high).contains(&v) {
                continue;
            }
            let k = (((v - low) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Ok(Self { edges, counts })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiscrepancyReport {
    /// `Δ_i` per node.
    pub values: Vec<f64>,
    pub mean: f64,
    pub histogram: Histogram,
}

pub const DISCREPANCY_BINS: usize = 20;

/// `Δ_i = |A[i, :] - U_i|_2 / deg(i)` from per-edge attention aligned with
/// `graph.edges()`, where `U_i` is uniform over node `i`'s incoming edges.
pub fn discrepancy_from_edges(graph: &Graph, attention: &[f64]) -> Result<DiscrepancyReport> {
    if attention.len() != graph.num_edges() {
        return Err(Error::ShapeMismatch {
            op: "discrepancy",
            lhs: (graph.num_edges(), 1),
            rhs: (attention.len(), 1),
        });
    }
    if graph.num_nodes() == 0 {
        return Err(Error::Empty("graph"));
    }
    let mut values = Vec::with_capacity(graph.num_nodes());
    for i in 0..graph.num_nodes() {
        let seg = graph.incoming_segment(i);
        let deg = seg.len();
        if deg == 0 {
            values.push(0.0);
            continue;
        }
        let u = 1.0 / deg as f64;
        let sq: f64 = attention[seg].iter().map(|a| (a - u) * (a - u)).sum();
        values.push(math::sqrt(sq) / deg as f64);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    // Δ_i <= sqrt(2) / deg <= sqrt(2)
    let histogram = Histogram::new(&values, DISCREPANCY_BINS, 0.0, core::f64::consts::SQRT_2)?;
    Ok(DiscrepancyReport {
        values,
        mean,
        histogram,
    })
}

/// Per-edge attention of one block and head in evaluation mode.
pub fn extract_attention(
    net: &Network,
    params: &ParamStore,
    graph: &Arc<Graph>,
    features: Option<&Matrix>,
    layer: usize,
    head: usize,
) -> Result<Vec<f64>> {
    let cfg = net.config();
    if layer >= cfg.num_blocks || head >= cfg.heads {
        return Err(Error::OutOfRange(alloc::format!(
            "layer {layer} / head {head} outside {} blocks x {} heads",
            cfg.num_blocks,
            cfg.heads
        )));
    }
    let mut tape = Tape::new();
    let b = params.bind_frozen(&mut tape);
    let x = features.map(|f| tape.constant(f.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = net.forward(&mut tape, &b, graph, x, false, &mut rng)?;
    Ok(tape.value(out.attention[layer][head]).as_slice().to_vec())
}

/// Discrepancy of a trained network's attention at `(layer, head)`.
pub fn attention_discrepancy(
    net: &Network,
    params: &ParamStore,
    graph: &Arc<Graph>,
    features: Option<&Matrix>,
    layer: usize,
    head: usize,
) -> Result<DiscrepancyReport> {
    let att = extract_attention(net, params, graph, features, layer, head)?;
    discrepancy_from_edges(graph, &att)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn path_attention() -> Matrix {
        Matrix::from_rows(&[[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [0.0, 1.0, 0.0]])
    }

    #[test]
    fn top_eigenvalue_is_fixed() {
        for alpha in [0.05, 0.3, 0.9, 1.0] {
            assert!((predicted_lambda_hat(1.0, alpha) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn path_spectrum() {
        let r = spectrum_report(&path_attention(), 0.5).unwrap();
        assert_eq!(r.symmetry, Symmetry::Reversible);
        let hats: Vec<f64> = r.rows.iter().map(|x| x.lambda_hat).collect();
        for (got, want) in hats.iter().zip([1.0 / 3.0, 0.5, 1.0]) {
            assert!((got - want).abs() < 1e-10);
        }
        assert!((hats.iter().sum::<f64>() - 11.0 / 6.0).abs() < 1e-12);
        assert!(r.max_lambda_hat_error < 1e-12);
        assert!(r.max_ratio_error < 1e-12);
        assert!(r.rows[2].ratio.is_none());
    }

    #[test]
    fn ratio_examples() {
        assert!((predicted_ratio(0.1, 0.05) - 1.0 / (0.05 / 0.95 + 0.1)).abs() < 1e-12);
        assert!(predicted_ratio(0.1, 0.05) > 6.5);
        assert!(predicted_ratio(2.0, 0.05) < 0.5);
        assert_eq!(predicted_ratio(0.7, 1.0), 0.0);
    }

    #[test]
    fn identity_sharing_residual() {
        assert!(verify_eigenvector_sharing(&Matrix::identity(4), 0.3).unwrap() < 1e-15);
        assert!(verify_eigenvector_sharing(&path_attention(), 0.5).unwrap() < 1e-8);
    }

    #[test]
    fn non_reversible_rejected() {
        // directed 3-cycle
        let a = Matrix::from_rows(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]);
        assert!(matches!(spectrum_report(&a, 0.5), Err(Error::Asymmetric(_))));
    }

    #[test]
    fn discrepancy_examples() {
        let g = Graph::new(
            3,
            1,
            alloc::vec![
                Edge::new(1, 0, 0),
                Edge::new(2, 0, 0),
                Edge::new(0, 0, 1),
                Edge::new(0, 0, 2)
            ],
            true,
        )
        .unwrap();
        let r = discrepancy_from_edges(&g, &[0.5, 0.5, 1.0, 1.0]).unwrap();
        assert!(r.values.iter().all(|&v| v == 0.0));
        let r = discrepancy_from_edges(&g, &[1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((r.values[0] - 0.5f64.sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(r.histogram.counts.iter().sum::<usize>(), 3);
    }
}
