use std::sync::Arc;

use magna_core::analysis::{predicted_lambda_hat, predicted_ratio, spectrum_report, verify_eigenvector_sharing};
use magna_core::attention::{attention_diffusion, attention_weights, exact_diffusion_oracle, DiffusionConfig};
use magna_core::graph::Triple;
use magna_core::net::{HeadSpec, InputSpec, ModelSpec, Network, NetworkConfig};
use magna_core::tasks::{distmult_scores, filtered_ranks, kl_label_smoothing_loss, RankingMetrics};
use magna_core::{Edge, Graph, KgDataset, Matrix, Tape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(seed: u64, n: usize, p: f64, relations: usize) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for src in 0..n {
        for dst in 0..n {
            if rng.gen_bool(p) {
                edges.push(Edge::new(src, rng.gen_range(0..relations), dst));
            }
        }
    }
    Graph::new(n, relations, edges, true)
        .unwrap()
        .with_isolated_self_loops()
}

fn random_undirected(seed: u64, n: usize, p: f64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        // a spanning path keeps every degree positive
        if i + 1 < n {
            edges.push(Edge::new(i, 0, i + 1));
        }
        for j in i + 2..n {
            if rng.gen_bool(p) {
                edges.push(Edge::new(i, 0, j));
            }
        }
    }
    Graph::undirected(n, 1, &edges).unwrap()
}

fn attention_matrix(g: &Arc<Graph>, seed: u64) -> (Matrix, Tape, magna_core::Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tape::new();
    let s = t.constant(Matrix::from_fn(g.num_edges(), 1, |_, _| rng.gen_range(-3.0..3.0)));
    let a = attention_weights(&mut t, s, g).unwrap();
    let dense = g.dense_from_edges(t.value(a).as_slice()).unwrap();
    (dense, t, a)
}

fn uniform_attention(g: &Graph) -> Matrix {
    let w: Vec<f64> = (0..g.num_nodes())
        .flat_map(|i| {
            let d = g.in_degree(i);
            std::iter::repeat_n(1.0 / d as f64, d)
        })
        .collect();
    g.dense_from_edges(&w).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), n in 1usize..15, p in 0.0f64..0.6) {
        let g = Arc::new(random_graph(seed, n, p, 2));
        let (a, _, _) = attention_matrix(&g, seed ^ 1);
        for i in 0..n {
            let row = a.row(i);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diffusion_error_bound_and_monotone(
        seed in any::<u64>(),
        n in 1usize..20,
        p in 0.0f64..0.5,
        alpha in prop::sample::select(vec![0.1, 0.25, 0.5]),
    ) {
        let g = Arc::new(random_graph(seed, n, p, 1));
        let (a, mut t, att) = attention_matrix(&g, seed ^ 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let h = Matrix::from_fn(n, 3, |_, _| rng.gen_range(-2.0..2.0));
        let exact = exact_diffusion_oracle(&a, alpha).unwrap().matmul(&h).unwrap();
        let hv = t.constant(h.clone());
        let mut prev = f64::INFINITY;
        for k in 1..=12 {
            let cfg = DiffusionConfig::new(alpha, k).unwrap();
            let z = attention_diffusion(&mut t, att, hv, &cfg, &g).unwrap();
            let err = t.value(z).sub(&exact).unwrap().max_abs();
            prop_assert!(err <= cfg.truncation_bound() * h.max_abs() + 1e-12);
            prop_assert!(err <= prev + 1e-12);
            prev = err;
        }
    }

    #[test]
    fn dense_diffusion_equals_series(seed in any::<u64>(), n in 1usize..15, p in 0.0f64..0.6, alpha in 0.1f64..1.0) {
        let g = Arc::new(random_graph(seed, n, p, 1));
        let (a, _, _) = attention_matrix(&g, seed ^ 4);
        let dense = exact_diffusion_oracle(&a, alpha).unwrap();
        let mut power = Matrix::identity(n);
        let mut series = Matrix::zeros(n, n);
        let mut theta = alpha;
        for _ in 0..=200 {
            series = series.add(&power.scale(theta)).unwrap();
            power = power.matmul(&a).unwrap();
            theta *= 1.0 - alpha;
        }
        prop_assert!(dense.sub(&series).unwrap().max_abs() <= 1e-8);
    }

    #[test]
    fn spectral_map_on_uniform_attention(seed in any::<u64>(), n in 2usize..25, p in 0.0f64..0.5, alpha in 0.05f64..0.95) {
        let g = random_undirected(seed, n, p);
        let a = uniform_attention(&g);
        let r = spectrum_report(&a, alpha).unwrap();
        prop_assert!(r.max_lambda_hat_error <= 1e-8);
        prop_assert!(r.max_ratio_error <= 1e-8);
        for row in &r.rows {
            prop_assert!(row.lambda_g >= -1e-12 && row.lambda_g <= 2.0 + 1e-12);
        }
        prop_assert!(verify_eigenvector_sharing(&a, alpha).unwrap() <= 1e-8);
    }

    #[test]
    fn closed_forms_are_monotone(a in -1.0f64..1.0, b in -1.0f64..1.0, alpha in 0.01f64..0.99) {
        prop_assume!((a - b).abs() > 1e-9);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(predicted_lambda_hat(lo, alpha) < predicted_lambda_hat(hi, alpha));
        let (glo, ghi) = (1.0 - hi, 1.0 - lo);
        prop_assert!(predicted_ratio(glo, alpha) > predicted_ratio(ghi, alpha));
    }

    #[test]
    fn smaller_alpha_amplifies_low_frequencies(lg in 1e-6f64..2.0) {
        prop_assert!(predicted_ratio(lg, 0.05) > predicted_ratio(lg, 0.3));
    }

    #[test]
    fn distmult_is_symmetric(v in prop::collection::vec(-5.0f64..5.0, 12)) {
        let (h, rest) = v.split_at(4);
        let (r, t) = rest.split_at(4);
        let ents_t = Matrix::from_vec(1, 4, t.to_vec()).unwrap();
        let ents_h = Matrix::from_vec(1, 4, h.to_vec()).unwrap();
        let forward = distmult_scores(h, r, &ents_t).unwrap()[0];
        let backward = distmult_scores(t, r, &ents_h).unwrap()[0];
        let direct: f64 = (0..4).map(|k| h[k] * r[k] * t[k]).sum();
        prop_assert!((forward - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        prop_assert!((forward - backward).abs() <= 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn kl_loss_nonnegative_and_zero_at_target(
        logits in prop::collection::vec(-4.0f64..4.0, 6),
        answers in prop::collection::btree_set(0usize..6, 1..4),
        eps in 0.0f64..0.9,
    ) {
        let answers: Vec<usize> = answers.into_iter().collect();
        let mut t = Tape::new();
        let l = t.constant(Matrix::from_vec(1, 6, logits).unwrap());
        let loss = kl_label_smoothing_loss(&mut t, l, std::slice::from_ref(&answers), eps).unwrap();
        prop_assert!(t.value(loss)[(0, 0)] >= -1e-12);

        let target = magna_core::tasks::smoothed_target(6, &answers, eps).unwrap();
        let opt: Vec<f64> = target.iter().map(|p| p.max(1e-300).ln()).collect();
        let l = t.constant(Matrix::from_vec(1, 6, opt).unwrap());
        let loss = kl_label_smoothing_loss(&mut t, l, &[answers], eps).unwrap();
        prop_assert!(t.value(loss)[(0, 0)].abs() <= 1e-9);
    }

    #[test]
    fn ranking_metric_invariants(ranks in prop::collection::vec(1.0f64..60.0, 1..40)) {
        let ranks: Vec<f64> = ranks.iter().map(|r| (r * 2.0).round() / 2.0).collect();
        let m = RankingMetrics::from_ranks(&ranks).unwrap();
        prop_assert!(m.mr >= 1.0);
        prop_assert!(m.mrr > 0.0 && m.mrr <= 1.0);
        prop_assert!(m.hits1 <= m.hits3 && m.hits3 <= m.hits10);
    }

    #[test]
    fn filtered_ranks_match_sorting_oracle(seed in any::<u64>(), n in 2usize..50, r in 1usize..4, m in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut triples: Vec<Triple> = (0..m)
            .map(|_| Triple::new(rng.gen_range(0..n), rng.gen_range(0..r), rng.gen_range(0..n)))
            .collect();
        triples.sort();
        triples.dedup();
        let split = triples.len() * 2 / 3;
        let test = triples.split_off(split.max(1).min(triples.len()));
        let kg = KgDataset::new(n, r, triples.clone(), vec![], test.clone()).unwrap();
        // integer scores make ties common
        let table: Vec<Vec<f64>> = (0..n * 2 * r)
            .map(|_| (0..n).map(|_| rng.gen_range(0..4) as f64).collect())
            .collect();
        let score = |e: usize, rel: usize| table[e * 2 * r + rel].clone();
        let eval = if test.is_empty() { &triples } else { &test };
        let ranks = filtered_ranks(&kg, eval, |e, rel| Ok(score(e, rel))).unwrap();

        let all: Vec<Triple> = kg.train.iter().chain(&kg.valid).chain(&kg.test).copied().collect();
        let oracle = |e: usize, rel: usize, target: usize, reverse: bool| -> f64 {
            let known = |c: usize| {
                all.iter().any(|t| {
                    if reverse {
                        t.tail == e && t.rel + r == rel && t.head == c
                    } else {
                        t.head == e && t.rel == rel && t.tail == c
                    }
                })
            };
            let s = score(e, rel);
            let mut cands: Vec<(f64, usize)> = (0..n)
                .filter(|&c| c == target || !known(c))
                .map(|c| (s[c], c))
                .collect();
            cands.sort_by(|a, b| b.0.total_cmp(&a.0));
            let first = cands.iter().position(|c| c.0 == s[target]).unwrap();
            let last = cands.iter().rposition(|c| c.0 == s[target]).unwrap();
            // mean 1-based position over the tied block
            (first + 1 + last + 1) as f64 / 2.0
        };
        for (t, got) in eval.iter().zip(&ranks) {
            prop_assert_eq!(got.tail_rank, oracle(t.head, t.rel, t.tail, false));
            prop_assert_eq!(got.head_rank, oracle(t.tail, t.rel + r, t.head, true));
        }
    }
}

#[test]
fn permutation_equivariance() {
    let n = 12;
    let g = random_graph(5, n, 0.25, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Matrix::from_fn(n, 5, |_, _| rng.gen_range(-1.0..1.0));
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let gp = g.permuted(&perm).unwrap();
    let mut xp = Matrix::zeros(n, 5);
    for (old, &new) in perm.iter().enumerate() {
        xp.row_mut(new).copy_from_slice(x.row(old));
    }
    let spec = ModelSpec {
        network: NetworkConfig {
            num_blocks: 2,
            model_dim: 6,
            heads: 3,
            relation_dim: 4,
            diffusion: DiffusionConfig::new(0.2, 5).unwrap(),
            ..NetworkConfig::default()
        },
        input: InputSpec::Features { dim: 5 },
        head: HeadSpec::Classifier { classes: 3 },
        graph_relations: 2,
    };
    let (net, store) = Network::new(spec, &mut rng).unwrap();
    let run = |graph: Graph, feats: &Matrix| {
        let graph = Arc::new(graph);
        let mut t = Tape::new();
        let b = store.bind_frozen(&mut t);
        let f = t.constant(feats.clone());
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let out = net.forward(&mut t, &b, &graph, Some(f), false, &mut r).unwrap();
        t.value(out.repr).clone()
    };
    let y = run(g, &x);
    let yp = run(gp, &xp);
    for (old, &new) in perm.iter().enumerate() {
        for (a, b) in y.row(old).iter().zip(yp.row(new)) {
            assert!((a - b).abs() <= 1e-10, "node {old}: {a} vs {b}");
        }
    }
}
