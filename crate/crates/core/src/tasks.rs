//! Task heads, losses and evaluation metrics.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{KgDataset, Triple};
use crate::numerics::{Matrix, Tape, Var};
use crate::{Error, Result};

/// `repr W + b`.
pub fn classifier_logits(tape: &mut Tape, repr: Var, weight: Var, bias: Var) -> Result<Var> {
    let z = tape.matmul(repr, weight)?;
    tape.add_row(z, bias)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of `(node, class)` pairs whose logit row peaks at `class`.
pub fn accuracy(logits: &Matrix, labeled: &[(usize, usize)]) -> Result<f64> {
    if labeled.is_empty() {
        return Err(Error::Empty("accuracy mask"));
    }
    let hits = labeled.iter().filter(|&&(n, c)| argmax(logits.row(n)) == c).count();
    Ok(hits as f64 / labeled.len() as f64)
}

/// Mean negative log-softmax over the labeled nodes, and their accuracy.
pub fn cross_entropy_loss(tape: &mut Tape, logits: Var, labeled: &[(usize, usize)]) -> Result<(Var, f64)> {
    if labeled.is_empty() {
        return Err(Error::Empty("cross-entropy mask"));
    }
    let classes = tape.shape(logits).1;
    let mut targets = Matrix::zeros(labeled.len(), classes);
    for (k, &(_, c)) in labeled.iter().enumerate() {
        if c >= classes {
            return Err(Error::OutOfRange(format!("class {c} >= {classes}")));
        }
        targets[(k, c)] = 1.0;
    }
    let rows: Arc<[usize]> = labeled.iter().map(|&(n, _)| n).collect();
    let loss = tape.softmax_kl(logits, &rows, targets)?;
    let acc = accuracy(tape.value(logits), labeled)?;
    Ok((loss, acc))
}

/// `score(t) = Σ_k e_h[k] w_r[k] e_t[k]` for every row `e_t` of `entities`.
pub fn distmult_scores(head: &[f64], relation: &[f64], entities: &Matrix) -> Result<Vec<f64>> {
    if head.len() != relation.len() || head.len() != entities.cols() {
        return Err(Error::ShapeMismatch {
            op: "distmult_scores",
            lhs: (head.len(), relation.len()),
            rhs: entities.shape(),
        });
    }
    let q: Vec<f64> = head.iter().zip(relation).map(|(a, b)| a * b).collect();
    let q = Matrix::from_vec(1, q.len(), q)?;
    Ok(q.matmul_t(entities)?.into_vec())
}

/// 1-N DistMult logits for a batch of `(entity, relation)` queries:
/// `(E[e] ⊙ W[r]) Eᵀ`, shape `batch x N`.
pub fn distmult_logits(tape: &mut Tape, entities: Var, relations: Var, queries: &[(usize, usize)]) -> Result<Var> {
    if queries.is_empty() {
        return Err(Error::Empty("DistMult query batch"));
    }
    let e: Arc<[usize]> = queries.iter().map(|q| q.0).collect();
    let r: Arc<[usize]> = queries.iter().map(|q| q.1).collect();
    let eh = tape.gather_rows(entities, &e)?;
    let wr = tape.gather_rows(relations, &r)?;
    let q = tape.mul(eh, wr)?;
    tape.matmul_t(q, entities)
}

/// `(1 - ε)` spread uniformly over `answers` plus `ε` spread over all `n`.
pub fn smoothed_target(n: usize, answers: &[usize], eps: f64) -> Result<Vec<f64>> {
    if answers.is_empty() {
        return Err(Error::Empty("true answer set"));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidConfig(format!("label smoothing {eps} outside [0, 1)")));
    }
    let mut t = vec![eps / n as f64; n];
    let share = (1.0 - eps) / answers.len() as f64;
    for &a in answers {
        if a >= n {
            return Err(Error::OutOfRange(format!("answer {a} >= {n}")));
        }
        t[a] += share;
    }
    Ok(t)
}

/// Mean over rows of `KL(target ‖ softmax(logits))` with label-smoothed
/// multi-answer targets. `logits` is `batch x N`.
pub fn kl_label_smoothing_loss(tape: &mut Tape, logits: Var, answers: &[Vec<usize>], eps: f64) -> Result<Var> {
    let (b, n) = tape.shape(logits);
    if answers.len() != b {
        return Err(Error::ShapeMismatch {
            op: "kl_label_smoothing_loss",
            lhs: (b, n),
            rhs: (answers.len(), n),
        });
    }
    let mut data = Vec::with_capacity(b * n);
    for a in answers {
        data.extend(smoothed_target(n, a, eps)?);
    }
    let rows: Arc<[usize]> = (0..b).collect();
    tape.softmax_kl(logits, &rows, Matrix::from_vec(b, n, data)?)
}

/// Rank of `target` among candidates that are not in `filtered`
/// (the target itself always competes): `1 + #greater + #ties / 2`.
pub fn filtered_rank(scores: &[f64], target: usize, filtered: Option<&BTreeSet<usize>>) -> Result<f64> {
    let Some(&s) = scores.get(target) else {
        return Err(Error::OutOfRange(format!(
            "target {target} missing from {} candidates",
            scores.len()
        )));
    };
    if !s.is_finite() {
        return Err(Error::NonFinite("ranking score"));
    }
    let mut greater = 0usize;
    let mut ties = 0usize;
    for (e, &v) in scores.iter().enumerate() {
        if e == target || filtered.is_some_and(|f| f.contains(&e)) {
            continue;
        }
        if v > s {
            greater += 1;
        } else if v == s {
            ties += 1;
        }
    }
    Ok(1.0 + greater as f64 + ties as f64 / 2.0)
}

/// Filtered ranks of one triple.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TripleRanks {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
    /// Rank of the tail for `(head, rel, ?)`.
    pub tail_rank: f64,
    /// Rank of the head for `(tail, rel⁻¹, ?)`.
    pub head_rank: f64,
}

/// Filtered tail and head ranks for every triple.
///
/// `score(entity, relation)` returns one score per entity. Head prediction
/// uses the reverse-relation query, so both directions share the scorer.
pub fn filtered_ranks<F>(kg: &KgDataset, triples: &[Triple], mut score: F) -> Result<Vec<TripleRanks>>
where
    F: FnMut(usize, usize) -> Result<Vec<f64>>,
{
    let mut out = Vec::with_capacity(triples.len());
    for t in triples {
        let rev = kg.reverse_relation(t.rel);
        let tail_scores = score(t.head, t.rel)?;
        let head_scores = score(t.tail, rev)?;
        for s in [&tail_scores, &head_scores] {
            if s.len() != kg.num_entities {
                return Err(Error::ShapeMismatch {
                    op: "filtered_ranks",
                    lhs: (s.len(), 1),
                    rhs: (kg.num_entities, 1),
                });
            }
        }
        out.push(TripleRanks {
            head: t.head,
            rel: t.rel,
            tail: t.tail,
            tail_rank: filtered_rank(&tail_scores, t.tail, kg.known_answers(t.head, t.rel))?,
            head_rank: filtered_rank(&head_scores, t.head, kg.known_answers(t.tail, rev))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankingMetrics {
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl RankingMetrics {
    pub fn from_ranks(ranks: &[f64]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::Empty("rank list"));
        }
        let n = ranks.len() as f64;
        let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Ok(Self {
            mr: ranks.iter().sum::<f64>() / n,
            mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
            hits1: hits(1.0),
            hits3: hits(3.0),
            hits10: hits(10.0),
        })
    }

    /// Metrics over both directions of every triple.
    pub fn from_triple_ranks(ranks: &[TripleRanks]) -> Result<Self> {
        let all: Vec<f64> = ranks.iter().flat_map(|r| [r.tail_rank, r.head_rank]).collect();
        Self::from_ranks(&all)
    }
}
