//! Listwise ranking metrics over single-positive candidate lists.
//!
//! Every [`EvalInstance`] holds one positive and its negatives, sorted by
//! descending score with ties broken by ascending product id (equivalently
//! ascending [`ProductIx`], since vocabularies are id-sorted).

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::ProductIx;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("no evaluation instances")]
    Empty,
    #[error("instance {index} has {got} candidates, expected {expected}")]
    CandidateCount { index: usize, expected: usize, got: usize },
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub product: ProductIx,
    pub score: f64,
    pub positive: bool,
}

/// Ranking order: higher score first, then lower product index.
pub fn rank_order(a: (ProductIx, f64), b: (ProductIx, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub candidates: Vec<RankedCandidate>,
    /// 1-based rank of the positive.
    pub positive_rank: usize,
}

impl EvalInstance {
    /// Sorts pre-scored candidates; the first entry of `scored` is the positive.
    pub fn from_scores(scored: &[(ProductIx, f64)]) -> Self {
        let mut candidates: Vec<RankedCandidate> = scored
            .iter()
            .enumerate()
            .map(|(i, &(product, score))| RankedCandidate {
                product,
                score,
                positive: i == 0,
            })
            .collect();
        candidates.sort_by(|a, b| {
            rank_order((a.product, a.score), (b.product, b.score))
                // The positive never shares an id with a negative; this only
                // keeps sorting total.
                .then(b.positive.cmp(&a.positive))
        });
        let positive_rank = 1 + candidates
            .iter()
            .position(|c| c.positive)
            .expect("positive candidate present");
        EvalInstance {
            candidates,
            positive_rank,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Relevance flags in ranked order.
    pub fn relevance(&self) -> impl Iterator<Item = bool> + '_ {
        self.candidates.iter().map(|c| c.positive)
    }
}

/// Scores the positive and every negative with `score` and ranks them.
pub fn rank<F, E>(positive: ProductIx, negatives: &[ProductIx], mut score: F) -> std::result::Result<EvalInstance, E>
where
    F: FnMut(ProductIx) -> std::result::Result<f64, E>,
{
    let scored = std::iter::once(positive)
        .chain(negatives.iter().copied())
        .map(|p| score(p).map(|s| (p, s)))
        .collect::<std::result::Result<Vec<_>, E>>()?;
    Ok(EvalInstance::from_scores(&scored))
}

fn non_empty(instances: &[EvalInstance]) -> Result<()> {
    if instances.is_empty() {
        Err(MetricError::Empty)
    } else {
        Ok(())
    }
}

fn uniform_len(instances: &[EvalInstance], expected: usize) -> Result<()> {
    match instances.iter().position(|i| i.len() != expected) {
        Some(index) => Err(MetricError::CandidateCount {
            index,
            expected,
            got: instances[index].len(),
        }),
        None => Ok(()),
    }
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

/// Precision at 2: positives among the top two, divided by two. With one
/// positive per list the ceiling is 0.5.
pub fn top2(instances: &[EvalInstance]) -> Result<f64> {
    non_empty(instances)?;
    if let Some(index) = instances.iter().position(|i| i.len() < 2) {
        return Err(MetricError::CandidateCount {
            index,
            expected: 2,
            got: instances[index].len(),
        });
    }
    Ok(mean(
        instances
            .iter()
            .map(|i| i.relevance().take(2).filter(|&r| r).count() as f64 / 2.0),
        instances.len(),
    ))
}

/// Fraction of instances whose positive sits at each rank, plus the mean
/// reciprocal rank.
pub fn hit_rate_by_rank(instances: &[EvalInstance]) -> Result<(Vec<f64>, f64)> {
    non_empty(instances)?;
    let n = instances[0].len();
    uniform_len(instances, n)?;
    let mut histogram = vec![0.0; n];
    for i in instances {
        histogram[i.positive_rank - 1] += 1.0;
    }
    let total = instances.len() as f64;
    histogram.iter_mut().for_each(|h| *h /= total);
    let mrr = mean(instances.iter().map(|i| 1.0 / i.positive_rank as f64), instances.len());
    Ok((histogram, mrr))
}

/// Fill-in-the-blank accuracy: fraction of `n`-candidate instances whose
/// positive is ranked first.
pub fn fitb_accuracy(instances: &[EvalInstance], n: usize) -> Result<f64> {
    non_empty(instances)?;
    uniform_len(instances, n)?;
    Ok(mean(
        instances.iter().map(|i| f64::from(u8::from(i.positive_rank == 1))),
        instances.len(),
    ))
}

/// Average precision of one ranked relevance list: mean over relevant
/// positions of the precision at that cut-off.
pub fn average_precision_of(relevance: impl IntoIterator<Item = bool>) -> f64 {
    let (mut hits, mut sum) = (0usize, 0.0);
    for (k, rel) in relevance.into_iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Macro-averaged average precision. With a single positive at rank r the
/// per-instance value is 1/r.
pub fn average_precision(instances: &[EvalInstance]) -> Result<f64> {
    non_empty(instances)?;
    Ok(mean(
        instances.iter().map(|i| average_precision_of(i.relevance())),
        instances.len(),
    ))
}

/// Evaluation summary. Fields left `None` were not requested.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top2: Option<f64>,
    /// Fraction of instances with the positive at rank r (index r − 1).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hit_rate_by_rank: Option<Vec<f64>>,
    /// Cumulative hit rate: fraction with the positive at rank ≤ r.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cumulative_hit_rate: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mrr: Option<f64>,
    /// FITB accuracy keyed by candidate count.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub fitb: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aps: Option<f64>,
    pub instance_count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    /// Instance with `n` candidates and the positive at `rank`, built
    /// through real scores.
    fn at_rank(rank: usize, n: usize) -> EvalInstance {
        let mut scored = vec![(ProductIx(0), (n - rank) as f64 + 0.5)];
        scored.extend((1..n).map(|i| (ProductIx(i), (n - i) as f64 + if i < rank { 1.0 } else { 0.0 })));
        let inst = EvalInstance::from_scores(&scored);
        assert_eq!(inst.positive_rank, rank);
        inst
    }

    #[test]
    fn rank_contract() {
        let negs: Vec<_> = (1..20).map(ProductIx).collect();
        let best = rank(ProductIx(0), &negs, |p| Ok::<_, ()>(if p.0 == 0 { 2.0 } else { 1.0 })).unwrap();
        assert_eq!(best.positive_rank, 1);
        let worst = rank(ProductIx(0), &negs, |p| {
            Ok::<_, ()>(if p.0 == 0 { -1.0 } else { p.0 as f64 })
        })
        .unwrap();
        assert_eq!(worst.positive_rank, 20);
        assert!(rank(ProductIx(0), &negs, |_| Err::<f64, _>("boom")).is_err());
    }

    #[test]
    fn ties_break_by_product_id() {
        let negs: Vec<_> = (1..20).map(|i| ProductIx(i * 2)).collect();
        let tied = rank(ProductIx(15), &negs, |_| Ok::<_, ()>(0.25)).unwrap();
        // Ids below 15 among negatives: 2,4,...,14 -> 7 of them.
        assert_eq!(tied.positive_rank, 8);
        let order: Vec<_> = tied.candidates.iter().map(|c| c.product.0).collect();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(order, sorted);
    }

    #[test]
    fn metric_examples() {
        let first: Vec<_> = (0..5).map(|_| at_rank(1, 20)).collect();
        assert_eq!(top2(&first).unwrap(), 0.5);
        assert_eq!(hit_rate_by_rank(&first).unwrap().1, 1.0);
        let third: Vec<_> = (0..5).map(|_| at_rank(3, 20)).collect();
        assert_eq!(top2(&third).unwrap(), 0.0);
        let fourth: Vec<_> = (0..5).map(|_| at_rank(4, 20)).collect();
        assert_eq!(hit_rate_by_rank(&fourth).unwrap().1, 0.25);
        assert_eq!(average_precision(&[at_rank(1, 20)]).unwrap(), 1.0);
        assert_eq!(average_precision(&[at_rank(2, 20)]).unwrap(), 0.5);
        assert_eq!(fitb_accuracy(&[at_rank(1, 4), at_rank(2, 4)], 4).unwrap(), 0.5);
    }

    #[test]
    fn error_paths() {
        assert_eq!(top2(&[]), Err(MetricError::Empty));
        assert_eq!(average_precision(&[]), Err(MetricError::Empty));
        assert!(matches!(
            hit_rate_by_rank(&[at_rank(1, 4), at_rank(1, 5)]),
            Err(MetricError::CandidateCount { index: 1, .. })
        ));
        assert!(matches!(
            fitb_accuracy(&[at_rank(1, 4)], 10),
            Err(MetricError::CandidateCount {
                expected: 10,
                got: 4,
                ..
            })
        ));
        assert!(top2(&[at_rank(1, 1)]).is_err());
    }

    #[test]
    fn single_positive_ap_is_reciprocal_rank() {
        for n in 1..25 {
            for r in 1..=n {
                let rel = (1..=n).map(|k| k == r);
                assert_eq!(average_precision_of(rel), 1.0 / r as f64);
            }
        }
        assert_eq!(average_precision_of([true, false, true]), (1.0 + 2.0 / 3.0) / 2.0);
        assert_eq!(average_precision_of([false, false]), 0.0);
    }

    #[test]
    fn random_scorer_histogram_is_flat() {
        let mut rng = rng::stream(21, 0);
        let negs: Vec<_> = (1..20).map(ProductIx).collect();
        let instances: Vec<_> = (0..10_000)
            .map(|_| rank(ProductIx(0), &negs, |_| Ok::<_, ()>(rng.random::<f64>())).unwrap())
            .collect();
        let (hist, _) = hit_rate_by_rank(&instances).unwrap();
        let se = (0.05f64 * 0.95 / 10_000.0).sqrt();
        for h in &hist {
            assert!((h - 0.05).abs() < 4.0 * se, "{h}");
        }
        assert!((hist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
