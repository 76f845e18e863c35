//! Building evaluation instances from held-out windows and scoring them.
//!
//! Every instance hides one product of an outfit (the positive) among
//! negatives drawn uniformly without replacement from the positive's slot in
//! the same window's stock. Outfit scorers see the rest of the outfit as
//! reference; the pair scorer sees one other product of it.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Dataset, ProductIx, Slot, TimeWindow, Vocabulary};
use crate::metrics::{self, EvalInstance, MetricError, MetricReport};
use crate::outfit_models::{AnyScorer, OutfitScorer, ScorerKind};
use crate::pair_model::ModelError;
use crate::par::{try_map_indexed, Execution};
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("candidate count must be at least 2, got {0}")]
    CandidateCount(usize),
    #[error("no metric requested")]
    NoMetric,
    #[error("no {candidates}-candidate instances: all {skipped} skipped for lack of same-slot stock")]
    NoInstances { candidates: usize, skipped: usize },
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Candidate count of the ranking experiments (one positive, 19 negatives).
pub const RANKING_CANDIDATES: usize = 20;

/// One ranking task before scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub window_index: usize,
    /// Reference products in canonical slot order.
    pub reference: Vec<ProductIx>,
    pub positive: ProductIx,
    pub negatives: Vec<ProductIx>,
}

impl Query {
    pub fn candidate_count(&self) -> usize {
        1 + self.negatives.len()
    }
}

/// How the reference of a query is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMode {
    /// One other product of the outfit.
    Single,
    /// Every other product of the outfit.
    Rest,
}

impl ReferenceMode {
    pub fn for_scorer(kind: ScorerKind) -> Self {
        match kind {
            ScorerKind::Pair => ReferenceMode::Single,
            ScorerKind::Mean | ScorerKind::Attention => ReferenceMode::Rest,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuerySet {
    pub queries: Vec<Query>,
    /// Outfits skipped because the blank's slot had fewer than n − 1 other
    /// products in stock.
    pub skipped_small_stock: usize,
}

/// Window stock per slot, kept sorted.
fn stock_by_slot(window: &TimeWindow, vocabulary: &Vocabulary) -> Vec<Vec<ProductIx>> {
    Slot::ALL.iter().map(|&s| window.stock(s, vocabulary)).collect()
}

/// `k` distinct products of `stock` other than `exclude`, uniformly.
fn draw_distinct<R: Rng + ?Sized>(
    stock: &[ProductIx],
    exclude: ProductIx,
    k: usize,
    rng: &mut R,
) -> Option<Vec<ProductIx>> {
    let others: Vec<ProductIx> = stock.iter().copied().filter(|&p| p != exclude).collect();
    if others.len() < k {
        return None;
    }
    Some(
        index::sample(rng, others.len(), k)
            .into_iter()
            .map(|i| others[i])
            .collect(),
    )
}

/// One query per outfit of `windows` with `n_candidates` candidates.
///
/// The blank is a uniformly random member of the outfit. At most
/// `max_instances` queries are kept, chosen by a seeded shuffle.
pub fn build_queries(
    dataset: &Dataset,
    windows: &[usize],
    n_candidates: usize,
    mode: ReferenceMode,
    max_instances: Option<usize>,
    seed: u64,
) -> Result<QuerySet> {
    if n_candidates < 2 {
        return Err(EvalError::CandidateCount(n_candidates));
    }
    let vocabulary = dataset.vocabulary();
    let mut rng = rng::stream(seed, n_candidates as u64);
    let mut set = QuerySet::default();
    let mut windows = windows.to_vec();
    windows.sort_unstable();
    for w in windows {
        let window = &dataset.windows[w];
        let stock = stock_by_slot(window, vocabulary);
        for k in window.outfit_range() {
            let members = dataset.corpus.members(k);
            let blank = rng.random_range(0..members.len());
            let positive = members[blank];
            let rest = members.iter().copied().enumerate().filter(|&(i, _)| i != blank);
            let mut reference: Vec<ProductIx> = match mode {
                ReferenceMode::Rest => rest.map(|(_, p)| p).collect(),
                ReferenceMode::Single => {
                    let others: Vec<ProductIx> = rest.map(|(_, p)| p).collect();
                    vec![others[rng.random_range(0..others.len())]]
                }
            };
            reference.sort_by_key(|&p| vocabulary.slot(p));
            let slot = vocabulary.slot(positive);
            match draw_distinct(&stock[slot.index()], positive, n_candidates - 1, &mut rng) {
                Some(negatives) => set.queries.push(Query {
                    window_index: w,
                    reference,
                    positive,
                    negatives,
                }),
                None => set.skipped_small_stock += 1,
            }
        }
    }
    if let Some(max) = max_instances {
        if set.queries.len() > max {
            let mut pick = rng::stream(seed, u64::MAX);
            set.queries.shuffle(&mut pick);
            set.queries.truncate(max);
        }
    }
    Ok(set)
}

/// Scores every query; instances come back in query order.
pub fn score_queries<S: OutfitScorer + ?Sized>(
    scorer: &S,
    queries: &[Query],
    exec: Execution,
) -> Result<Vec<EvalInstance>> {
    Ok(try_map_indexed(exec, queries.len(), |i| {
        let q = &queries[i];
        metrics::rank(q.positive, &q.negatives, |c| scorer.score(c, &q.reference))
    })?)
}

/// Metric families an evaluation can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Top2,
    Hit,
    Fitb,
    Aps,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "top2" => Ok(Metric::Top2),
            "hit" => Ok(Metric::Hit),
            "fitb" => Ok(Metric::Fitb),
            "aps" => Ok(Metric::Aps),
            other => Err(format!("unknown metric {other:?} (expected top2, hit, fitb or aps)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub metrics: Vec<Metric>,
    /// Candidate counts for FITB.
    pub fitb_sizes: Vec<usize>,
    pub max_instances: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metrics: vec![Metric::Top2, Metric::Hit, Metric::Fitb, Metric::Aps],
            fitb_sizes: vec![4, 10],
            max_instances: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub skipped_small_stock: usize,
}

/// Runs the requested metrics. Top-2, hit rate and APS share one 20-candidate
/// query set; each FITB size gets its own.
pub fn evaluate(
    scorer: &AnyScorer<'_>,
    dataset: &Dataset,
    windows: &[usize],
    config: &EvalConfig,
    exec: Execution,
) -> Result<Evaluation> {
    if config.metrics.is_empty() {
        return Err(EvalError::NoMetric);
    }
    let mode = ReferenceMode::for_scorer(scorer.kind());
    let mut out = Evaluation::default();
    let wants = |m| config.metrics.contains(&m);

    let queries = |n| {
        let set = build_queries(dataset, windows, n, mode, config.max_instances, config.seed)?;
        if set.queries.is_empty() && set.skipped_small_stock > 0 {
            return Err(EvalError::NoInstances {
                candidates: n,
                skipped: set.skipped_small_stock,
            });
        }
        Ok(set)
    };

    if wants(Metric::Top2) || wants(Metric::Hit) || wants(Metric::Aps) {
        let set = queries(RANKING_CANDIDATES)?;
        out.skipped_small_stock += set.skipped_small_stock;
        let instances = score_queries(scorer, &set.queries, exec)?;
        out.report.instance_count = instances.len();
        if wants(Metric::Top2) {
            out.report.top2 = Some(metrics::top2(&instances)?);
        }
        if wants(Metric::Hit) {
            let (hist, mrr) = metrics::hit_rate_by_rank(&instances)?;
            let cumulative = hist
                .iter()
                .scan(0.0, |acc, h| {
                    *acc += h;
                    Some(*acc)
                })
                .collect();
            out.report.hit_rate_by_rank = Some(hist);
            out.report.cumulative_hit_rate = Some(cumulative);
            out.report.mrr = Some(mrr);
        }
        if wants(Metric::Aps) {
            out.report.aps = Some(metrics::average_precision(&instances)?);
        }
    }
    if wants(Metric::Fitb) {
        for &n in &config.fitb_sizes {
            let set = queries(n)?;
            out.skipped_small_stock += set.skipped_small_stock;
            let instances = score_queries(scorer, &set.queries, exec)?;
            out.report.instance_count = out.report.instance_count.max(instances.len());
            out.report.fitb.insert(n, metrics::fitb_accuracy(&instances, n)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{assign_splits, Corpus, Outfit, Product};
    use crate::pair_model::init_model;

    fn dataset() -> Dataset {
        let outfits = (0..120)
            .map(|k| Outfit {
                id: format!("o{k}"),
                seq: k,
                products: vec![
                    Product::new(format!("s{:02}", k % 23), Slot::Shirt),
                    Product::new(format!("t{:02}", k % 25), Slot::Trouser),
                    Product::new(format!("h{:02}", k % 21), Slot::Shoes),
                ],
            })
            .collect();
        Dataset::new(
            Corpus::new(outfits).unwrap(),
            60,
            assign_splits(2, [0.5, 0.0, 0.5], 0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn queries_are_pure_and_same_slot() {
        let ds = dataset();
        let v = ds.vocabulary();
        for mode in [ReferenceMode::Single, ReferenceMode::Rest] {
            let set = build_queries(&ds, &[0, 1], 4, mode, None, 5).unwrap();
            assert_eq!(set.queries.len(), 120);
            for q in &set.queries {
                let window = &ds.windows[q.window_index];
                let slot = v.slot(q.positive);
                assert_eq!(q.negatives.len(), 3);
                let mut seen = q.negatives.clone();
                seen.sort();
                seen.dedup();
                assert_eq!(seen.len(), 3);
                for &n in &q.negatives {
                    assert_ne!(n, q.positive);
                    assert_eq!(v.slot(n), slot);
                    assert!(window.contains(n));
                }
                let expect = if mode == ReferenceMode::Single { 1 } else { 2 };
                assert_eq!(q.reference.len(), expect);
                assert!(q.reference.iter().all(|&r| v.slot(r) != slot));
            }
        }
    }

    #[test]
    fn small_stock_is_skipped_and_cap_applies() {
        let ds = dataset();
        // Shoes stock per window is 21, so 22 negatives are impossible there.
        let set = build_queries(&ds, &[0], 23, ReferenceMode::Rest, None, 0).unwrap();
        assert!(set.skipped_small_stock > 0);
        let capped = build_queries(&ds, &[0, 1], 4, ReferenceMode::Rest, Some(7), 0).unwrap();
        assert_eq!(capped.queries.len(), 7);
        assert!(build_queries(&ds, &[0], 1, ReferenceMode::Rest, None, 0).is_err());
    }

    #[test]
    fn evaluation_is_deterministic_across_execution_modes() {
        let ds = dataset();
        let pair = init_model(ds.vocabulary().clone(), 6, 1).unwrap();
        let cfg = EvalConfig::default();
        for kind in [ScorerKind::Pair, ScorerKind::Mean] {
            let scorer = AnyScorer::new(kind, &pair, None).unwrap();
            let a = evaluate(&scorer, &ds, &[1], &cfg, Execution::Parallel).unwrap();
            let b = evaluate(&scorer, &ds, &[1], &cfg, Execution::Sequential).unwrap();
            assert_eq!(a, b);
            let r = &a.report;
            assert!(r.top2.unwrap() <= 0.5);
            assert!((r.cumulative_hit_rate.as_ref().unwrap().last().unwrap() - 1.0).abs() < 1e-12);
            assert_eq!(r.fitb.keys().copied().collect::<Vec<_>>(), vec![4, 10]);
        }
        assert!(matches!(
            AnyScorer::new(ScorerKind::Attention, &pair, None),
            Err(ModelError::MissingAttention)
        ));
    }

    #[test]
    fn all_skipped_is_an_error() {
        let ds = dataset();
        let pair = init_model(ds.vocabulary().clone(), 6, 1).unwrap();
        let scorer = AnyScorer::new(ScorerKind::Mean, &pair, None).unwrap();
        let cfg = EvalConfig {
            metrics: vec![Metric::Fitb],
            fitb_sizes: vec![30],
            ..EvalConfig::default()
        };
        let err = evaluate(&scorer, &ds, &[1], &cfg, Execution::Sequential).unwrap_err();
        assert!(matches!(
            err,
            EvalError::NoInstances {
                candidates: 30,
                skipped: 60
            }
        ));
    }
}
