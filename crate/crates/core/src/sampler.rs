//! Positive pair generation with frequency subsampling, slot- and
//! window-constrained negative sampling, and partial-outfit query samples.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::catalog::{Product, ProductIx, Slot, TimeWindow, Vocabulary};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("frequency must be positive, got {0}")]
    NonPositiveFrequency(f64),
    #[error("no negative candidates for slot {slot} in window {window}")]
    EmptyPool { slot: Slot, window: usize },
    #[error("outfit needs at least two products, got {0}")]
    OutfitTooSmall(usize),
    #[error("product {0:?} does not occur in window {1}")]
    NotInWindow(String, usize),
}

pub type Result<T, E = SamplerError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

/// An ordered (target, context) product pair. Target and context never
/// share a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairSample {
    pub target: ProductIx,
    pub context: ProductIx,
    pub label: Label,
    pub window_index: usize,
}

/// One positive pair and the negatives drawn for it. All negatives keep the
/// positive's target and replace its context with a product of the same
/// slot from the same window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingBatch {
    pub positive: PairSample,
    pub negatives: Vec<PairSample>,
}

impl TrainingBatch {
    pub fn negative_contexts(&self) -> impl Iterator<Item = ProductIx> + '_ {
        self.negatives.iter().map(|n| n.context)
    }
}

/// A partial outfit with a held-out positive query and same-slot,
/// same-window negative queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutfitSample {
    pub partial: Vec<ProductIx>,
    pub positive_query: ProductIx,
    pub negative_queries: Vec<ProductIx>,
    pub window_index: usize,
}

/// How negatives are weighted inside a slot/window pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeWeighting {
    /// Proportional to the number of window outfits a product appears in.
    #[default]
    Frequency,
    /// Every product of the slot in the window equally likely.
    Uniform,
}

/// Probability that a positive context with window frequency `frequency`
/// survives subsampling: `min(sqrt(rho / f), 1)`.
pub fn keep_probability(frequency: f64, rho: f64) -> Result<f64> {
    if frequency.is_nan() || frequency <= 0.0 {
        return Err(SamplerError::NonPositiveFrequency(frequency));
    }
    Ok((rho / frequency).sqrt().min(1.0))
}

/// Every ordered pair of distinct outfit members: `n * (n - 1)` positives.
pub fn positive_pairs(outfit: &[ProductIx], window_index: usize) -> Vec<PairSample> {
    let mut pairs = Vec::with_capacity(outfit.len() * outfit.len().saturating_sub(1));
    for (i, &target) in outfit.iter().enumerate() {
        for (j, &context) in outfit.iter().enumerate() {
            if i != j {
                pairs.push(PairSample {
                    target,
                    context,
                    label: Label::Positive,
                    window_index,
                });
            }
        }
    }
    pairs
}

/// Weighted categorical over one slot's window stock.
#[derive(Debug, Clone, Default)]
struct NegativePool {
    items: Vec<ProductIx>,
    /// Inclusive prefix sums of the item weights.
    cumulative: Vec<u64>,
}

impl NegativePool {
    fn total(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }

    fn weight_at(&self, i: usize) -> u64 {
        self.cumulative[i] - if i == 0 { 0 } else { self.cumulative[i - 1] }
    }

    /// Draws from the pool conditioned on not returning `exclude`.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, exclude: Option<ProductIx>) -> Option<ProductIx> {
        let excluded = exclude.and_then(|e| self.items.binary_search(&e).ok());
        let skip = excluded.map_or(0, |i| self.weight_at(i));
        let total = self.total() - skip;
        if total == 0 {
            return None;
        }
        let mut r = rng.random_range(0..total);
        if let Some(i) = excluded {
            // Shift past the excluded item's weight interval.
            let start = self.cumulative[i] - skip;
            if r >= start {
                r += skip;
            }
        }
        let i = self.cumulative.partition_point(|&c| c <= r);
        Some(self.items[i])
    }
}

/// Negative-sampling state for one time window: per-slot weighted pools and
/// the window frequencies used for subsampling.
#[derive(Debug, Clone)]
pub struct WindowSampler<'w> {
    window: &'w TimeWindow,
    pools: [NegativePool; Slot::COUNT],
}

impl<'w> WindowSampler<'w> {
    pub fn new(window: &'w TimeWindow, vocabulary: &Vocabulary, weighting: NegativeWeighting) -> Self {
        let mut pools: [NegativePool; Slot::COUNT] = Default::default();
        for &(p, count) in window.occurrences() {
            let pool = &mut pools[vocabulary.slot(p).index()];
            let w = match weighting {
                NegativeWeighting::Frequency => u64::from(count),
                NegativeWeighting::Uniform => 1,
            };
            pool.cumulative.push(pool.total() + w);
            pool.items.push(p);
        }
        WindowSampler { window, pools }
    }

    pub fn window(&self) -> &TimeWindow {
        self.window
    }

    pub fn window_index(&self) -> usize {
        self.window.index
    }

    /// Draws `n` products of `slot` with replacement, never returning
    /// `exclude`.
    pub fn draw_slot<R: Rng + ?Sized>(
        &self,
        slot: Slot,
        exclude: ProductIx,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<ProductIx>> {
        let pool = &self.pools[slot.index()];
        (0..n)
            .map(|_| {
                pool.draw(rng, Some(exclude)).ok_or(SamplerError::EmptyPool {
                    slot,
                    window: self.window.index,
                })
            })
            .collect()
    }

    /// Whether `slot` has any candidate besides `exclude`.
    pub fn has_candidates(&self, slot: Slot, exclude: ProductIx) -> bool {
        let pool = &self.pools[slot.index()];
        pool.items.iter().any(|&p| p != exclude)
    }
}

/// Draws `n` negatives for a positive pair from the pair's window.
pub fn draw_negatives<R: Rng + ?Sized>(
    positive: PairSample,
    sampler: &WindowSampler<'_>,
    vocabulary: &Vocabulary,
    n: usize,
    rng: &mut R,
) -> Result<TrainingBatch> {
    let slot = vocabulary.slot(positive.context);
    let negatives = sampler
        .draw_slot(slot, positive.context, n, rng)?
        .into_iter()
        .map(|context| PairSample {
            context,
            label: Label::Negative,
            ..positive
        })
        .collect();
    Ok(TrainingBatch { positive, negatives })
}

/// Emits training batches for positive pairs, discarding frequent contexts.
#[derive(Debug, Clone, Copy)]
pub struct PairSampler {
    pub n_pair: usize,
    /// Subsampling threshold; `None` keeps every positive.
    pub rho: Option<f64>,
}

impl PairSampler {
    /// Subsamples `positive` and, if it survives, attaches negatives.
    ///
    /// Returns `Ok(None)` when the context is discarded; no negatives are
    /// drawn in that case.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        positive: PairSample,
        sampler: &WindowSampler<'_>,
        vocabulary: &Vocabulary,
        rng: &mut R,
    ) -> Result<Option<TrainingBatch>> {
        if let Some(rho) = self.rho {
            let f = sampler.window().frequency(positive.context).ok_or_else(|| {
                SamplerError::NotInWindow(vocabulary.id(positive.context).to_owned(), sampler.window_index())
            })?;
            let keep = keep_probability(f, rho)?;
            if keep < 1.0 && !rng.random_bool(keep) {
                return Ok(None);
            }
        }
        draw_negatives(positive, sampler, vocabulary, self.n_pair, rng).map(Some)
    }
}

/// One query sample per partial-outfit size `1..|outfit|`.
///
/// For each size a uniformly random subset forms the partial outfit and a
/// uniformly random remaining product becomes the positive query.
/// The partial outfit is returned in canonical slot order.
pub fn outfit_samples<R: Rng + ?Sized>(
    outfit: &[ProductIx],
    n_neg: usize,
    sampler: &WindowSampler<'_>,
    vocabulary: &Vocabulary,
    rng: &mut R,
) -> Result<Vec<OutfitSample>> {
    if outfit.len() < 2 {
        return Err(SamplerError::OutfitTooSmall(outfit.len()));
    }
    let mut order = outfit.to_vec();
    (1..outfit.len())
        .map(|size| {
            order.shuffle(rng);
            let mut partial = order[..size].to_vec();
            partial.sort_by_key(|&p| vocabulary.slot(p));
            let positive_query = order[size];
            let negative_queries = sampler.draw_slot(vocabulary.slot(positive_query), positive_query, n_neg, rng)?;
            Ok(OutfitSample {
                partial,
                positive_query,
                negative_queries,
                window_index: sampler.window_index(),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct PairRecord<'a> {
    target: &'a Product,
    context: &'a Product,
    label: Label,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DumpRecord<'a> {
    TrainingBatch {
        window_index: usize,
        positive: PairRecord<'a>,
        negatives: Vec<PairRecord<'a>>,
    },
    OutfitSample {
        window_index: usize,
        partial: Vec<&'a Product>,
        positive_query: &'a Product,
        negative_queries: Vec<&'a Product>,
    },
}

fn pair_record<'a>(s: &PairSample, vocabulary: &'a Vocabulary) -> PairRecord<'a> {
    PairRecord {
        target: vocabulary.product(s.target),
        context: vocabulary.product(s.context),
        label: s.label,
    }
}

/// Debug dump: one JSON line per batch.
pub fn dump_batches<W: Write>(mut w: W, batches: &[TrainingBatch], vocabulary: &Vocabulary) -> std::io::Result<()> {
    for b in batches {
        let rec = DumpRecord::TrainingBatch {
            window_index: b.positive.window_index,
            positive: pair_record(&b.positive, vocabulary),
            negatives: b.negatives.iter().map(|n| pair_record(n, vocabulary)).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Debug dump: one JSON line per outfit sample.
pub fn dump_outfit_samples<W: Write>(
    mut w: W,
    samples: &[OutfitSample],
    vocabulary: &Vocabulary,
) -> std::io::Result<()> {
    for s in samples {
        let rec = DumpRecord::OutfitSample {
            window_index: s.window_index,
            partial: s.partial.iter().map(|&p| vocabulary.product(p)).collect(),
            positive_query: vocabulary.product(s.positive_query),
            negative_queries: s.negative_queries.iter().map(|&p| vocabulary.product(p)).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
