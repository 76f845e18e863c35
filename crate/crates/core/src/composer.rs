//! Outfit generation by beam search over a fixed slot order.
//!
//! The first slot seeds `b` random single-product outfits. Each later slot
//! extends every beam by every candidate in that slot's pool, scoring the
//! candidate against the outfit built so far. Beams are ranked by the mean of
//! their incremental scores and the best `b` survive.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ProductIx, Slot, TimeWindow, Vocabulary};
use crate::outfit_models::OutfitScorer;
use crate::pair_model::ModelError;
use crate::par::{try_map_indexed, Execution};
use crate::rng;

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("slot order is empty")]
    EmptySlotOrder,
    #[error("beam width must be at least 1")]
    ZeroBeamWidth,
    #[error("slot {0} appears more than once in the slot order")]
    DuplicateSlot(Slot),
    #[error("no candidates for slot {0}")]
    EmptyPool(Slot),
    #[error("{got} candidate pools for {expected} slots")]
    PoolCount { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = ComposeError> = std::result::Result<T, E>;

pub const DEFAULT_SLOT_ORDER: [Slot; 6] = [
    Slot::Jacket,
    Slot::Suit,
    Slot::Shirt,
    Slot::Trouser,
    Slot::Shoes,
    Slot::Belt,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeamConfig {
    pub slot_order: Vec<Slot>,
    pub beam_width: usize,
    /// Candidate pools aligned with `slot_order`.
    pub pools: Vec<Vec<ProductIx>>,
    pub seed: u64,
}

impl BeamConfig {
    /// Pools from one window's stock. Slots without stock are an error.
    pub fn from_window(
        window: &TimeWindow,
        vocabulary: &Vocabulary,
        slot_order: Vec<Slot>,
        beam_width: usize,
        seed: u64,
    ) -> Result<Self> {
        let pools = slot_order.iter().map(|&s| window.stock(s, vocabulary)).collect();
        let config = BeamConfig {
            slot_order,
            beam_width,
            pools,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slot_order.is_empty() {
            return Err(ComposeError::EmptySlotOrder);
        }
        if self.beam_width == 0 {
            return Err(ComposeError::ZeroBeamWidth);
        }
        let mut seen = [false; Slot::COUNT];
        for &s in &self.slot_order {
            if std::mem::replace(&mut seen[s.index()], true) {
                return Err(ComposeError::DuplicateSlot(s));
            }
        }
        if self.pools.len() != self.slot_order.len() {
            return Err(ComposeError::PoolCount {
                expected: self.slot_order.len(),
                got: self.pools.len(),
            });
        }
        match self.slot_order.iter().zip(&self.pools).find(|(_, p)| p.is_empty()) {
            Some((&s, _)) => Err(ComposeError::EmptyPool(s)),
            None => Ok(()),
        }
    }

    /// The start products: a seeded shuffle of the first pool, truncated to
    /// the beam width. A wider beam with the same seed starts from a superset.
    pub fn start_products(&self) -> Vec<ProductIx> {
        let mut pool = self.pools[0].clone();
        pool.shuffle(&mut rng::stream(self.seed, 0));
        pool.truncate(self.beam_width);
        pool
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredOutfit {
    /// One product per slot, in slot order.
    pub products: Vec<ProductIx>,
    /// Incremental score of each product after the first.
    pub step_scores: Vec<f64>,
    /// Mean of `step_scores`; 0 for a single product.
    pub score: f64,
}

impl ScoredOutfit {
    fn start(p: ProductIx) -> Self {
        ScoredOutfit {
            products: vec![p],
            step_scores: Vec::new(),
            score: 0.0,
        }
    }

    fn extend(&self, p: ProductIx, step: f64) -> Self {
        let mut products = self.products.clone();
        products.push(p);
        let mut step_scores = self.step_scores.clone();
        step_scores.push(step);
        let score = step_scores.iter().sum::<f64>() / step_scores.len() as f64;
        ScoredOutfit {
            products,
            step_scores,
            score,
        }
    }
}

/// Higher score first; ties by product indices, lexicographically.
pub fn beam_order(a: &ScoredOutfit, b: &ScoredOutfit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.products.cmp(&b.products))
}

/// Runs the search; returns at most `beam_width` outfits, best first.
pub fn beam_search<S: OutfitScorer + ?Sized>(
    scorer: &S,
    config: &BeamConfig,
    exec: Execution,
) -> Result<Vec<ScoredOutfit>> {
    config.validate()?;
    let mut beams: Vec<ScoredOutfit> = config.start_products().into_iter().map(ScoredOutfit::start).collect();
    beams.sort_by(beam_order);

    for pool in &config.pools[1..] {
        let width = pool.len();
        let current = &beams;
        let mut extended = try_map_indexed(exec, current.len() * width, |i| {
            let (beam, cand) = (&current[i / width], pool[i % width]);
            scorer.score(cand, &beam.products).map(|s| beam.extend(cand, s))
        })?;
        extended.sort_by(beam_order);
        extended.truncate(config.beam_width);
        beams = extended;
    }
    Ok(beams)
}
