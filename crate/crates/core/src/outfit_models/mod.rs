//! Scoring a query product against a partial outfit.
//!
//! The mean model averages pair scores between the query and each outfit
//! member. The attention model replaces the uniform average by soft-max
//! weights over learned logits indexed by (query slot, member slot).
//! Partial outfits are always summed in canonical slot order so scores do
//! not depend on the order callers list the members in.

mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{ProductIx, Slot};
use crate::pair_model::{read_file, write_file, ModelError, PairModel, Result};

pub use self::train::{train_attention, AttentionHistory, AttentionTrainConfig};

/// Anything that scores a query product against reference products.
pub trait OutfitScorer: Sync {
    fn score(&self, query: ProductIx, reference: &[ProductIx]) -> Result<f64>;
}

/// Which scorer a request or experiment uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Pair,
    Mean,
    Attention,
}

impl std::str::FromStr for ScorerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pair" => Ok(ScorerKind::Pair),
            "mean" => Ok(ScorerKind::Mean),
            "attention" => Ok(ScorerKind::Attention),
            other => Err(format!("unknown model {other:?} (expected pair, mean or attention)")),
        }
    }
}

impl std::fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScorerKind::Pair => "pair",
            ScorerKind::Mean => "mean",
            ScorerKind::Attention => "attention",
        })
    }
}

/// Partial outfit members placed at their slot index.
pub(crate) type SlotTable = [Option<ProductIx>; Slot::COUNT];

/// Validates a (query, partial) pair and lays the partial out by slot.
pub(crate) fn slot_table(pair: &PairModel, query: ProductIx, partial: &[ProductIx]) -> Result<SlotTable> {
    let vocab = pair.vocabulary();
    let known = |p: ProductIx| {
        if p.get() < vocab.len() {
            Ok(())
        } else {
            Err(ModelError::UnknownProduct(format!("#{}", p.get())))
        }
    };
    known(query)?;
    if partial.is_empty() {
        return Err(ModelError::EmptyPartial);
    }
    let mut table: SlotTable = [None; Slot::COUNT];
    table[vocab.slot(query).index()] = Some(query);
    for &p in partial {
        known(p)?;
        let slot = vocab.slot(p);
        if table[slot.index()].replace(p).is_some() {
            return Err(ModelError::SlotCollision {
                query: vocab.id(query).to_owned(),
                slot,
            });
        }
    }
    table[vocab.slot(query).index()] = None;
    Ok(table)
}

/// Single-reference scorer backed directly by the pair model.
impl OutfitScorer for PairModel {
    fn score(&self, query: ProductIx, reference: &[ProductIx]) -> Result<f64> {
        match reference {
            [r] => self.pair_score(query, *r),
            [] => Err(ModelError::EmptyPartial),
            more => Err(ModelError::ReferenceCount(more.len())),
        }
    }
}

/// Parameter-free mean of pair scores.
#[derive(Debug, Clone, Copy)]
pub struct MeanModel<'a> {
    pub pair: &'a PairModel,
}

impl<'a> MeanModel<'a> {
    pub fn new(pair: &'a PairModel) -> Self {
        MeanModel { pair }
    }
}

pub fn mean_score(pair: &PairModel, query: ProductIx, partial: &[ProductIx]) -> Result<f64> {
    let table = slot_table(pair, query, partial)?;
    let (sum, n) = table.iter().flatten().fold((0.0, 0usize), |(s, n), &p| {
        (s + pair.pair_score_unchecked(query, p), n + 1)
    });
    Ok(sum / n as f64)
}

impl OutfitScorer for MeanModel<'_> {
    fn score(&self, query: ProductIx, reference: &[ProductIx]) -> Result<f64> {
        mean_score(self.pair, query, reference)
    }
}

/// Slot-pair soft-max attention logits, rows indexed by query slot and
/// columns by member slot. Not constrained to symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionModel {
    pub logits: [[f64; Slot::COUNT]; Slot::COUNT],
    /// Digest of the pair model the logits were trained against.
    pub pair_model_ref: String,
}

impl AttentionModel {
    /// All-zero logits: scores exactly like the mean model.
    pub fn uniform(pair_model_ref: impl Into<String>) -> Self {
        AttentionModel {
            logits: [[0.0; Slot::COUNT]; Slot::COUNT],
            pair_model_ref: pair_model_ref.into(),
        }
    }

    /// Soft-max weights of `query_slot` over the slots present in `table`;
    /// zero for absent slots.
    pub(crate) fn weights(&self, query_slot: Slot, table: &SlotTable) -> [f64; Slot::COUNT] {
        let row = &self.logits[query_slot.index()];
        let max = (0..Slot::COUNT)
            .filter(|&s| table[s].is_some())
            .map(|s| row[s])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut w = [0.0; Slot::COUNT];
        let mut total = 0.0;
        for s in (0..Slot::COUNT).filter(|&s| table[s].is_some()) {
            w[s] = (row[s] - max).exp();
            total += w[s];
        }
        w.iter_mut().for_each(|x| *x /= total);
        w
    }

    /// Weights for a query slot and a set of member slots, by slot index.
    pub fn weights_for(&self, query_slot: Slot, member_slots: &[Slot]) -> [f64; Slot::COUNT] {
        let mut table: SlotTable = [None; Slot::COUNT];
        for s in member_slots {
            table[s.index()] = Some(ProductIx(0));
        }
        self.weights(query_slot, &table)
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let file = AttentionFile {
            format_version: 1,
            kind: AttentionFile::KIND.into(),
            slot_order: Slot::ALL.to_vec(),
            logits: self.logits.iter().map(|r| r.to_vec()).collect(),
            pair_model_ref: self.pair_model_ref.clone(),
        };
        let mut bytes = serde_json::to_vec(&file).expect("attention model serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let file: AttentionFile = serde_json::from_slice(bytes).map_err(|e| ModelError::Format(e.to_string()))?;
        if file.format_version != 1 || file.kind != AttentionFile::KIND {
            return Err(ModelError::Format(format!(
                "expected {} version 1, got {} version {}",
                AttentionFile::KIND,
                file.kind,
                file.format_version
            )));
        }
        if file.slot_order != Slot::ALL {
            return Err(ModelError::Format(
                "slot_order must list the slots in canonical order".into(),
            ));
        }
        let mut logits = [[0.0; Slot::COUNT]; Slot::COUNT];
        if file.logits.len() != Slot::COUNT || file.logits.iter().any(|r| r.len() != Slot::COUNT) {
            return Err(ModelError::Format("logits must be an 8x8 matrix".into()));
        }
        for (dst, src) in logits.iter_mut().zip(&file.logits) {
            dst.copy_from_slice(src);
        }
        Ok(AttentionModel {
            logits,
            pair_model_ref: file.pair_model_ref,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_json_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        AttentionModel::from_json_slice(&read_file(path.as_ref())?)
    }
}

#[derive(Serialize, Deserialize)]
struct AttentionFile {
    format_version: u32,
    kind: String,
    slot_order: Vec<Slot>,
    logits: Vec<Vec<f64>>,
    pair_model_ref: String,
}

impl AttentionFile {
    const KIND: &'static str = "attention_model";
}

/// Attention scorer: a frozen pair model plus slot-pair logits.
#[derive(Debug, Clone, Copy)]
pub struct AttentionScorer<'a> {
    pub pair: &'a PairModel,
    pub attention: &'a AttentionModel,
}

pub fn attention_score(
    pair: &PairModel,
    attention: &AttentionModel,
    query: ProductIx,
    partial: &[ProductIx],
) -> Result<f64> {
    let table = slot_table(pair, query, partial)?;
    let weights = attention.weights(pair.vocabulary().slot(query), &table);
    Ok(table
        .iter()
        .zip(weights)
        .filter_map(|(p, w)| p.map(|p| w * pair.pair_score_unchecked(query, p)))
        .sum())
}

impl OutfitScorer for AttentionScorer<'_> {
    fn score(&self, query: ProductIx, reference: &[ProductIx]) -> Result<f64> {
        attention_score(self.pair, self.attention, query, reference)
    }
}

/// A scorer of any kind borrowing loaded models.
#[derive(Debug, Clone, Copy)]
pub enum AnyScorer<'a> {
    Pair(&'a PairModel),
    Mean(MeanModel<'a>),
    Attention(AttentionScorer<'a>),
}

impl<'a> AnyScorer<'a> {
    /// Fails when `kind` is attention and no attention model is given.
    pub fn new(kind: ScorerKind, pair: &'a PairModel, attention: Option<&'a AttentionModel>) -> Result<Self> {
        Ok(match kind {
            ScorerKind::Pair => AnyScorer::Pair(pair),
            ScorerKind::Mean => AnyScorer::Mean(MeanModel::new(pair)),
            ScorerKind::Attention => AnyScorer::Attention(AttentionScorer {
                pair,
                attention: attention.ok_or(ModelError::MissingAttention)?,
            }),
        })
    }

    pub fn kind(&self) -> ScorerKind {
        match self {
            AnyScorer::Pair(_) => ScorerKind::Pair,
            AnyScorer::Mean(_) => ScorerKind::Mean,
            AnyScorer::Attention(_) => ScorerKind::Attention,
        }
    }

    pub fn pair_model(&self) -> &'a PairModel {
        match self {
            AnyScorer::Pair(p) => p,
            AnyScorer::Mean(m) => m.pair,
            AnyScorer::Attention(a) => a.pair,
        }
    }
}

impl OutfitScorer for AnyScorer<'_> {
    fn score(&self, query: ProductIx, reference: &[ProductIx]) -> Result<f64> {
        match self {
            AnyScorer::Pair(p) => p.score(query, reference),
            AnyScorer::Mean(m) => m.score(query, reference),
            AnyScorer::Attention(a) => a.score(query, reference),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Product, Vocabulary};
    use crate::pair_model::init_model;
    use crate::rng;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn model(seed: u64) -> PairModel {
        let ps: Vec<_> = (0..48)
            .map(|i| Product::new(format!("p{i:03}"), Slot::ALL[i % Slot::COUNT]))
            .collect();
        init_model(Vocabulary::from_products(&ps).unwrap(), 6, seed).unwrap()
    }

    /// Random query plus a partial outfit of distinct, different slots.
    fn case<R: Rng>(rng: &mut R) -> (ProductIx, Vec<ProductIx>) {
        let mut slots: Vec<usize> = (0..Slot::COUNT).collect();
        slots.shuffle(rng);
        let n = rng.random_range(1..Slot::COUNT);
        let pick = |s: usize, rng: &mut R| ProductIx(s + Slot::COUNT * rng.random_range(0..6));
        let query = pick(slots[0], rng);
        let partial = slots[1..=n].iter().map(|&s| pick(s, rng)).collect();
        (query, partial)
    }

    #[test]
    fn mean_of_one_is_the_pair_score() {
        let m = model(1);
        let (q, p) = (ProductIx(0), ProductIx(3));
        assert_eq!(mean_score(&m, q, &[p]).unwrap(), m.pair_score(q, p).unwrap());
        let att = AttentionModel {
            logits: [[3.0; 8]; 8],
            pair_model_ref: String::new(),
        };
        assert_eq!(attention_score(&m, &att, q, &[p]).unwrap(), m.pair_score(q, p).unwrap());
    }

    #[test]
    fn mean_is_arithmetic_mean() {
        let m = model(2);
        let q = ProductIx(0);
        let (a, b) = (ProductIx(1), ProductIx(2));
        let expected = (m.pair_score(q, a).unwrap() + m.pair_score(q, b).unwrap()) / 2.0;
        assert!((mean_score(&m, q, &[a, b]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn input_errors() {
        let m = model(3);
        assert!(matches!(
            mean_score(&m, ProductIx(0), &[]),
            Err(ModelError::EmptyPartial)
        ));
        assert!(matches!(
            mean_score(&m, ProductIx(0), &[ProductIx(8)]),
            Err(ModelError::SlotCollision { .. })
        ));
        assert!(matches!(
            mean_score(&m, ProductIx(0), &[ProductIx(1), ProductIx(9)]),
            Err(ModelError::SlotCollision { .. })
        ));
        assert!(matches!(
            mean_score(&m, ProductIx(0), &[ProductIx(1000)]),
            Err(ModelError::UnknownProduct(_))
        ));
        assert!(OutfitScorer::score(&m, ProductIx(0), &[ProductIx(1), ProductIx(2)]).is_err());
    }

    #[test]
    fn saturated_logit_selects_one_slot() {
        let m = model(4);
        let q = ProductIx(0); // shirt
        let partial = [ProductIx(3), ProductIx(5), ProductIx(6)];
        let mut att = AttentionModel::uniform("");
        att.logits[Slot::Shirt.index()][Slot::Trouser.index()] = 20.0;
        let s = attention_score(&m, &att, q, &partial).unwrap();
        assert!((s - m.pair_score(q, ProductIx(5)).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn weights_are_asymmetric_and_normalized() {
        let mut att = AttentionModel::uniform("");
        att.logits[Slot::Shoes.index()][Slot::Belt.index()] = 1.5;
        let w = att.weights_for(Slot::Shoes, &[Slot::Belt, Slot::Shirt]);
        let back = att.weights_for(Slot::Belt, &[Slot::Shoes, Slot::Shirt]);
        assert!(w[Slot::Belt.index()] > 0.5);
        assert_eq!(back[Slot::Shoes.index()], 0.5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(w[Slot::Jacket.index()], 0.0);
    }

    #[test]
    fn zero_logits_reproduce_mean_model() {
        let m = model(5);
        let att = AttentionModel::uniform("");
        let mut rng = rng::stream(5, 0);
        for _ in 0..1000 {
            let (q, partial) = case(&mut rng);
            let a = attention_score(&m, &att, q, &partial).unwrap();
            let b = mean_score(&m, q, &partial).unwrap();
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn file_round_trip() {
        let mut att = AttentionModel::uniform("abc");
        att.logits[1][2] = -0.123456789;
        let bytes = att.to_json_bytes();
        let back = AttentionModel::from_json_slice(&bytes).unwrap();
        assert_eq!(back, att);
        assert_eq!(back.to_json_bytes(), bytes);
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["slot_order"][1], "over_shirt");
        assert_eq!(v["kind"], "attention_model");
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_bounded(seed: u64, case_seed: u64, logit_seed: u64) {
            let m = model(seed);
            let mut rng = rng::stream(case_seed, 0);
            let (q, mut partial) = case(&mut rng);
            let mut att = AttentionModel::uniform("");
            let mut lr = rng::stream(logit_seed, 0);
            for row in att.logits.iter_mut() {
                for x in row.iter_mut() {
                    *x = lr.random_range(-3.0..3.0);
                }
            }
            let a0 = attention_score(&m, &att, q, &partial).unwrap();
            let m0 = mean_score(&m, q, &partial).unwrap();
            partial.shuffle(&mut rng);
            prop_assert_eq!(a0.to_bits(), attention_score(&m, &att, q, &partial).unwrap().to_bits());
            prop_assert_eq!(m0.to_bits(), mean_score(&m, q, &partial).unwrap().to_bits());
            prop_assert!((-1.0..=1.0).contains(&a0) && (-1.0..=1.0).contains(&m0));
            let slots: Vec<Slot> = partial.iter().map(|&p| m.vocabulary().slot(p)).collect();
            let w = att.weights_for(m.vocabulary().slot(q), &slots);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
        }
    }
}
