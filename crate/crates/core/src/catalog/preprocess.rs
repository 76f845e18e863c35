use std::collections::{HashMap, HashSet};

use rand::Rng;

use super::{CatalogError, Corpus, Outfit, Result, Slot};
use crate::rng;

/// What [`preprocess`] removed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PreprocessReport {
    /// Distinct product ids dropped by the frequency filter.
    pub rare_products_removed: usize,
    /// Outfits in which at least one slot held several products.
    pub outfits_deduplicated: usize,
    /// Outfits dropped for having fewer than two products left.
    pub outfits_dropped: usize,
    /// Set when nothing survived; callers surface it as a warning.
    pub empty_result: bool,
}

/// Cleans a raw corpus in three fixed steps:
///
/// 1. products appearing in fewer than `min_frequency` raw outfits are
///    removed from every outfit (one pass, not iterated to a fixed point);
/// 2. where an outfit holds several products of one slot, one of them is
///    kept uniformly at random;
/// 3. outfits left with fewer than two products are dropped.
pub fn preprocess(raw: &Corpus, min_frequency: usize, seed: u64) -> Result<(Corpus, PreprocessReport)> {
    if min_frequency == 0 {
        return Err(CatalogError::InvalidArgument("min_frequency must be at least 1".into()));
    }
    let mut report = PreprocessReport::default();

    let mut memberships: HashMap<&str, usize> = HashMap::new();
    for outfit in raw.outfits() {
        let distinct: HashSet<&str> = outfit.products.iter().map(|p| p.id.as_str()).collect();
        for id in distinct {
            *memberships.entry(id).or_default() += 1;
        }
    }
    let rare: HashSet<&str> = memberships
        .iter()
        .filter(|&(_, &n)| n < min_frequency)
        .map(|(&id, _)| id)
        .collect();
    report.rare_products_removed = rare.len();

    let mut rng = rng::stream(seed, 0);
    let mut outfits = Vec::with_capacity(raw.len());
    for outfit in raw.outfits() {
        let kept: Vec<_> = outfit
            .products
            .iter()
            .filter(|p| !rare.contains(p.id.as_str()))
            .collect();

        let mut by_slot: [Vec<usize>; Slot::COUNT] = Default::default();
        for (pos, p) in kept.iter().enumerate() {
            by_slot[p.slot.index()].push(pos);
        }
        let mut keep = vec![true; kept.len()];
        let mut deduplicated = false;
        for positions in by_slot.iter().filter(|v| v.len() > 1) {
            deduplicated = true;
            let winner = positions[rng.random_range(0..positions.len())];
            for &pos in positions {
                keep[pos] = pos == winner;
            }
        }
        if deduplicated {
            report.outfits_deduplicated += 1;
        }

        let products: Vec<_> = kept
            .into_iter()
            .zip(keep)
            .filter(|&(_, k)| k)
            .map(|(p, _)| p.clone())
            .collect();
        if products.len() < 2 {
            report.outfits_dropped += 1;
            continue;
        }
        outfits.push(Outfit {
            id: outfit.id.clone(),
            seq: outfit.seq,
            products,
        });
    }
    report.empty_result = outfits.is_empty();
    Ok((Corpus::new(outfits)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Product;
    use proptest::prelude::*;

    fn outfit(id: &str, seq: u64, products: &[(&str, Slot)]) -> Outfit {
        Outfit {
            id: id.into(),
            seq,
            products: products.iter().map(|&(p, s)| Product::new(p, s)).collect(),
        }
    }

    #[test]
    fn product_seen_twice_is_removed_at_threshold_three() {
        let raw = Corpus::new(vec![
            outfit(
                "o1",
                0,
                &[("rare", Slot::Belt), ("s", Slot::Shirt), ("t", Slot::Trouser)],
            ),
            outfit(
                "o2",
                1,
                &[("rare", Slot::Belt), ("s", Slot::Shirt), ("t", Slot::Trouser)],
            ),
            outfit("o3", 2, &[("s", Slot::Shirt), ("t", Slot::Trouser)]),
        ])
        .unwrap();
        let (c, report) = preprocess(&raw, 3, 0).unwrap();
        assert_eq!(report.rare_products_removed, 1);
        assert!(c.vocabulary().lookup("rare").is_none());
        assert!(c.outfits().iter().all(|o| o.products.len() == 2));
    }

    #[test]
    fn exactly_one_of_two_shirts_survives() {
        let raw = Corpus::new(vec![outfit(
            "o",
            0,
            &[("a", Slot::Shirt), ("b", Slot::Shirt), ("t", Slot::Trouser)],
        )])
        .unwrap();
        let mut winners = HashSet::new();
        for seed in 0..32 {
            let (c, report) = preprocess(&raw, 1, seed).unwrap();
            assert_eq!(report.outfits_deduplicated, 1);
            let o = &c.outfits()[0];
            let shirts: Vec<_> = o.products.iter().filter(|p| p.slot == Slot::Shirt).collect();
            assert_eq!(shirts.len(), 1);
            winners.insert(shirts[0].id.clone());
        }
        // Both shirts win for some seed: the choice is random, not positional.
        assert_eq!(winners.len(), 2);
    }

    #[test]
    fn outfit_reduced_to_one_product_is_dropped() {
        let raw = Corpus::new(vec![
            outfit("o1", 0, &[("rare", Slot::Belt), ("s", Slot::Shirt)]),
            outfit("o2", 1, &[("s", Slot::Shirt), ("t", Slot::Trouser)]),
            outfit("o3", 2, &[("s", Slot::Shirt), ("t", Slot::Trouser)]),
            outfit("o4", 3, &[("s", Slot::Shirt), ("t", Slot::Trouser)]),
        ])
        .unwrap();
        let (c, report) = preprocess(&raw, 3, 0).unwrap();
        assert_eq!(report.outfits_dropped, 1);
        assert_eq!(c.len(), 3);
        assert!(c.outfits().iter().all(|o| o.id != "o1"));
    }

    #[test]
    fn empty_result_is_flagged_not_an_error() {
        let raw = Corpus::new(vec![outfit("o", 0, &[("a", Slot::Shirt), ("b", Slot::Shoes)])]).unwrap();
        let (c, report) = preprocess(&raw, 3, 0).unwrap();
        assert!(c.is_empty());
        assert!(report.empty_result);
        assert!(preprocess(&raw, 0, 0).is_err());
    }

    fn arb_raw() -> impl Strategy<Value = Corpus> {
        let product = (0usize..12).prop_map(|i| (format!("p{i:02}"), Slot::ALL[i % Slot::COUNT]));
        let outfit = prop::collection::vec(product, 1..7);
        prop::collection::vec(outfit, 0..40).prop_map(|outfits| {
            Corpus::new(
                outfits
                    .into_iter()
                    .enumerate()
                    .map(|(k, ps)| Outfit {
                        id: format!("o{k}"),
                        seq: k as u64,
                        products: ps.into_iter().map(|(id, s)| Product::new(id, s)).collect(),
                    })
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn output_satisfies_outfit_invariants(raw in arb_raw(), min_freq in 1usize..4, seed: u64) {
            let (c, _) = preprocess(&raw, min_freq, seed).unwrap();
            for o in c.outfits() {
                prop_assert!(o.has_distinct_slots());
                prop_assert!(o.products.len() >= 2 && o.products.len() <= Slot::COUNT);
            }
        }

        #[test]
        fn deterministic_given_seed(raw in arb_raw(), seed: u64) {
            prop_assert_eq!(preprocess(&raw, 2, seed).unwrap(), preprocess(&raw, 2, seed).unwrap());
        }

        #[test]
        fn second_pass_is_identity_once_constraints_hold(raw in arb_raw(), min_freq in 1usize..4, seed: u64) {
            let (once, _) = preprocess(&raw, min_freq, seed).unwrap();
            let mut counts = vec![0usize; once.vocabulary().len()];
            for k in 0..once.len() {
                for p in once.members(k) {
                    counts[p.get()] += 1;
                }
            }
            // Steps 2 and 3 can push a survivor back under the threshold; only
            // then may a second pass change anything.
            if counts.iter().any(|&n| n < min_freq) {
                return Ok(());
            }
            let (twice, report) = preprocess(&once, min_freq, seed ^ 0x5eed).unwrap();
            prop_assert_eq!(report, PreprocessReport { empty_result: once.is_empty(), ..Default::default() });
            prop_assert_eq!(once, twice);
        }
    }
}
