//! Time windows and window-level train/validation/test splits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{CatalogError, Corpus, Outfit, ProductIx, Result, Slot, Vocabulary};
use crate::rng;

/// A block of consecutively sent outfits, the unit of stock availability.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeWindow {
    pub index: usize,
    range: Range<usize>,
    /// (product, number of outfits in this window containing it), sorted by product.
    occurrences: Vec<(ProductIx, u32)>,
    total_occurrences: u64,
}

impl TimeWindow {
    fn build(index: usize, range: Range<usize>, corpus: &Corpus) -> Self {
        let mut counts = std::collections::BTreeMap::<ProductIx, u32>::new();
        for k in range.clone() {
            for &p in corpus.members(k) {
                *counts.entry(p).or_default() += 1;
            }
        }
        let total_occurrences = counts.values().map(|&c| u64::from(c)).sum();
        TimeWindow {
            index,
            range,
            occurrences: counts.into_iter().collect(),
            total_occurrences,
        }
    }

    /// Positions of this window's outfits in the corpus.
    pub fn outfit_range(&self) -> Range<usize> {
        self.range.clone()
    }

    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    pub fn outfits<'c>(&self, corpus: &'c Corpus) -> &'c [Outfit] {
        &corpus.outfits()[self.range.clone()]
    }

    /// Products appearing in this window with their occurrence counts.
    pub fn occurrences(&self) -> &[(ProductIx, u32)] {
        &self.occurrences
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = ProductIx> + '_ {
        self.occurrences.iter().map(|&(p, _)| p)
    }

    pub fn contains(&self, product: ProductIx) -> bool {
        self.count(product) > 0
    }

    pub fn count(&self, product: ProductIx) -> u32 {
        self.occurrences
            .binary_search_by_key(&product, |&(p, _)| p)
            .map_or(0, |i| self.occurrences[i].1)
    }

    pub fn total_occurrences(&self) -> u64 {
        self.total_occurrences
    }

    /// Relative frequency of `product` among all product occurrences in the
    /// window; `None` when it does not occur.
    pub fn frequency(&self, product: ProductIx) -> Option<f64> {
        match self.count(product) {
            0 => None,
            c => Some(f64::from(c) / self.total_occurrences as f64),
        }
    }

    /// Window stock for one slot, in product order.
    pub fn stock(&self, slot: Slot, vocabulary: &Vocabulary) -> Vec<ProductIx> {
        self.vocabulary().filter(|&p| vocabulary.slot(p) == slot).collect()
    }
}

/// Cuts the seq-ordered corpus into consecutive windows of `window_size`
/// outfits; only the last may be shorter.
pub fn window_split(corpus: &Corpus, window_size: usize) -> Result<Vec<TimeWindow>> {
    if window_size == 0 {
        return Err(CatalogError::InvalidArgument("window_size must be at least 1".into()));
    }
    let n = corpus.len();
    Ok((0..n.div_ceil(window_size))
        .map(|w| {
            let start = w * window_size;
            TimeWindow::build(w, start..(start + window_size).min(n), corpus)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(CatalogError::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// Split membership of every window, indexed by window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitAssignment(pub Vec<Split>);

impl SplitAssignment {
    pub fn split_of(&self, window: usize) -> Split {
        self.0[window]
    }

    pub fn windows_in(&self, split: Split) -> Vec<usize> {
        (0..self.0.len()).filter(|&w| self.0[w] == split).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Window counts per split by largest remainder, so each count is within one
/// window of `fraction * n`. Remainder ties go to train, then validation.
fn split_counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact = fractions.map(|f| f * n as f64);
    let mut counts = exact.map(|e| (e + 1e-9).floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Assigns whole windows to train / validation / test by a seeded uniform
/// shuffle of window indices.
pub fn assign_splits(n_windows: usize, fractions: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(CatalogError::InvalidFractions(fractions));
    }
    let [train, validation, _] = split_counts(n_windows, fractions);
    let mut order: Vec<usize> = (0..n_windows).collect();
    order.shuffle(&mut rng::stream(seed, 0));
    let mut splits = vec![Split::Test; n_windows];
    for (rank, &w) in order.iter().enumerate() {
        splits[w] = if rank < train {
            Split::Train
        } else if rank < train + validation {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(SplitAssignment(splits))
}

/// On-disk record of how a corpus was windowed and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format_version: u32,
    pub kind: String,
    pub window_size: usize,
    pub fractions: [f64; 3],
    pub seed: u64,
    pub windows: SplitAssignment,
}

impl SplitManifest {
    pub const KIND: &'static str = "split_assignment";

    pub fn new(window_size: usize, fractions: [f64; 3], seed: u64, windows: SplitAssignment) -> Self {
        SplitManifest {
            format_version: 1,
            kind: Self::KIND.into(),
            window_size,
            fractions,
            seed,
            windows,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| CatalogError::Io {
            path: path.to_owned(),
            source,
        })?;
        let manifest: SplitManifest =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| CatalogError::Parse {
                line: e.line(),
                message: e.to_string(),
            })?;
        if manifest.format_version != 1 || manifest.kind != Self::KIND {
            return Err(CatalogError::InvalidArgument(format!(
                "{}: not a version 1 split manifest",
                path.display()
            )));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| CatalogError::Io {
            path: path.to_owned(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err)
    }
}

/// A preprocessed corpus with its windows and split assignment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: Corpus,
    pub windows: Vec<TimeWindow>,
    pub splits: SplitAssignment,
    pub window_size: usize,
}

impl Dataset {
    pub fn new(corpus: Corpus, window_size: usize, splits: SplitAssignment) -> Result<Self> {
        let windows = window_split(&corpus, window_size)?;
        if windows.len() != splits.len() {
            return Err(CatalogError::SplitMismatch {
                windows: windows.len(),
                assigned: splits.len(),
            });
        }
        Ok(Dataset {
            corpus,
            windows,
            splits,
            window_size,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        self.corpus.vocabulary()
    }

    pub fn windows_in(&self, split: Split) -> Vec<&TimeWindow> {
        self.splits
            .windows_in(split)
            .into_iter()
            .map(|w| &self.windows[w])
            .collect()
    }

    pub fn latest_window(&self) -> Option<&TimeWindow> {
        self.windows.last()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Product;
    use proptest::prelude::*;

    fn corpus(n: usize) -> Corpus {
        Corpus::new(
            (0..n)
                .map(|k| Outfit {
                    id: format!("o{k:05}"),
                    seq: k as u64,
                    products: vec![
                        Product::new(format!("s{}", k % 7), Slot::Shirt),
                        Product::new(format!("t{}", k % 5), Slot::Trouser),
                    ],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn partition_sizes() {
        let c = corpus(2500);
        let sizes: Vec<_> = window_split(&c, 1000).unwrap().iter().map(|w| w.len()).collect();
        assert_eq!(sizes, [1000, 1000, 500]);

        let one = window_split(&corpus(1), 1000).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), 1);

        let w = window_split(&corpus(3000), 1000).unwrap();
        assert_eq!(w[1].outfit_range(), 1000..2000);
        assert!(window_split(&c, 0).is_err());
        assert!(window_split(&corpus(0), 10).unwrap().is_empty());
    }

    #[test]
    fn window_frequencies_sum_to_one() {
        let c = corpus(100);
        for w in window_split(&c, 30).unwrap() {
            let total: f64 = w.vocabulary().map(|p| w.frequency(p).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert_eq!(w.stock(Slot::Shirt, c.vocabulary()).len(), 7);
        }
    }

    #[test]
    fn split_rounding_and_validation() {
        let a = assign_splits(10, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!(a.windows_in(Split::Train).len(), 8);
        assert_eq!(a.windows_in(Split::Validation).len(), 1);
        assert_eq!(a.windows_in(Split::Test).len(), 1);
        assert_eq!(a, assign_splits(10, [0.8, 0.1, 0.1], 1).unwrap());
        assert!(matches!(
            assign_splits(10, [0.5, 0.5, 0.2], 1),
            Err(CatalogError::InvalidFractions(_))
        ));
        assert!(assign_splits(10, [1.2, -0.1, -0.1], 1).is_err());
    }

    #[test]
    fn dataset_rejects_mismatched_assignment() {
        let splits = assign_splits(2, [0.5, 0.5, 0.0], 0).unwrap();
        assert!(matches!(
            Dataset::new(corpus(2500), 1000, splits),
            Err(CatalogError::SplitMismatch {
                windows: 3,
                assigned: 2
            })
        ));
    }

    proptest! {
        #[test]
        fn windows_cover_corpus_exactly_once(n in 0usize..300, size in 1usize..50) {
            let c = corpus(n);
            let windows = window_split(&c, size).unwrap();
            let joined: Vec<_> = windows.iter().flat_map(|w| w.outfits(&c).iter().cloned()).collect();
            prop_assert_eq!(joined.as_slice(), c.outfits());
            for w in &windows[..windows.len().saturating_sub(1)] {
                prop_assert_eq!(w.len(), size);
            }
        }

        #[test]
        fn splits_partition_windows(n in 0usize..200, a in 0.0f64..1.0, b in 0.0f64..1.0, seed: u64) {
            let train = a;
            let validation = (1.0 - a) * b;
            let fractions = [train, validation, 1.0 - train - validation];
            let s = assign_splits(n, fractions, seed).unwrap();
            prop_assert_eq!(s.len(), n);
            let mut all: Vec<_> = [Split::Train, Split::Validation, Split::Test]
                .iter()
                .flat_map(|&sp| s.windows_in(sp))
                .collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for (i, sp) in [Split::Train, Split::Validation, Split::Test].into_iter().enumerate() {
                let got = s.windows_in(sp).len() as f64;
                prop_assert!((got - fractions[i] * n as f64).abs() <= 1.0 + 1e-9);
            }
        }
    }
}
