//! Product / outfit data model, corpus ingestion, preprocessing, time
//! windows and train/validation/test splits.

mod io;
mod preprocess;
mod window;

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::io::{load_corpus, read_corpus, save_corpus, write_corpus};
pub use self::preprocess::{preprocess, PreprocessReport};
pub use self::window::{assign_splits, window_split, Dataset, Split, SplitAssignment, SplitManifest, TimeWindow};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown slot {slot:?}")]
    UnknownSlot { line: usize, slot: String },
    #[error("product {id:?} declared with conflicting slots {first} and {second}")]
    SlotConflict { id: String, first: Slot, second: Slot },
    #[error("split fractions {0:?} must be non-negative and sum to 1")]
    InvalidFractions([f64; 3]),
    #[error("split assignment covers {assigned} windows but the corpus has {windows}")]
    SplitMismatch { windows: usize, assigned: usize },
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T, E = CatalogError> = std::result::Result<T, E>;

/// Functional slot a product fills in an outfit.
///
/// Declaration order is the canonical order used by file formats and by the
/// attention logit matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Shirt,
    OverShirt,
    Suit,
    Jacket,
    Belt,
    Trouser,
    Shoes,
    Other,
}

impl Slot {
    pub const COUNT: usize = 8;

    pub const ALL: [Slot; Slot::COUNT] = [
        Slot::Shirt,
        Slot::OverShirt,
        Slot::Suit,
        Slot::Jacket,
        Slot::Belt,
        Slot::Trouser,
        Slot::Shoes,
        Slot::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Slot> {
        Slot::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::Shirt => "shirt",
            Slot::OverShirt => "over_shirt",
            Slot::Suit => "suit",
            Slot::Jacket => "jacket",
            Slot::Belt => "belt",
            Slot::Trouser => "trouser",
            Slot::Shoes => "shoes",
            Slot::Other => "other",
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown slot {0:?}")]
pub struct UnknownSlot(pub String);

impl FromStr for Slot {
    type Err = UnknownSlot;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Slot::ALL
            .into_iter()
            .find(|slot| slot.name() == s)
            .ok_or_else(|| UnknownSlot(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub slot: Slot,
}

impl Product {
    pub fn new(id: impl Into<String>, slot: Slot) -> Self {
        Product { id: id.into(), slot }
    }
}

/// Dense index of a product within a [`Vocabulary`].
///
/// Vocabularies are sorted by product id, so ordering by `ProductIx` is the
/// same as ordering by id. Rankings rely on this for their tie-break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProductIx(pub usize);

impl ProductIx {
    pub fn get(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outfit {
    #[serde(rename = "outfit_id")]
    pub id: String,
    pub seq: u64,
    pub products: Vec<Product>,
}

impl Outfit {
    /// True when no two products share a slot.
    pub fn has_distinct_slots(&self) -> bool {
        let mut seen = [false; Slot::COUNT];
        self.products
            .iter()
            .all(|p| !std::mem::replace(&mut seen[p.slot.index()], true))
    }
}

/// Products sorted by id, with an id lookup table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    products: Vec<Product>,
    index: HashMap<String, ProductIx>,
}

impl Vocabulary {
    /// Builds a vocabulary from possibly repeated products.
    ///
    /// Repeats of the same id are merged; an id seen with two different
    /// slots is rejected.
    pub fn from_products<'a, I>(products: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Product>,
    {
        let mut slots: HashMap<&'a str, Slot> = HashMap::new();
        for p in products {
            match slots.get(p.id.as_str()) {
                Some(&first) if first != p.slot => {
                    return Err(CatalogError::SlotConflict {
                        id: p.id.clone(),
                        first,
                        second: p.slot,
                    })
                }
                Some(_) => {}
                None => {
                    slots.insert(&p.id, p.slot);
                }
            }
        }
        let mut products: Vec<Product> = slots.into_iter().map(|(id, slot)| Product::new(id, slot)).collect();
        products.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self::from_sorted_unchecked(products))
    }

    /// Builds a vocabulary from a list that must already be strictly sorted
    /// by id (the order in which model files store it).
    pub fn from_sorted(products: Vec<Product>) -> Result<Self> {
        if let Some(w) = products.windows(2).find(|w| w[0].id >= w[1].id) {
            return Err(CatalogError::InvalidArgument(format!(
                "vocabulary not strictly sorted by id at {:?}",
                w[1].id
            )));
        }
        Ok(Self::from_sorted_unchecked(products))
    }

    fn from_sorted_unchecked(products: Vec<Product>) -> Self {
        let index = products
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.clone(), ProductIx(i)))
            .collect();
        Vocabulary { products, index }
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn product(&self, ix: ProductIx) -> &Product {
        &self.products[ix.0]
    }

    pub fn slot(&self, ix: ProductIx) -> Slot {
        self.products[ix.0].slot
    }

    pub fn id(&self, ix: ProductIx) -> &str {
        &self.products[ix.0].id
    }

    pub fn lookup(&self, id: &str) -> Option<ProductIx> {
        self.index.get(id).copied()
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn iter(&self) -> impl Iterator<Item = (ProductIx, &Product)> {
        self.products.iter().enumerate().map(|(i, p)| (ProductIx(i), p))
    }

    /// Same ids with the same slots in the same order.
    pub fn same_products(&self, other: &Vocabulary) -> bool {
        self.products == other.products
    }
}

/// Seq-ordered outfits plus the vocabulary they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    outfits: Vec<Outfit>,
    vocabulary: Vocabulary,
    members: Vec<Vec<ProductIx>>,
}

impl Corpus {
    /// Sorts `outfits` by seq (stable) and derives the vocabulary.
    pub fn new(mut outfits: Vec<Outfit>) -> Result<Self> {
        outfits.sort_by_key(|o| o.seq);
        let vocabulary = Vocabulary::from_products(outfits.iter().flat_map(|o| &o.products))?;
        let members = outfits
            .iter()
            .map(|o| {
                o.products
                    .iter()
                    .map(|p| vocabulary.lookup(&p.id).expect("vocabulary built from outfits"))
                    .collect()
            })
            .collect();
        Ok(Corpus {
            outfits,
            vocabulary,
            members,
        })
    }

    pub fn outfits(&self) -> &[Outfit] {
        &self.outfits
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    /// Vocabulary indices of outfit `k`'s products, in file order.
    pub fn members(&self, k: usize) -> &[ProductIx] {
        &self.members[k]
    }

    pub fn len(&self) -> usize {
        self.outfits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outfits.is_empty()
    }
}
