//! Synthetic outfit corpora with planted style clusters.
//!
//! Products get a hidden style vector near one of several well separated
//! cluster centroids and a power-law popularity. Each outfit picks a
//! cluster, a popularity-weighted seed item from it, and fills further slots
//! by sampling products in proportion to
//! `popularity · exp(cos(style, seed style) / temperature)`.
//! Hidden fields are only ever written to a separate truth file.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Corpus, Outfit, Product, ProductIx, Slot, Vocabulary};
use crate::outfit_models::OutfitScorer;
use crate::pair_model::{cosine, ModelError};
use crate::par::{map_indexed, Execution};
use crate::rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("could not place {clusters} centroids with pairwise cosine below {max_cosine} in {dim} dimensions")]
    Centroids {
        clusters: usize,
        dim: usize,
        max_cosine: f64,
    },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("truth file line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

/// Largest pairwise centroid cosine allowed.
pub const MAX_CENTROID_COSINE: f64 = 0.2;

const CENTROID_ATTEMPTS: usize = 100_000;
const OUTFITS_PER_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_products: usize,
    pub n_outfits: usize,
    pub n_clusters: usize,
    /// Number of slots used, taken from the front of the canonical order.
    pub n_slots: usize,
    pub d_true: usize,
    /// Outfit sizes are uniform on `min_size..=max_size`.
    pub min_size: usize,
    pub max_size: usize,
    /// 0 picks the most similar product; infinity ignores style.
    pub noise_temperature: f64,
    /// Per-coordinate standard deviation of a product around its centroid.
    pub style_noise: f64,
    pub popularity_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_products: 400,
            n_outfits: 20_000,
            n_clusters: 5,
            n_slots: Slot::COUNT,
            d_true: 16,
            min_size: 4,
            max_size: 6,
            noise_temperature: 0.1,
            style_noise: 0.1,
            popularity_exponent: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n_clusters == 0 || self.d_true == 0 {
            return bad("n_clusters and d_true must be positive".into());
        }
        if !(1..=Slot::COUNT).contains(&self.n_slots) {
            return bad(format!("n_slots must be in 1..={}", Slot::COUNT));
        }
        if self.n_products < self.n_clusters * self.n_slots {
            return bad(format!(
                "n_products {} < n_clusters · n_slots = {}",
                self.n_products,
                self.n_clusters * self.n_slots
            ));
        }
        if self.min_size < 2 || self.min_size > self.max_size || self.max_size > self.n_slots {
            return bad(format!(
                "outfit sizes {}..={} must satisfy 2 ≤ min ≤ max ≤ n_slots ({})",
                self.min_size, self.max_size, self.n_slots
            ));
        }
        if self.noise_temperature.is_nan() || self.noise_temperature < 0.0 {
            return bad("noise_temperature must be ≥ 0".into());
        }
        if [self.style_noise, self.popularity_exponent]
            .iter()
            .any(|x| x.is_nan() || *x < 0.0)
        {
            return bad("style_noise and popularity_exponent must be ≥ 0".into());
        }
        Ok(())
    }

    fn slots(&self) -> &'static [Slot] {
        &Slot::ALL[..self.n_slots]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProduct {
    pub product: Product,
    pub cluster: usize,
    pub style: Vec<f64>,
    pub popularity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCatalog {
    pub products: Vec<SynthProduct>,
    pub centroids: Vec<Vec<f64>>,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < 1e-12 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Orthonormal centroids when they fit, rejection sampling otherwise.
fn centroids<R: Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    if k <= d {
        while out.len() < k {
            let mut v = gaussian(rng, d);
            for c in &out {
                let proj: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= proj * y);
            }
            if normalize(&mut v) {
                out.push(v);
            }
        }
        return Ok(out);
    }
    for _ in 0..CENTROID_ATTEMPTS {
        if out.len() == k {
            break;
        }
        let mut v = gaussian(rng, d);
        if normalize(&mut v) && out.iter().all(|c| cosine(c, &v) < MAX_CENTROID_COSINE) {
            out.push(v);
        }
    }
    if out.len() < k {
        return Err(SynthError::Centroids {
            clusters: k,
            dim: d,
            max_cosine: MAX_CENTROID_COSINE,
        });
    }
    Ok(out)
}

/// Products `p0000…`, slots round-robin, clusters in blocks of one product
/// per slot, popularity `1 / rank^exponent` over a random ranking.
pub fn generate_catalog(config: &SynthConfig) -> Result<SynthCatalog> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, u64::MAX);
    let centroids = centroids(config.n_clusters, config.d_true, &mut rng)?;
    let slots = config.slots();
    let mut ranks: Vec<usize> = (1..=config.n_products).collect();
    ranks.shuffle(&mut rng);
    let width = config.n_products.to_string().len().max(4);
    let products = (0..config.n_products)
        .map(|i| {
            let cluster = (i / slots.len()) % config.n_clusters;
            let style = centroids[cluster]
                .iter()
                .map(|c| c + config.style_noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            SynthProduct {
                product: Product::new(format!("p{i:0width$}"), slots[i % slots.len()]),
                cluster,
                style,
                popularity: (ranks[i] as f64).powf(-config.popularity_exponent),
            }
        })
        .collect();
    Ok(SynthCatalog { products, centroids })
}

/// Sampling tables shared by all outfit chunks.
struct Tables {
    by_slot: Vec<Vec<usize>>,
    by_cluster: Vec<Vec<usize>>,
    seed_pick: Vec<WeightedIndex<f64>>,
}

impl Tables {
    fn new(catalog: &SynthCatalog, config: &SynthConfig) -> Self {
        let mut by_slot = vec![Vec::new(); Slot::COUNT];
        let mut by_cluster = vec![Vec::new(); config.n_clusters];
        for (i, p) in catalog.products.iter().enumerate() {
            by_slot[p.product.slot.index()].push(i);
            by_cluster[p.cluster].push(i);
        }
        let seed_pick = by_cluster
            .iter()
            .map(|items| {
                WeightedIndex::new(items.iter().map(|&i| catalog.products[i].popularity))
                    .expect("every cluster has products with positive popularity")
            })
            .collect();
        Tables {
            by_slot,
            by_cluster,
            seed_pick,
        }
    }
}

/// Index into `candidates` of the product drawn to accompany `seed`.
fn draw_companion<R: Rng + ?Sized>(
    catalog: &SynthCatalog,
    candidates: &[usize],
    seed: usize,
    temperature: f64,
    rng: &mut R,
) -> usize {
    let style = &catalog.products[seed].style;
    let sims: Vec<f64> = candidates
        .iter()
        .map(|&i| cosine(&catalog.products[i].style, style))
        .collect();
    if temperature == 0.0 {
        // Most similar, first index on ties.
        return (0..candidates.len()).fold(0, |best, j| if sims[j] > sims[best] { j } else { best });
    }
    let logits: Vec<f64> = candidates
        .iter()
        .zip(&sims)
        .map(|(&i, s)| catalog.products[i].popularity.ln() + s / temperature)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights = logits.iter().map(|l| (l - max).exp());
    WeightedIndex::new(weights)
        .expect("finite non-negative weights")
        .sample(rng)
}

/// One outfit plus its cluster and seed item.
fn draw_outfit<R: Rng + ?Sized>(
    k: usize,
    catalog: &SynthCatalog,
    config: &SynthConfig,
    tables: &Tables,
    rng: &mut R,
) -> (Outfit, OutfitTruth) {
    let cluster = rng.random_range(0..config.n_clusters);
    let seed = tables.by_cluster[cluster][tables.seed_pick[cluster].sample(rng)];
    let size = rng.random_range(config.min_size..=config.max_size);
    let seed_slot = catalog.products[seed].product.slot;
    let mut others: Vec<Slot> = config.slots().iter().copied().filter(|&s| s != seed_slot).collect();
    others.shuffle(rng);
    let mut members = vec![seed];
    for &slot in &others[..size - 1] {
        let candidates = &tables.by_slot[slot.index()];
        let j = draw_companion(catalog, candidates, seed, config.noise_temperature, rng);
        members.push(candidates[j]);
    }
    members.sort_unstable();
    let outfit = Outfit {
        id: format!("o{k:07}"),
        seq: k as u64,
        products: members.iter().map(|&i| catalog.products[i].product.clone()).collect(),
    };
    (outfit, OutfitTruth { cluster, seed })
}

/// How one outfit was drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutfitTruth {
    pub cluster: usize,
    /// Catalog index of the seed item.
    pub seed: usize,
}

/// Generated outfits, with per-outfit truth in seq order.
#[derive(Debug, Clone)]
pub struct SynthOutfits {
    pub corpus: Corpus,
    pub truth: Vec<OutfitTruth>,
}

/// Draws `config.n_outfits` outfits in fixed-size chunks, each with its own
/// random stream, so the result does not depend on `exec`.
pub fn generate_outfits(catalog: &SynthCatalog, config: &SynthConfig, exec: Execution) -> Result<SynthOutfits> {
    config.validate()?;
    let tables = Tables::new(catalog, config);
    let n_chunks = config.n_outfits.div_ceil(OUTFITS_PER_CHUNK);
    let chunks = map_indexed(exec, n_chunks, |c| {
        let mut rng = rng::stream(config.seed, c as u64);
        let start = c * OUTFITS_PER_CHUNK;
        let end = (start + OUTFITS_PER_CHUNK).min(config.n_outfits);
        (start..end)
            .map(|k| draw_outfit(k, catalog, config, &tables, &mut rng))
            .collect::<Vec<_>>()
    });
    let (outfits, truth): (Vec<Outfit>, Vec<OutfitTruth>) = chunks.into_iter().flatten().unzip();
    // Ids are unique and seq is already increasing, so order is kept.
    let corpus = Corpus::new(outfits).map_err(|e| SynthError::Config(e.to_string()))?;
    Ok(SynthOutfits { corpus, truth })
}

#[derive(Serialize, Deserialize)]
struct TruthRecord {
    id: String,
    cluster: usize,
    style: Vec<f64>,
}

/// Truth sidecar: one JSON line per product.
pub fn write_truth<W: Write>(catalog: &SynthCatalog, mut w: W) -> std::io::Result<()> {
    for p in &catalog.products {
        let rec = TruthRecord {
            id: p.product.id.clone(),
            cluster: p.cluster,
            style: p.style.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Hidden cluster and style of one product.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub id: String,
    pub cluster: usize,
    pub style: Vec<f64>,
}

pub fn read_truth<R: BufRead>(r: R) -> Result<Vec<Truth>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| SynthError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TruthRecord = serde_json::from_str(&line).map_err(|e| SynthError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(Truth {
            id: rec.id,
            cluster: rec.cluster,
            style: rec.style,
        });
    }
    Ok(out)
}

pub fn save_truth(catalog: &SynthCatalog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io)?;
    write_truth(catalog, std::io::BufWriter::new(file)).map_err(io)
}

/// Mean cosine between hidden style vectors: the ceiling a learned model
/// could approach on planted data.
#[derive(Debug, Clone)]
pub struct TruthScorer {
    styles: Vec<Vec<f64>>,
}

impl TruthScorer {
    /// Styles aligned with `vocabulary`. Products missing from `truth` are an
    /// error.
    pub fn new(truth: &[Truth], vocabulary: &Vocabulary) -> Result<Self, ModelError> {
        let by_id: std::collections::HashMap<&str, &Truth> = truth.iter().map(|t| (t.id.as_str(), t)).collect();
        let styles = vocabulary
            .products()
            .iter()
            .map(|p| {
                by_id
                    .get(p.id.as_str())
                    .map(|t| t.style.clone())
                    .ok_or_else(|| ModelError::UnknownProduct(p.id.clone()))
            })
            .collect::<Result<_, _>>()?;
        Ok(TruthScorer { styles })
    }

    pub fn from_catalog(catalog: &SynthCatalog, vocabulary: &Vocabulary) -> Result<Self, ModelError> {
        let truth: Vec<Truth> = catalog
            .products
            .iter()
            .map(|p| Truth {
                id: p.product.id.clone(),
                cluster: p.cluster,
                style: p.style.clone(),
            })
            .collect();
        TruthScorer::new(&truth, vocabulary)
    }
}

impl OutfitScorer for TruthScorer {
    fn score(&self, query: ProductIx, reference: &[ProductIx]) -> Result<f64, ModelError> {
        let get = |p: ProductIx| {
            self.styles
                .get(p.get())
                .ok_or_else(|| ModelError::UnknownProduct(format!("#{}", p.get())))
        };
        if reference.is_empty() {
            return Err(ModelError::EmptyPartial);
        }
        let q = get(query)?;
        let mut sum = 0.0;
        for &r in reference {
            sum += cosine(q, get(r)?);
        }
        Ok(sum / reference.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{preprocess, read_corpus, write_corpus};

    fn small(t: f64) -> SynthConfig {
        SynthConfig {
            n_products: 80,
            n_outfits: 2000,
            noise_temperature: t,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn catalog_layout() {
        let cat = generate_catalog(&small(0.1)).unwrap();
        for s in Slot::ALL {
            assert_eq!(cat.products.iter().filter(|p| p.product.slot == s).count(), 10);
        }
        for c in 0..5 {
            for s in Slot::ALL {
                assert!(cat.products.iter().any(|p| p.cluster == c && p.product.slot == s));
            }
        }
        let one = generate_catalog(&SynthConfig {
            n_clusters: 1,
            ..small(0.1)
        })
        .unwrap();
        assert!(one.products.iter().all(|p| p.cluster == 0));
        assert_eq!(cat, generate_catalog(&small(0.1)).unwrap());
    }

    #[test]
    fn centroids_are_separated() {
        for (k, d) in [(5, 16), (4, 3), (3, 1)] {
            let cfg = SynthConfig {
                n_clusters: k,
                d_true: d,
                ..small(0.1)
            };
            match generate_catalog(&cfg) {
                Ok(cat) => {
                    for i in 0..k {
                        for j in 0..i {
                            assert!(cosine(&cat.centroids[i], &cat.centroids[j]) < MAX_CENTROID_COSINE);
                        }
                    }
                }
                // A line holds only two unit vectors.
                Err(SynthError::Centroids { .. }) => assert_eq!(d, 1),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        for cfg in [
            SynthConfig {
                n_products: 39,
                ..small(0.1)
            },
            SynthConfig {
                max_size: 9,
                ..small(0.1)
            },
            SynthConfig {
                min_size: 1,
                ..small(0.1)
            },
            SynthConfig {
                noise_temperature: -1.0,
                ..small(0.1)
            },
        ] {
            assert!(matches!(generate_catalog(&cfg), Err(SynthError::Config(_))));
        }
    }

    #[test]
    fn zero_temperature_outfits_are_pure() {
        let cfg = small(0.0);
        let cat = generate_catalog(&cfg).unwrap();
        let out = generate_outfits(&cat, &cfg, Execution::Parallel).unwrap();
        let cluster_of = |id: &str| cat.products.iter().find(|p| p.product.id == id).unwrap().cluster;
        for (o, t) in out.corpus.outfits().iter().zip(&out.truth) {
            assert!(o.products.iter().all(|p| cluster_of(&p.id) == t.cluster));
        }
    }

    #[test]
    fn infinite_temperature_follows_popularity() {
        let cfg = SynthConfig {
            n_outfits: 10_000,
            ..small(f64::INFINITY)
        };
        let cat = generate_catalog(&cfg).unwrap();
        let out = generate_outfits(&cat, &cfg, Execution::Parallel).unwrap();
        // Background probability that a slot-s draw lands in cluster c.
        let mass = |s: Slot, c: Option<usize>| -> f64 {
            cat.products
                .iter()
                .filter(|p| p.product.slot == s && c.is_none_or(|c| p.cluster == c))
                .map(|p| p.popularity)
                .sum()
        };
        let lookup: std::collections::HashMap<&str, &SynthProduct> =
            cat.products.iter().map(|p| (p.product.id.as_str(), p)).collect();
        let (mut hits, mut expect, mut var, mut n) = (0.0, 0.0, 0.0, 0usize);
        for (o, t) in out.corpus.outfits().iter().zip(&out.truth) {
            let seed_id = &cat.products[t.seed].product.id;
            for p in o.products.iter().filter(|p| &p.id != seed_id) {
                let sp = lookup[p.id.as_str()];
                let q = mass(sp.product.slot, Some(t.cluster)) / mass(sp.product.slot, None);
                hits += f64::from(u8::from(sp.cluster == t.cluster));
                expect += q;
                var += q * (1.0 - q);
                n += 1;
            }
        }
        assert!(n > 30_000);
        let se = var.sqrt();
        assert!((hits - expect).abs() < 3.0 * se, "hits {hits} expect {expect} se {se}");
    }

    #[test]
    fn sizes_follow_the_configured_range() {
        let cfg = SynthConfig {
            n_outfits: 10_000,
            ..small(0.1)
        };
        let cat = generate_catalog(&cfg).unwrap();
        let out = generate_outfits(&cat, &cfg, Execution::Parallel).unwrap();
        for size in 4..=6 {
            let f = out.corpus.outfits().iter().filter(|o| o.products.len() == size).count() as f64 / 1e4;
            assert!((f - 1.0 / 3.0).abs() < 0.02, "size {size}: {f}");
        }
    }

    #[test]
    fn execution_mode_and_round_trip() {
        let cfg = small(0.1);
        let cat = generate_catalog(&cfg).unwrap();
        let a = generate_outfits(&cat, &cfg, Execution::Parallel).unwrap();
        let b = generate_outfits(&cat, &cfg, Execution::Sequential).unwrap();
        assert_eq!(a.corpus.outfits(), b.corpus.outfits());
        let mut bytes = Vec::new();
        write_corpus(&a.corpus, &mut bytes).unwrap();
        let back = read_corpus(&bytes[..]).unwrap();
        assert_eq!(back.outfits(), a.corpus.outfits());
        let (pre, report) = preprocess(&back, 1, 0).unwrap();
        assert_eq!(pre.outfits(), a.corpus.outfits());
        assert_eq!(report.outfits_dropped, 0);
        let mut truth = Vec::new();
        write_truth(&cat, &mut truth).unwrap();
        let parsed = read_truth(&truth[..]).unwrap();
        assert_eq!(parsed.len(), 80);
        assert!(!String::from_utf8(bytes).unwrap().contains("cluster"));
    }
}
