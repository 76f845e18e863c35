//! Target/context product embeddings and the pairwise style-fit score.
//!
//! Each product has a target vector `u` and a context vector `v`. Style fit
//! between two products of different slots is the mean of the two
//! cross-space cosines, `½ (cos(u_a, v_b) + cos(u_b, v_a))`.

pub mod adagrad;
pub mod sgns;
mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{CatalogError, Product, ProductIx, Slot, Vocabulary};
use crate::rng;
use crate::sampler::{NegativeWeighting, SamplerError};

pub use self::adagrad::{adagrad_step, AdaGradState};
pub use self::sgns::{batch_gradients, batch_log_prob, BatchGradients};
pub use self::train::{train, train_split, TrainHistory};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("embedding dimension must be at least 1")]
    ZeroDimension,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown product {0:?}")]
    UnknownProduct(String),
    #[error("products {a:?} and {b:?} share slot {slot}; only cross-slot pairs are scored")]
    SameSlot { a: String, b: String, slot: Slot },
    #[error("empty partial outfit")]
    EmptyPartial,
    #[error("query {query:?} collides with slot {slot} already in the partial outfit")]
    SlotCollision { query: String, slot: Slot },
    #[error("the pair model scores against exactly one reference product, got {0}")]
    ReferenceCount(usize),
    #[error("attention scoring requested but no attention model is loaded")]
    MissingAttention,
    #[error("model vocabulary does not match the corpus vocabulary")]
    VocabularyMismatch,
    #[error("invalid model file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Training hyper-parameters. Defaults are the production configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    /// Negatives per positive pair.
    pub n_pair: usize,
    /// Subsampling threshold; `None` disables subsampling.
    pub rho: Option<f64>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub negative_weighting: NegativeWeighting,
    /// Scale each pair's gradient by `1 / |outfit|`.
    pub weight_by_outfit_size: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 40,
            n_pair: 80,
            rho: Some(0.0002),
            learning_rate: 1.0,
            epochs: 30,
            seed: 0,
            epsilon: adagrad::DEFAULT_EPSILON,
            negative_weighting: NegativeWeighting::Frequency,
            weight_by_outfit_size: false,
        }
    }
}

/// Row-major embedding matrices sharing one vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PairModel {
    dim: usize,
    vocabulary: Vocabulary,
    target: Vec<f64>,
    context: Vec<f64>,
}

const TARGET_INIT_STREAM: u64 = u64::MAX;
const CONTEXT_INIT_STREAM: u64 = u64::MAX - 1;

/// Fresh model with every coordinate uniform in `[-0.5/m, 0.5/m]`; target and
/// context matrices come from independent streams of `seed`.
pub fn init_model(vocabulary: Vocabulary, dim: usize, seed: u64) -> Result<PairModel> {
    if vocabulary.is_empty() {
        return Err(ModelError::EmptyVocabulary);
    }
    if dim == 0 {
        return Err(ModelError::ZeroDimension);
    }
    let half = 0.5 / dim as f64;
    let fill = |stream| {
        let mut rng = rng::stream(seed, stream);
        (0..vocabulary.len() * dim)
            .map(|_| rng.random_range(-half..=half))
            .collect::<Vec<_>>()
    };
    Ok(PairModel {
        dim,
        target: fill(TARGET_INIT_STREAM),
        context: fill(CONTEXT_INIT_STREAM),
        vocabulary,
    })
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let norm = sgns::dot(a, a).sqrt() * sgns::dot(b, b).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    (sgns::dot(a, b) / norm).clamp(-1.0, 1.0)
}

impl PairModel {
    pub fn from_parts(vocabulary: Vocabulary, dim: usize, target: Vec<f64>, context: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(ModelError::ZeroDimension);
        }
        let expected = vocabulary.len() * dim;
        for m in [&target, &context] {
            if m.len() != expected {
                return Err(ModelError::DimensionMismatch { expected, got: m.len() });
            }
        }
        Ok(PairModel {
            dim,
            vocabulary,
            target,
            context,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn target(&self, p: ProductIx) -> &[f64] {
        &self.target[p.0 * self.dim..(p.0 + 1) * self.dim]
    }

    pub fn context(&self, p: ProductIx) -> &[f64] {
        &self.context[p.0 * self.dim..(p.0 + 1) * self.dim]
    }

    pub(crate) fn matrices_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.target, &mut self.context)
    }

    /// Copy with every entry of both matrices multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> PairModel {
        let scale = |m: &[f64]| m.iter().map(|x| x * factor).collect();
        PairModel {
            dim: self.dim,
            vocabulary: self.vocabulary.clone(),
            target: scale(&self.target),
            context: scale(&self.context),
        }
    }

    pub fn lookup(&self, id: &str) -> Result<ProductIx> {
        self.vocabulary
            .lookup(id)
            .ok_or_else(|| ModelError::UnknownProduct(id.to_owned()))
    }

    fn check(&self, p: ProductIx) -> Result<()> {
        if p.0 < self.vocabulary.len() {
            Ok(())
        } else {
            Err(ModelError::UnknownProduct(format!("#{}", p.0)))
        }
    }

    /// Style fit in `[-1, 1]` between products of different slots.
    /// Symmetric bit-for-bit in its arguments.
    pub fn pair_score(&self, a: ProductIx, b: ProductIx) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        let slot = self.vocabulary.slot(a);
        if slot == self.vocabulary.slot(b) {
            return Err(ModelError::SameSlot {
                a: self.vocabulary.id(a).to_owned(),
                b: self.vocabulary.id(b).to_owned(),
                slot,
            });
        }
        Ok(self.pair_score_unchecked(a, b))
    }

    pub(crate) fn pair_score_unchecked(&self, a: ProductIx, b: ProductIx) -> f64 {
        0.5 * (cosine(self.target(a), self.context(b)) + cosine(self.target(b), self.context(a)))
    }

    pub fn pair_score_by_id(&self, a: &str, b: &str) -> Result<f64> {
        self.pair_score(self.lookup(a)?, self.lookup(b)?)
    }

    fn to_file(&self) -> ModelFile {
        let rows = |m: &[f64]| m.chunks(self.dim).map(<[f64]>::to_vec).collect();
        ModelFile {
            format_version: 1,
            kind: ModelFile::KIND.into(),
            m: self.dim,
            vocabulary: self.vocabulary.products().to_vec(),
            target: rows(&self.target),
            context: rows(&self.context),
        }
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec(&self.to_file()).expect("model serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let file: ModelFile = serde_json::from_slice(bytes).map_err(|e| ModelError::Format(e.to_string()))?;
        if file.format_version != 1 || file.kind != ModelFile::KIND {
            return Err(ModelError::Format(format!(
                "expected {} version 1, got {} version {}",
                ModelFile::KIND,
                file.kind,
                file.format_version
            )));
        }
        let vocabulary = Vocabulary::from_sorted(file.vocabulary)?;
        let rows = vocabulary.len();
        let flatten = |m: Vec<Vec<f64>>| -> Result<Vec<f64>> {
            if m.len() != rows {
                return Err(ModelError::Format(format!("expected {rows} rows, got {}", m.len())));
            }
            if let Some(r) = m.iter().find(|r| r.len() != file.m) {
                return Err(ModelError::DimensionMismatch {
                    expected: file.m,
                    got: r.len(),
                });
            }
            Ok(m.into_iter().flatten().collect())
        };
        let target = flatten(file.target)?;
        let context = flatten(file.context)?;
        PairModel::from_parts(vocabulary, file.m, target, context)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_json_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        PairModel::from_json_slice(&read_file(path.as_ref())?)
    }

    /// SHA-256 of the serialized model, hex encoded.
    pub fn digest(&self) -> String {
        digest_hex(&self.to_json_bytes())
    }

    /// Tab-separated `id, slot, d0 .. d{m-1}` rows of target vectors.
    pub fn write_embedding_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "id\tslot")?;
        for d in 0..self.dim {
            write!(w, "\td{d}")?;
        }
        writeln!(w)?;
        for (ix, product) in self.vocabulary.iter() {
            write!(w, "{}\t{}", product.id, product.slot)?;
            for x in self.target(ix) {
                write!(w, "\t{x}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    /// Writes the model file to `model_path` and the target-space TSV to
    /// `tsv_path`.
    pub fn export(&self, model_path: impl AsRef<Path>, tsv_path: impl AsRef<Path>) -> Result<()> {
        self.save(&model_path)?;
        let tsv_path = tsv_path.as_ref();
        let io_err = |source| ModelError::Io {
            path: tsv_path.to_owned(),
            source,
        };
        let file = File::create(tsv_path).map_err(io_err)?;
        self.write_embedding_tsv(BufWriter::new(file)).map_err(io_err)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kind: String,
    m: usize,
    vocabulary: Vec<Product>,
    target: Vec<Vec<f64>>,
    context: Vec<Vec<f64>>,
}

impl ModelFile {
    const KIND: &'static str = "pair_model";
}

pub fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| ModelError::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(io_err)
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    let io_err = |source| ModelError::Io {
        path: path.to_owned(),
        source,
    };
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io_err)?)
        .read_to_end(&mut bytes)
        .map_err(io_err)?;
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(n: usize) -> Vocabulary {
        let ps: Vec<_> = (0..n)
            .map(|i| Product::new(format!("p{i:03}"), Slot::ALL[i % Slot::COUNT]))
            .collect();
        Vocabulary::from_products(&ps).unwrap()
    }

    /// Two products (shirt, shoes) with hand-set vectors.
    fn two(ua: [f64; 2], va: [f64; 2], ub: [f64; 2], vb: [f64; 2]) -> PairModel {
        let v = Vocabulary::from_products(&[Product::new("a", Slot::Shirt), Product::new("b", Slot::Shoes)]).unwrap();
        PairModel::from_parts(v, 2, [ua, ub].concat(), [va, vb].concat()).unwrap()
    }

    #[test]
    fn init_shape_range_and_determinism() {
        let a = init_model(vocab(100), 40, 9).unwrap();
        assert_eq!(a.target.len(), 100 * 40);
        assert_eq!(a.context.len(), 100 * 40);
        let bound = 0.5 / 40.0;
        assert!(a.target.iter().chain(&a.context).all(|x| x.abs() <= bound));
        assert_ne!(a.target, a.context);
        assert_eq!(a, init_model(vocab(100), 40, 9).unwrap());
        assert_ne!(a, init_model(vocab(100), 40, 10).unwrap());
        assert!(matches!(
            init_model(Vocabulary::default(), 4, 0),
            Err(ModelError::EmptyVocabulary)
        ));
        assert!(matches!(init_model(vocab(3), 0, 0), Err(ModelError::ZeroDimension)));
    }

    #[test]
    fn score_examples() {
        let (a, b) = (ProductIx(0), ProductIx(1));
        let m = two([1.0, 2.0], [0.3, -1.0], [0.3, -1.0], [1.0, 2.0]);
        assert!((m.pair_score(a, b).unwrap() - 1.0).abs() < 1e-15);
        let m = two([1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]);
        assert_eq!(m.pair_score(a, b).unwrap(), 0.0);
        let m = two([1.0, 0.0], [0.0, 2.0], [0.0, 2.0], [0.0, 1.0]);
        assert!((m.pair_score(a, b).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn score_errors() {
        let m = init_model(vocab(16), 4, 0).unwrap();
        assert!(matches!(
            m.pair_score(ProductIx(0), ProductIx(8)),
            Err(ModelError::SameSlot { .. })
        ));
        assert!(matches!(
            m.pair_score(ProductIx(0), ProductIx(99)),
            Err(ModelError::UnknownProduct(_))
        ));
        assert!(matches!(
            m.pair_score_by_id("p000", "nope"),
            Err(ModelError::UnknownProduct(_))
        ));
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let m = init_model(vocab(20), 5, 3).unwrap().scaled(1.0 / 3.0);
        let bytes = m.to_json_bytes();
        let back = PairModel::from_json_slice(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json_bytes(), bytes);
        assert_eq!(back.digest(), m.digest());
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["kind"], "pair_model");
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["vocabulary"][0]["slot"], "shirt");
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(PairModel::from_json_slice(b"{}").is_err());
        let m = init_model(vocab(3), 2, 0).unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&m.to_json_bytes()).unwrap();
        v["kind"] = "attention_model".into();
        assert!(PairModel::from_json_slice(v.to_string().as_bytes()).is_err());
        v["kind"] = "pair_model".into();
        v["target"][1] = serde_json::json!([1.0]);
        assert!(matches!(
            PairModel::from_json_slice(v.to_string().as_bytes()),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn tsv_shape() {
        let m = init_model(vocab(12), 6, 1).unwrap();
        let mut out = Vec::new();
        m.write_embedding_tsv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 12);
        assert_eq!(lines[0], "id\tslot\td0\td1\td2\td3\td4\td5");
        for line in &lines[1..] {
            let cols: Vec<_> = line.split('\t').collect();
            assert_eq!(cols.len(), 2 + 6);
            assert!(cols[1].parse::<Slot>().is_ok());
            assert!(cols[2..].iter().all(|c| c.parse::<f64>().is_ok()));
        }
    }

    proptest! {
        #[test]
        fn symmetric_bounded_and_scale_free(seed: u64, a in 0usize..24, b in 0usize..24, k in 0.01f64..100.0) {
            let m = init_model(vocab(24), 6, seed).unwrap();
            let (a, b) = (ProductIx(a), ProductIx(b));
            prop_assume!(m.vocabulary.slot(a) != m.vocabulary.slot(b));
            let s = m.pair_score(a, b).unwrap();
            prop_assert_eq!(s.to_bits(), m.pair_score(b, a).unwrap().to_bits());
            prop_assert!((-1.0..=1.0).contains(&s));
            let scaled = m.scaled(k).pair_score(a, b).unwrap();
            prop_assert!((scaled - s).abs() < 1e-12);
        }
    }
}
