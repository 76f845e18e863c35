//! Request handling for ranking, pair scoring and outfit generation.
//!
//! Handlers are plain functions of a request and an immutable
//! [`ServiceState`]; the HTTP layer only decodes, dispatches and encodes.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use stylerec::catalog::{Dataset, ProductIx, Slot, TimeWindow};
use stylerec::composer::{beam_search, BeamConfig, ComposeError, DEFAULT_SLOT_ORDER};
use stylerec::metrics::rank_order;
use stylerec::outfit_models::{AnyScorer, OutfitScorer};
use stylerec::pair_model::ModelError;
use stylerec::{AttentionModel, Execution, PairModel, ScorerKind};

/// A failed request: HTTP status, stable machine code and message.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code} ({status}): {message}")]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: 400,
            code: "bad_request",
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError {
            status: 404,
            code: "not_found",
            message: message.into(),
        }
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        ApiError {
            status: 409,
            code: "conflict",
            message: message.into(),
        }
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        ApiError {
            status: 422,
            code: "unprocessable",
            message: message.into(),
        }
    }

    /// The JSON error body.
    pub fn body(&self) -> Vec<u8> {
        serde_json::to_vec(&serde_json::json!({
            "error": { "code": self.code, "message": self.message }
        }))
        .expect("error body serializes")
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::UnknownProduct(_) => ApiError::not_found(e.to_string()),
            ModelError::SameSlot { .. } | ModelError::SlotCollision { .. } => ApiError::unprocessable(e.to_string()),
            ModelError::MissingAttention => ApiError::conflict(e.to_string()),
            ModelError::EmptyPartial | ModelError::ReferenceCount(_) => ApiError::bad_request(e.to_string()),
            other => ApiError {
                status: 500,
                code: "internal",
                message: other.to_string(),
            },
        }
    }
}

impl From<ComposeError> for ApiError {
    fn from(e: ComposeError) -> Self {
        match e {
            ComposeError::Model(m) => m.into(),
            ComposeError::EmptyPool(_) => ApiError::unprocessable(e.to_string()),
            other => ApiError::bad_request(other.to_string()),
        }
    }
}

pub type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    /// Scorer for partial-outfit references when the request names none.
    pub default_model: ScorerKind,
    pub default_top_k: usize,
    pub max_top_k: usize,
    pub max_beam_width: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            default_model: ScorerKind::Mean,
            default_top_k: 10,
            max_top_k: 1000,
            max_beam_width: 200,
        }
    }
}

/// Full ranking of one slot's window stock, best first.
type Ranking = Arc<Vec<(ProductIx, f64)>>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    window: usize,
    model: ScorerKind,
    reference: Vec<ProductIx>,
    slot: Slot,
}

/// Loaded corpus and models. Nothing here changes after start-up; the
/// ranking cache only memoizes pure results.
#[derive(Debug)]
pub struct ServiceState {
    pub dataset: Dataset,
    pub pair: Option<PairModel>,
    pub attention: Option<AttentionModel>,
    pub config: ServiceConfig,
    pub exec: Execution,
    pair_digest: Option<String>,
    cache: RwLock<HashMap<CacheKey, Ranking>>,
}

impl ServiceState {
    /// Fails when a model's vocabulary differs from the corpus vocabulary.
    pub fn new(
        dataset: Dataset,
        pair: Option<PairModel>,
        attention: Option<AttentionModel>,
        config: ServiceConfig,
    ) -> Result<Self, ModelError> {
        if let Some(p) = &pair {
            if !p.vocabulary().same_products(dataset.vocabulary()) {
                return Err(ModelError::VocabularyMismatch);
            }
        }
        Ok(ServiceState {
            dataset,
            pair_digest: pair.as_ref().map(PairModel::digest),
            pair,
            attention,
            config,
            exec: Execution::default(),
            cache: RwLock::new(HashMap::new()),
        })
    }

    fn pair(&self) -> ApiResult<&PairModel> {
        self.pair
            .as_ref()
            .ok_or_else(|| ApiError::conflict("no pair model is loaded"))
    }

    fn scorer(&self, kind: ScorerKind) -> ApiResult<AnyScorer<'_>> {
        Ok(AnyScorer::new(kind, self.pair()?, self.attention.as_ref())?)
    }

    fn window(&self, index: Option<usize>) -> ApiResult<&TimeWindow> {
        match index {
            Some(i) => self
                .dataset
                .windows
                .get(i)
                .ok_or_else(|| ApiError::not_found(format!("unknown window {i}"))),
            None => self
                .dataset
                .latest_window()
                .ok_or_else(|| ApiError::conflict("the corpus has no windows")),
        }
    }

    fn lookup(&self, id: &str) -> ApiResult<ProductIx> {
        self.dataset
            .vocabulary()
            .lookup(id)
            .ok_or_else(|| ApiError::not_found(format!("unknown product {id:?}")))
    }

    fn product_ref(&self, p: ProductIx) -> ProductRef {
        let prod = self.dataset.vocabulary().product(p);
        ProductRef {
            product_id: prod.id.clone(),
            slot: prod.slot,
        }
    }

    pub fn cache_len(&self) -> usize {
        self.cache.read().map(|c| c.len()).unwrap_or(0)
    }
}

/// A single product id or a partial outfit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reference {
    One(String),
    Many(Vec<String>),
}

impl Reference {
    fn ids(&self) -> &[String] {
        match self {
            Reference::One(id) => std::slice::from_ref(id),
            Reference::Many(ids) => ids,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankRequest {
    pub reference: Reference,
    pub target_slot: Slot,
    #[serde(default)]
    pub model: Option<ScorerKind>,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub window_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedProduct {
    pub product_id: String,
    pub slot: Slot,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResponse {
    pub window_index: usize,
    pub model: ScorerKind,
    pub target_slot: Slot,
    pub candidates: Vec<RankedProduct>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductRef {
    pub product_id: String,
    pub slot: Slot,
}

struct ResolvedRank {
    window: usize,
    model: ScorerKind,
    reference: Vec<ProductIx>,
    top_k: usize,
}

fn resolve_rank(req: &RankRequest, state: &ServiceState) -> ApiResult<ResolvedRank> {
    let ids = req.reference.ids();
    if ids.is_empty() {
        return Err(ApiError::bad_request("reference must name at least one product"));
    }
    let vocab = state.dataset.vocabulary();
    let mut reference = ids.iter().map(|id| state.lookup(id)).collect::<ApiResult<Vec<_>>>()?;
    reference.sort_by_key(|&p| (vocab.slot(p), p));
    for pair in reference.windows(2) {
        if vocab.slot(pair[0]) == vocab.slot(pair[1]) {
            return Err(ApiError::unprocessable(format!(
                "reference holds two products of slot {}",
                vocab.slot(pair[0])
            )));
        }
    }
    if reference.iter().any(|&p| vocab.slot(p) == req.target_slot) {
        return Err(ApiError::unprocessable(format!(
            "target slot {} is already filled in the reference",
            req.target_slot
        )));
    }
    let model = match (req.model, reference.len()) {
        (Some(ScorerKind::Pair), n) if n > 1 => {
            return Err(ApiError::bad_request(
                "the pair model ranks against a single reference product; use mean or attention",
            ))
        }
        (Some(m), _) => m,
        (None, 1) => ScorerKind::Pair,
        (None, _) => state.config.default_model,
    };
    let top_k = req.top_k.unwrap_or(state.config.default_top_k);
    if top_k == 0 || top_k > state.config.max_top_k {
        return Err(ApiError::bad_request(format!(
            "top_k must be in 1..={}",
            state.config.max_top_k
        )));
    }
    let window = state.window(req.window_index)?.index;
    Ok(ResolvedRank {
        window,
        model,
        reference,
        top_k,
    })
}

fn full_ranking(state: &ServiceState, r: &ResolvedRank, slot: Slot) -> ApiResult<Vec<(ProductIx, f64)>> {
    let scorer = state.scorer(r.model)?;
    let stock = state.dataset.windows[r.window].stock(slot, state.dataset.vocabulary());
    let mut scored = stylerec::par::try_map_indexed(state.exec, stock.len(), |i| {
        scorer.score(stock[i], &r.reference).map(|s| (stock[i], s))
    })?;
    scored.sort_by(|a, b| rank_order(*a, *b));
    Ok(scored)
}

fn rank_response(
    state: &ServiceState,
    req: &RankRequest,
    r: &ResolvedRank,
    ranking: &[(ProductIx, f64)],
) -> RankResponse {
    RankResponse {
        window_index: r.window,
        model: r.model,
        target_slot: req.target_slot,
        candidates: ranking
            .iter()
            .take(r.top_k)
            .map(|&(p, score)| {
                let pr = state.product_ref(p);
                RankedProduct {
                    product_id: pr.product_id,
                    slot: pr.slot,
                    score,
                }
            })
            .collect(),
    }
}

/// Ranks the chosen window's stock of `target_slot` against the reference.
pub fn handle_rank(req: &RankRequest, state: &ServiceState) -> ApiResult<RankResponse> {
    let r = resolve_rank(req, state)?;
    let key = CacheKey {
        window: r.window,
        model: r.model,
        reference: r.reference.clone(),
        slot: req.target_slot,
    };
    let cached = state.cache.read().ok().and_then(|c| c.get(&key).cloned());
    let ranking = match cached {
        Some(hit) => hit,
        None => {
            let fresh: Ranking = Arc::new(full_ranking(state, &r, req.target_slot)?);
            if let Ok(mut c) = state.cache.write() {
                c.insert(key, fresh.clone());
            }
            fresh
        }
    };
    Ok(rank_response(state, req, &r, &ranking))
}

/// [`handle_rank`] without the cache.
pub fn handle_rank_uncached(req: &RankRequest, state: &ServiceState) -> ApiResult<RankResponse> {
    let r = resolve_rank(req, state)?;
    let ranking = full_ranking(state, &r, req.target_slot)?;
    Ok(rank_response(state, req, &r, &ranking))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairScoreRequest {
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScoreResponse {
    pub score: f64,
}

pub fn handle_pair_score(req: &PairScoreRequest, state: &ServiceState) -> ApiResult<PairScoreResponse> {
    let pair = state.pair()?;
    let (a, b) = (state.lookup(&req.a)?, state.lookup(&req.b)?);
    Ok(PairScoreResponse {
        score: pair.pair_score(a, b)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub beam_width: usize,
    #[serde(default)]
    pub slot_order: Option<Vec<Slot>>,
    #[serde(default)]
    pub window_index: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: Option<ScorerKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedOutfit {
    pub products: Vec<ProductRef>,
    pub step_scores: Vec<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub window_index: usize,
    pub model: ScorerKind,
    pub slot_order: Vec<Slot>,
    pub outfits: Vec<GeneratedOutfit>,
}

/// Beam search over the window's stock. Without an explicit slot order the
/// default order is used, skipping slots the window does not stock.
pub fn handle_generate(req: &GenerateRequest, state: &ServiceState) -> ApiResult<GenerateResponse> {
    if req.beam_width == 0 || req.beam_width > state.config.max_beam_width {
        return Err(ApiError::bad_request(format!(
            "beam_width must be in 1..={}",
            state.config.max_beam_width
        )));
    }
    let model = req.model.unwrap_or(state.config.default_model);
    if model == ScorerKind::Pair {
        return Err(ApiError::bad_request(
            "generation scores against partial outfits; use mean or attention",
        ));
    }
    let scorer = state.scorer(model)?;
    let window = state.window(req.window_index)?;
    let vocab = state.dataset.vocabulary();
    let slot_order = match &req.slot_order {
        Some(order) => order.clone(),
        None => DEFAULT_SLOT_ORDER
            .iter()
            .copied()
            .filter(|&s| !window.stock(s, vocab).is_empty())
            .collect(),
    };
    let config = BeamConfig::from_window(window, vocab, slot_order.clone(), req.beam_width, req.seed)?;
    let outfits = beam_search(&scorer, &config, state.exec)?
        .into_iter()
        .map(|o| GeneratedOutfit {
            products: o.products.iter().map(|&p| state.product_ref(p)).collect(),
            step_scores: o.step_scores,
            score: o.score,
        })
        .collect();
    Ok(GenerateResponse {
        window_index: window.index,
        model,
        slot_order,
        outfits,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StockEntry {
    pub product_id: String,
    pub slot: Slot,
    /// Occurrences in the window's outfits.
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductsResponse {
    pub window_index: usize,
    pub products: Vec<StockEntry>,
}

/// Window stock, optionally restricted to one slot, in product id order.
pub fn handle_products(slot: Option<Slot>, window: Option<usize>, state: &ServiceState) -> ApiResult<ProductsResponse> {
    let window = state.window(window)?;
    let vocab = state.dataset.vocabulary();
    let products = window
        .occurrences()
        .iter()
        .filter(|&&(p, _)| slot.is_none_or(|s| vocab.slot(p) == s))
        .map(|&(p, count)| StockEntry {
            product_id: vocab.id(p).to_owned(),
            slot: vocab.slot(p),
            count,
        })
        .collect();
    Ok(ProductsResponse {
        window_index: window.index,
        products,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub pair_model: Option<String>,
    pub attention_model: bool,
    pub products: usize,
    pub outfits: usize,
    pub windows: usize,
}

pub fn handle_health(state: &ServiceState) -> Health {
    Health {
        status: "ok".into(),
        pair_model: state.pair_digest.clone(),
        attention_model: state.attention.is_some(),
        products: state.dataset.vocabulary().len(),
        outfits: state.dataset.corpus.len(),
        windows: state.dataset.windows.len(),
    }
}

pub fn handle_slots() -> Vec<Slot> {
    Slot::ALL.to_vec()
}
