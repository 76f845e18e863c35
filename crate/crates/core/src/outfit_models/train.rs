use crate::catalog::{Dataset, Slot, TimeWindow};
use crate::pair_model::adagrad::{adagrad_step, DEFAULT_EPSILON};
use crate::pair_model::{PairModel, Result};
use crate::rng;
use crate::sampler::{outfit_samples, NegativeWeighting, SamplerError, WindowSampler};

use super::{slot_table, AttentionModel};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Negative queries per sample.
    pub n_outfit: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub negative_weighting: NegativeWeighting,
}

impl Default for AttentionTrainConfig {
    fn default() -> Self {
        AttentionTrainConfig {
            epochs: 10,
            learning_rate: 1.0,
            n_outfit: 19,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            negative_weighting: NegativeWeighting::Frequency,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionHistory {
    /// Mean cross-entropy per sample, measured before each sample's update.
    pub epoch_mean_loss: Vec<f64>,
    pub samples_per_epoch: Vec<usize>,
    pub skipped_empty_pool: usize,
    /// Largest |Σα − 1| over every scored sample.
    pub max_simplex_error: f64,
}

/// Learns slot-pair logits over a frozen pair model.
///
/// Each outfit sample ranks its positive query against its negatives; the
/// loss is soft-max cross-entropy over the candidates' attention scores with
/// the positive as label. Logits start at zero and are updated per sample
/// with AdaGrad.
pub fn train_attention(
    pair: &PairModel,
    dataset: &Dataset,
    windows: &[usize],
    config: &AttentionTrainConfig,
) -> Result<(AttentionModel, AttentionHistory)> {
    if !pair.vocabulary().same_products(dataset.vocabulary()) {
        return Err(crate::pair_model::ModelError::VocabularyMismatch);
    }
    let vocabulary = dataset.vocabulary();
    let mut model = AttentionModel::uniform(pair.digest());
    let mut accum = [[0.0f64; Slot::COUNT]; Slot::COUNT];
    let mut history = AttentionHistory::default();

    let mut windows: Vec<&TimeWindow> = windows.iter().map(|&w| &dataset.windows[w]).collect();
    windows.sort_by_key(|w| w.index);
    let samplers: Vec<WindowSampler<'_>> = windows
        .iter()
        .map(|w| WindowSampler::new(w, vocabulary, config.negative_weighting))
        .collect();

    let mut pair_scores: Vec<[f64; Slot::COUNT]> = Vec::new();
    let mut cand_scores: Vec<f64> = Vec::new();

    for epoch in 0..config.epochs {
        let mut rng = rng::stream(config.seed, epoch as u64);
        let mut loss_sum = 0.0;
        let mut n_samples = 0usize;
        for sampler in &samplers {
            for k in sampler.window().outfit_range() {
                let samples = match outfit_samples(
                    dataset.corpus.members(k),
                    config.n_outfit,
                    sampler,
                    vocabulary,
                    &mut rng,
                ) {
                    Ok(s) => s,
                    Err(SamplerError::EmptyPool { .. }) => {
                        history.skipped_empty_pool += 1;
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                };
                for sample in samples {
                    let query_slot = vocabulary.slot(sample.positive_query);
                    let table = slot_table(pair, sample.positive_query, &sample.partial)?;
                    let weights = model.weights(query_slot, &table);
                    let simplex_err = (weights.iter().sum::<f64>() - 1.0).abs();
                    history.max_simplex_error = history.max_simplex_error.max(simplex_err);

                    // Pair scores per candidate (positive first) and member slot.
                    pair_scores.clear();
                    cand_scores.clear();
                    for cand in std::iter::once(sample.positive_query).chain(sample.negative_queries.iter().copied()) {
                        let mut row = [0.0; Slot::COUNT];
                        let mut s = 0.0;
                        for (slot, p) in table.iter().enumerate() {
                            if let Some(p) = p {
                                row[slot] = pair.pair_score_unchecked(cand, *p);
                                s += weights[slot] * row[slot];
                            }
                        }
                        pair_scores.push(row);
                        cand_scores.push(s);
                    }

                    let max = cand_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = cand_scores.iter().map(|s| (s - max).exp()).sum();
                    loss_sum += max + z.ln() - cand_scores[0];
                    n_samples += 1;

                    // ∂L/∂θ_j = Σ_c (π_c − y_c) α_j (P_cj − s_c); step along −∂L.
                    let mut ascent = [0.0; Slot::COUNT];
                    for (c, (row, &s)) in pair_scores.iter().zip(&cand_scores).enumerate() {
                        let pi = (s - max).exp() / z;
                        let resid = pi - if c == 0 { 1.0 } else { 0.0 };
                        for slot in (0..Slot::COUNT).filter(|&j| table[j].is_some()) {
                            ascent[slot] -= resid * weights[slot] * (row[slot] - s);
                        }
                    }
                    let q = query_slot.index();
                    adagrad_step(
                        &mut model.logits[q],
                        &ascent,
                        &mut accum[q],
                        config.learning_rate,
                        config.epsilon,
                    );
                }
            }
        }
        history.epoch_mean_loss.push(if n_samples == 0 {
            0.0
        } else {
            loss_sum / n_samples as f64
        });
        history.samples_per_epoch.push(n_samples);
    }
    Ok((model, history))
}
