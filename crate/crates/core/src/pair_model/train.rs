use crate::catalog::{Dataset, ProductIx, Split, TimeWindow};
use crate::rng;
use crate::sampler::{positive_pairs, PairSampler, SamplerError, WindowSampler};

use super::adagrad::{adagrad_step, AdaGradState};
use super::{init_model, sgns, PairModel, Result, TrainConfig};

/// Per-epoch training statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean batch log-probability, measured before each batch's update.
    pub epoch_mean_log_prob: Vec<f64>,
    pub batches_per_epoch: Vec<usize>,
    /// Positives skipped because their slot had no other product in the
    /// window to draw negatives from.
    pub skipped_empty_pool: usize,
}

/// Trains on the windows assigned to `split`.
pub fn train_split(dataset: &Dataset, split: Split, config: &TrainConfig) -> Result<(PairModel, TrainHistory)> {
    let windows: Vec<usize> = dataset.splits.windows_in(split);
    train(dataset, &windows, config)
}

/// Skip-gram training with per-batch AdaGrad updates.
///
/// Outfits are visited in seq order, window by window. Every epoch redraws
/// subsampling and negatives from its own random stream, so the result
/// depends only on the dataset, the window list and `config`.
pub fn train(dataset: &Dataset, windows: &[usize], config: &TrainConfig) -> Result<(PairModel, TrainHistory)> {
    let vocabulary = dataset.vocabulary();
    let mut model = init_model(vocabulary.clone(), config.dim, config.seed)?;
    let mut windows: Vec<&TimeWindow> = windows.iter().map(|&w| &dataset.windows[w]).collect();
    windows.sort_by_key(|w| w.index);
    let samplers: Vec<WindowSampler<'_>> = windows
        .iter()
        .map(|w| WindowSampler::new(w, vocabulary, config.negative_weighting))
        .collect();
    let pair_sampler = PairSampler {
        n_pair: config.n_pair,
        rho: config.rho,
    };

    let dim = config.dim;
    let mut state = AdaGradState::zeros(vocabulary.len() * dim, config.epsilon);
    let mut history = TrainHistory::default();
    let mut coefs = Vec::with_capacity(config.n_pair + 1);
    let mut rows: Vec<(ProductIx, f64)> = Vec::with_capacity(config.n_pair + 1);
    let mut grad_u = vec![0.0; dim];
    let mut grad_v = vec![0.0; dim];
    let mut u_old = vec![0.0; dim];

    for epoch in 0..config.epochs {
        let mut rng = rng::stream(config.seed, epoch as u64);
        let mut log_prob_sum = 0.0;
        let mut batches = 0usize;
        for sampler in &samplers {
            for k in sampler.window().outfit_range() {
                let members = dataset.corpus.members(k);
                let weight = if config.weight_by_outfit_size {
                    1.0 / members.len() as f64
                } else {
                    1.0
                };
                for positive in positive_pairs(members, sampler.window_index()) {
                    let batch = match pair_sampler.sample(positive, sampler, vocabulary, &mut rng) {
                        Ok(Some(b)) => b,
                        Ok(None) => continue,
                        Err(SamplerError::EmptyPool { .. }) => {
                            history.skipped_empty_pool += 1;
                            continue;
                        }
                        Err(e) => return Err(e.into()),
                    };
                    let (target, context) = (batch.positive.target, batch.positive.context);

                    u_old.copy_from_slice(model.target(target));
                    log_prob_sum += sgns::coefficients(
                        &u_old,
                        model.context(context),
                        batch.negative_contexts().map(|n| model.context(n)),
                        &mut coefs,
                    );
                    batches += 1;

                    // ∂/∂u from the pre-update context vectors.
                    grad_u.iter_mut().for_each(|g| *g = 0.0);
                    rows.clear();
                    rows.push((context, coefs[0]));
                    rows.extend(batch.negative_contexts().zip(coefs[1..].iter().copied()));
                    for &(row, coef) in &rows {
                        for (g, x) in grad_u.iter_mut().zip(model.context(row)) {
                            *g += weight * coef * x;
                        }
                    }

                    // Repeated negatives get one update with their summed coefficient.
                    rows.sort_by_key(|&(row, _)| row);
                    rows.dedup_by(|later, first| {
                        if later.0 == first.0 {
                            first.1 += later.1;
                            true
                        } else {
                            false
                        }
                    });

                    let (target_m, context_m) = model.matrices_mut();
                    for &(row, coef) in &rows {
                        let span = row.get() * dim..(row.get() + 1) * dim;
                        for (g, x) in grad_v.iter_mut().zip(&u_old) {
                            *g = weight * coef * x;
                        }
                        adagrad_step(
                            &mut context_m[span.clone()],
                            &grad_v,
                            &mut state.context[span],
                            config.learning_rate,
                            state.epsilon,
                        );
                    }
                    let span = target.get() * dim..(target.get() + 1) * dim;
                    adagrad_step(
                        &mut target_m[span.clone()],
                        &grad_u,
                        &mut state.target[span],
                        config.learning_rate,
                        state.epsilon,
                    );
                }
            }
        }
        history.epoch_mean_log_prob.push(if batches == 0 {
            0.0
        } else {
            log_prob_sum / batches as f64
        });
        history.batches_per_epoch.push(batches);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{assign_splits, Corpus, Outfit, Product, Slot};

    fn tiny_dataset() -> Dataset {
        let outfits = (0..60)
            .map(|k| Outfit {
                id: format!("o{k}"),
                seq: k,
                products: vec![
                    Product::new(format!("s{}", k % 4), Slot::Shirt),
                    Product::new(format!("t{}", k % 3), Slot::Trouser),
                    Product::new(format!("h{}", k % 5), Slot::Shoes),
                ],
            })
            .collect();
        let corpus = Corpus::new(outfits).unwrap();
        Dataset::new(corpus, 20, assign_splits(3, [1.0, 0.0, 0.0], 0).unwrap()).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            dim: 4,
            epochs: 0,
            ..TrainConfig::default()
        };
        let (m, h) = train_split(&ds, Split::Train, &cfg).unwrap();
        assert_eq!(m, init_model(ds.vocabulary().clone(), 4, cfg.seed).unwrap());
        assert!(h.epoch_mean_log_prob.is_empty());
    }

    #[test]
    fn deterministic_and_updates_rows() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            dim: 4,
            epochs: 3,
            n_pair: 3,
            rho: None,
            ..TrainConfig::default()
        };
        let (a, ha) = train_split(&ds, Split::Train, &cfg).unwrap();
        let (b, hb) = train_split(&ds, Split::Train, &cfg).unwrap();
        assert_eq!(a.to_json_bytes(), b.to_json_bytes());
        assert_eq!(ha, hb);
        assert_eq!(ha.batches_per_epoch, vec![360; 3]);
        assert_ne!(a, init_model(ds.vocabulary().clone(), 4, cfg.seed).unwrap());
    }

    #[test]
    fn outfit_size_weighting_changes_the_result() {
        let ds = tiny_dataset();
        let cfg = TrainConfig {
            dim: 4,
            epochs: 1,
            n_pair: 3,
            rho: None,
            ..TrainConfig::default()
        };
        let weighted = TrainConfig {
            weight_by_outfit_size: true,
            ..cfg.clone()
        };
        let (a, _) = train_split(&ds, Split::Train, &cfg).unwrap();
        let (b, _) = train_split(&ds, Split::Train, &weighted).unwrap();
        assert_ne!(a, b);
    }
}
