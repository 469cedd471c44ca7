//! Maximum-likelihood training.

use crate::corpus::TrainingPair;
use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::{HyperConfig, ModelParams};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Token-weighted mean NLL per epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Mean per-token NLL of `pairs`.
pub fn mle_loss(params: &ModelParams, pairs: &[&TrainingPair]) -> Result<f64> {
    let tokens: usize = pairs.iter().map(|p| p.target.len()).sum();
    let mut total = 0.0;
    for p in pairs {
        total -= params.log_prob(&p.source, &p.target)?;
    }
    Ok(total / tokens.max(1) as f64)
}

/// Adds `scale * grad(mean per-token NLL)` into `grads`; returns the loss.
pub fn accumulate_mle_gradient(
    params: &ModelParams,
    pairs: &[&TrainingPair],
    scale: f64,
    grads: &mut ModelParams,
) -> Result<f64> {
    let tokens: usize = pairs.iter().map(|p| p.target.len()).sum();
    let w = scale / tokens.max(1) as f64;
    let mut total = 0.0;
    for p in pairs {
        total -= params.accumulate_gradient(&p.source, &p.target, w, grads)?;
    }
    Ok(total / tokens.max(1) as f64)
}

pub fn mle_gradient(params: &ModelParams, pairs: &[&TrainingPair]) -> Result<(f64, ModelParams)> {
    let mut g = params.zeros_like();
    let loss = accumulate_mle_gradient(params, pairs, 1.0, &mut g)?;
    Ok((loss, g))
}

/// `params -= lr * clip(grads)`, where clipping rescales the gradient to
/// global norm `clip_norm` when it is larger. Returns the pre-clip norm.
pub fn sgd_step(params: &mut ModelParams, grads: &ModelParams, lr: f64, clip_norm: f64) -> Result<f64> {
    let norm = grads.global_norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm {norm}")));
    }
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    params.add_scaled(-lr * scale, grads);
    Ok(norm)
}

/// Mini-batch SGD on mean per-token NLL with gradient-norm clipping.
pub fn train_mle(
    pairs: &[TrainingPair],
    mut params: ModelParams,
    hyper: &HyperConfig,
    rng: &mut RngStream,
) -> Result<(ModelParams, TrainReport)> {
    hyper.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("training pairs".into()));
    }
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..hyper.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut token_sum = 0usize;
        for (b, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (loss, grads) = mle_gradient(&params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "MLE loss {loss} at epoch {epoch}, batch {b} (param norm {:.3e})",
                    params.global_norm()
                )));
            }
            sgd_step(&mut params, &grads, hyper.learning_rate, hyper.clip_norm)?;
            let tokens: usize = batch.iter().map(|p| p.target.len()).sum();
            loss_sum += loss * tokens as f64;
            token_sum += tokens;
            report.steps += 1;
        }
        report.epoch_losses.push(loss_sum / token_sum as f64);
    }
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::finite_difference_check;
    use crate::model::{greedy_decode, Direction, ModelDims};
    use crate::vocab::{TokenId, Utterance, EOS};

    fn pair(src: &[TokenId], tgt: &[TokenId]) -> TrainingPair {
        TrainingPair { source: src.to_vec(), target: Utterance::new(tgt.to_vec()).unwrap() }
    }

    fn model(seed: u64, attention: bool) -> ModelParams {
        let dims = ModelDims { vocab: 12, embed: 4, hidden: 8, attention };
        ModelParams::random(dims, Direction::Forward, "t", 0.08, &mut RngStream::new(seed))
    }

    #[test]
    fn single_pair_overfits() {
        let pairs = vec![pair(&[5, 6, 7], &[8, 9, 10, EOS])];
        let hyper = HyperConfig {
            embed_dim: 4,
            hidden_dim: 8,
            learning_rate: 0.5,
            batch_size: 1,
            epochs: 500,
            ..HyperConfig::default()
        };
        let (trained, report) = train_mle(&pairs, model(1, false), &hyper, &mut RngStream::new(0)).unwrap();
        assert_eq!(report.steps, 500);
        assert!(*report.epoch_losses.last().unwrap() < 0.05);
        let out = greedy_decode(&trained, &pairs[0].source, 10).unwrap();
        assert_eq!(out, pairs[0].target);
    }

    #[test]
    fn small_step_does_not_increase_loss() {
        let pairs = [pair(&[5, 6], &[7, EOS]), pair(&[8], &[9, 10, EOS]), pair(&[11, 5], &[6, EOS])];
        let refs: Vec<&TrainingPair> = pairs.iter().collect();
        let mut decreased = 0;
        for seed in 0..10 {
            let mut p = model(seed, seed % 2 == 0);
            let (before, g) = mle_gradient(&p, &refs).unwrap();
            sgd_step(&mut p, &g, 1e-3, 5.0).unwrap();
            let after = mle_loss(&p, &refs).unwrap();
            if after <= before {
                decreased += 1;
            }
        }
        assert_eq!(decreased, 10);
    }

    #[test]
    fn mle_gradient_passes_fd_check() {
        let pairs = [pair(&[5, 6, 7, 4], &[8, 9, EOS]), pair(&[10], &[11, 5, 6, EOS])];
        let refs: Vec<&TrainingPair> = pairs.iter().collect();
        for attention in [false, true] {
            let p = model(3, attention);
            let f = |x: &[f64]| {
                let mut q = p.clone();
                q.set_flat(x).unwrap();
                mle_loss(&q, &refs).unwrap()
            };
            let g = |x: &[f64]| {
                let mut q = p.clone();
                q.set_flat(x).unwrap();
                mle_gradient(&q, &refs).unwrap().1.to_flat()
            };
            let err = finite_difference_check(f, g, &p.to_flat(), 1e-5).unwrap();
            assert!(err < 1e-4, "attention={attention}: {err}");
        }
    }

    #[test]
    fn clipping_bounds_the_update() {
        let mut p = model(4, false);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.output_bias[0] = 100.0;
        let norm = sgd_step(&mut p, &g, 1.0, 5.0).unwrap();
        assert_eq!(norm, 100.0);
        assert!((before.output_bias[0] - p.output_bias[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_pairs_rejected() {
        let r = train_mle(&[], model(0, false), &HyperConfig::default(), &mut RngStream::new(0));
        assert!(matches!(r, Err(Error::EmptyInput(_))));
    }
}
