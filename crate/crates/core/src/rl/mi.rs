use crate::corpus::{ContextPair, TrainingPair};
use crate::error::{Error, Result};
use crate::model::decode::sample_decode_encoded;
use crate::model::train::{accumulate_mle_gradient, sgd_step};
use crate::model::{Direction, ModelParams};
use crate::rewards::coherence_reward;
use crate::rng::RngStream;
use crate::vocab::Utterance;

use super::reinforce::BaselineState;

/// Mixed objective `alpha * MLE + (1 - alpha) * REINFORCE(r3)`, with alpha
/// moving linearly from `alpha_start` to `alpha_end` over the updates.
#[derive(Debug, Clone, PartialEq)]
pub struct MiConfig {
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub temperature: f64,
    pub max_decode_len: usize,
    pub baseline_decay: f64,
}

impl Default for MiConfig {
    fn default() -> Self {
        MiConfig {
            alpha_start: 0.5,
            alpha_end: 0.25,
            epochs: 2,
            batch_size: 16,
            learning_rate: 0.2,
            clip_norm: 5.0,
            temperature: 1.0,
            max_decode_len: 12,
            baseline_decay: 0.95,
        }
    }
}

impl MiConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("alpha_start", self.alpha_start), ("alpha_end", self.alpha_end)] {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {a}")));
            }
        }
        if self.batch_size == 0 || self.max_decode_len == 0 {
            return Err(Error::Config("MI batch size and decode length must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::Config("MI learning rate, clip norm and temperature must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::Config(format!("baseline decay must be in [0, 1), got {}", self.baseline_decay)));
        }
        Ok(())
    }

    /// Weight on the MLE term at update `step` of `total`.
    pub fn alpha_at(&self, step: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.alpha_start;
        }
        let t = step.min(total - 1) as f64 / (total - 1) as f64;
        self.alpha_start + (self.alpha_end - self.alpha_start) * t
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MiReport {
    pub steps: usize,
    pub alphas: Vec<f64>,
    /// Mean coherence reward of the sampled responses, per epoch.
    pub mean_r3: Vec<f64>,
    /// Token-weighted MLE loss, per epoch.
    pub mle_losses: Vec<f64>,
}

/// Value and gradient of the mixed objective on one batch.
#[derive(Debug, Clone)]
pub struct MixedGradient {
    /// `alpha * mle_loss - (1 - alpha) / B * sum adv * log p(sample | state)`.
    pub objective: f64,
    /// Mean per-token NLL of the batch targets.
    pub mle_loss: f64,
    pub grads: ModelParams,
}

/// Gradient of `alpha` times the batch MLE loss plus `1 - alpha` times the
/// REINFORCE surrogate for `samples`, each weighted by its advantage.
/// `samples` may be empty when `alpha` is 1.
pub fn mixed_objective_gradient(
    params: &ModelParams,
    batch: &[&ContextPair],
    samples: &[Utterance],
    advantages: &[f64],
    alpha: f64,
) -> Result<MixedGradient> {
    if samples.len() != advantages.len() || (!samples.is_empty() && samples.len() != batch.len()) {
        return Err(Error::Dimension(format!(
            "{} samples and {} advantages for a batch of {}",
            samples.len(),
            advantages.len(),
            batch.len()
        )));
    }
    let mle_pairs: Vec<TrainingPair> = batch.iter().map(|p| p.to_training_pair()).collect();
    let mle_refs: Vec<&TrainingPair> = mle_pairs.iter().collect();
    let mut grads = params.zeros_like();
    let mle_loss = accumulate_mle_gradient(params, &mle_refs, alpha, &mut grads)?;
    let mut objective = alpha * mle_loss;
    let w = (1.0 - alpha) / batch.len().max(1) as f64;
    for ((p, a), adv) in batch.iter().zip(samples).zip(advantages) {
        let lp = params.accumulate_gradient(&p.state.source(), a, w * adv, &mut grads)?;
        objective -= w * adv * lp;
    }
    Ok(MixedGradient { objective, mle_loss, grads })
}

/// Starting from the pretrained forward model, trains toward responses that
/// score well on coherence. `forward` and `backward` are frozen reward models.
pub fn mi_pretrain(
    init: ModelParams,
    forward: &ModelParams,
    backward: &ModelParams,
    pairs: &[ContextPair],
    cfg: &MiConfig,
    rng: &mut RngStream,
) -> Result<(ModelParams, MiReport)> {
    cfg.validate()?;
    if backward.direction() != Direction::Backward {
        return Err(Error::Config("MI pretraining needs a backward model".into()));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput("MI training pairs".into()));
    }
    let mut params = init;
    let mut baseline = BaselineState::new(cfg.baseline_decay)?;
    let mut report = MiReport::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let total_steps = cfg.epochs * pairs.len().div_ceil(cfg.batch_size);
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let (mut r3_sum, mut r3_n) = (0.0, 0usize);
        let (mut loss_sum, mut tok_sum) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let alpha = cfg.alpha_at(report.steps, total_steps);
            let batch: Vec<&ContextPair> = chunk.iter().map(|&i| &pairs[i]).collect();

            let mle_pairs: Vec<TrainingPair> = batch.iter().map(|p| p.to_training_pair()).collect();
            let tokens: usize = mle_pairs.iter().map(|p| p.target.len()).sum();
            let mut samples = Vec::new();
            let mut advantages = Vec::new();
            if alpha < 1.0 {
                let mut rewards = Vec::with_capacity(batch.len());
                for p in &batch {
                    let enc = params.encode(&p.state.source())?;
                    let a = sample_decode_encoded(&params, &enc, rng, cfg.temperature, cfg.max_decode_len)?;
                    rewards.push(coherence_reward(&a, &p.state, forward, backward)?);
                    samples.push(a);
                }
                let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
                if !baseline.is_initialized() {
                    baseline.update(mean);
                }
                let b = baseline.value();
                advantages = rewards.iter().map(|r| r - b).collect();
                for &r in &rewards {
                    baseline.update(r);
                }
                r3_sum += rewards.iter().sum::<f64>();
                r3_n += rewards.len();
            }
            let grad = mixed_objective_gradient(&params, &batch, &samples, &advantages, alpha)?;
            loss_sum += grad.mle_loss * tokens as f64;
            tok_sum += tokens;
            sgd_step(&mut params, &grad.grads, cfg.learning_rate, cfg.clip_norm)?;
            report.alphas.push(alpha);
            report.steps += 1;
        }
        report.mean_r3.push(if r3_n == 0 { 0.0 } else { r3_sum / r3_n as f64 });
        report.mle_losses.push(loss_sum / tok_sum.max(1) as f64);
    }
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_context_pairs, Dialogue};
    use crate::model::{Direction, HyperConfig, ModelDims};
    use crate::math::finite_difference_check;
    use crate::model::train::train_mle;
    use crate::vocab::Vocab;

    fn data() -> (Vocab, Vec<ContextPair>) {
        let raw = vec![
            vec!["where are you going".to_string(), "to the park".into(), "have fun".into()],
            vec!["what is this".to_string(), "a book".into(), "nice".into()],
        ];
        let v = Vocab::build(&raw, 100).unwrap();
        let pairs = raw
            .iter()
            .flat_map(|d| make_context_pairs(&Dialogue::encode(d, &v).unwrap()))
            .collect();
        (v, pairs)
    }

    fn model(v: &Vocab, dir: Direction, seed: u64) -> ModelParams {
        let dims = ModelDims { vocab: v.len(), embed: 4, hidden: 6, attention: false };
        ModelParams::random(dims, dir, v.hash(), 0.08, &mut RngStream::new(seed))
    }

    #[test]
    fn alpha_schedule_is_linear() {
        let cfg = MiConfig { alpha_start: 0.5, alpha_end: 0.1, ..MiConfig::default() };
        assert_eq!(cfg.alpha_at(0, 5), 0.5);
        assert!((cfg.alpha_at(2, 5) - 0.3).abs() < 1e-12);
        assert!((cfg.alpha_at(4, 5) - 0.1).abs() < 1e-12);
        assert_eq!(cfg.alpha_at(0, 1), 0.5);
    }

    #[test]
    fn mixed_gradient_matches_finite_differences() {
        let (v, pairs) = data();
        let params = model(&v, Direction::Forward, 3);
        let batch: Vec<&ContextPair> = pairs.iter().take(3).collect();
        let samples: Vec<Utterance> =
            ["a book", "nice", "to the park"].iter().map(|t| v.encode(t).unwrap()).collect();
        let adv = [0.7, -1.2, 0.4];
        let g = mixed_objective_gradient(&params, &batch, &samples, &adv, 0.4).unwrap();
        let at = |x: &[f64]| {
            let mut p = params.clone();
            p.set_flat(x).unwrap();
            p
        };
        let err = finite_difference_check(
            |x| mixed_objective_gradient(&at(x), &batch, &samples, &adv, 0.4).unwrap().objective,
            |_| g.grads.to_flat(),
            &params.to_flat(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn mixed_gradient_rejects_mismatched_samples() {
        let (v, pairs) = data();
        let params = model(&v, Direction::Forward, 3);
        let batch: Vec<&ContextPair> = pairs.iter().take(2).collect();
        let samples = vec![v.encode("nice").unwrap()];
        assert!(mixed_objective_gradient(&params, &batch, &samples, &[1.0], 0.5).is_err());
    }

    #[test]
    fn alpha_one_is_plain_mle() {
        let (v, pairs) = data();
        let init = model(&v, Direction::Forward, 1);
        let bwd = model(&v, Direction::Backward, 2);
        let cfg = MiConfig {
            alpha_start: 1.0,
            alpha_end: 1.0,
            epochs: 3,
            batch_size: 2,
            learning_rate: 0.3,
            ..MiConfig::default()
        };
        let (mi, _) = mi_pretrain(init.clone(), &init, &bwd, &pairs, &cfg, &mut RngStream::new(5)).unwrap();
        let hyper = HyperConfig {
            embed_dim: 4,
            hidden_dim: 6,
            learning_rate: 0.3,
            batch_size: 2,
            epochs: 3,
            ..HyperConfig::default()
        };
        let tp: Vec<TrainingPair> = pairs.iter().map(ContextPair::to_training_pair).collect();
        let (mle, _) = train_mle(&tp, init, &hyper, &mut RngStream::new(5)).unwrap();
        assert_eq!(mi.to_flat(), mle.to_flat());
    }

    #[test]
    fn mixed_objective_runs_and_reports() {
        let (v, pairs) = data();
        let init = model(&v, Direction::Forward, 3);
        let bwd = model(&v, Direction::Backward, 4);
        let cfg = MiConfig { epochs: 2, batch_size: 2, max_decode_len: 5, ..MiConfig::default() };
        let (out, rep) = mi_pretrain(init.clone(), &init, &bwd, &pairs, &cfg, &mut RngStream::new(0)).unwrap();
        assert!(out.is_finite());
        assert_ne!(out, init);
        assert_eq!(rep.steps, 4);
        assert_eq!(rep.alphas.len(), 4);
        assert_eq!(rep.alphas[0], 0.5);
        assert!((rep.alphas[3] - 0.25).abs() < 1e-12);
        assert_eq!(rep.mean_r3.len(), 2);
        assert!(rep.mean_r3.iter().all(|r| r.is_finite()));
    }

    #[test]
    fn config_validation() {
        assert!(MiConfig::default().validate().is_ok());
        assert!(MiConfig { alpha_start: 1.5, ..MiConfig::default() }.validate().is_err());
        assert!(MiConfig { batch_size: 0, ..MiConfig::default() }.validate().is_err());
        let (v, pairs) = data();
        let m = model(&v, Direction::Forward, 0);
        let b = model(&v, Direction::Backward, 1);
        assert!(mi_pretrain(m.clone(), &m, &b, &[], &MiConfig::default(), &mut RngStream::new(0)).is_err());
        let err = mi_pretrain(m.clone(), &m, &m, &pairs, &MiConfig::default(), &mut RngStream::new(0)).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn zero_steps_returns_initial_weights() {
        let (v, pairs) = data();
        let m = model(&v, Direction::Forward, 0);
        let b = model(&v, Direction::Backward, 1);
        let cfg = MiConfig { epochs: 0, ..MiConfig::default() };
        let (out, rep) = mi_pretrain(m.clone(), &m, &b, &pairs, &cfg, &mut RngStream::new(0)).unwrap();
        assert_eq!(out.to_flat(), m.to_flat());
        assert_eq!(rep.steps, 0);
    }
}
