use crate::error::{Error, Result};
use crate::model::train::sgd_step;
use crate::model::ModelParams;

use super::episode::Episode;

/// Exponential moving average of episode returns.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    mean: Option<f64>,
    pub decay: f64,
}

impl BaselineState {
    pub fn new(decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!("baseline decay must be in [0, 1), got {decay}")));
        }
        Ok(BaselineState { mean: None, decay })
    }

    /// Current value; zero before any update.
    pub fn value(&self) -> f64 {
        self.mean.unwrap_or(0.0)
    }

    pub fn is_initialized(&self) -> bool {
        self.mean.is_some()
    }

    pub fn update(&mut self, episode_return: f64) {
        self.mean = Some(match self.mean {
            None => episode_return,
            Some(m) => self.decay * m + (1.0 - self.decay) * episode_return,
        });
    }
}

/// `G_t - b` for every turn of every episode.
pub fn compute_advantages(episodes: &[Episode], baseline: f64) -> Vec<Vec<f64>> {
    episodes
        .iter()
        .map(|e| e.returns_to_go().into_iter().map(|g| g - baseline).collect())
        .collect()
}

/// Surrogate loss `-(1/N) sum adv * log p(turn | state)` and its gradient.
/// Fails if any episode was generated by a different policy.
pub fn policy_gradient(
    params: &ModelParams,
    episodes: &[Episode],
    advantages: &[Vec<f64>],
) -> Result<(f64, ModelParams)> {
    if episodes.is_empty() {
        return Err(Error::EmptyInput("episodes".into()));
    }
    if advantages.len() != episodes.len() {
        return Err(Error::Dimension(format!(
            "{} advantage rows for {} episodes",
            advantages.len(),
            episodes.len()
        )));
    }
    let current = params.fingerprint();
    for (i, e) in episodes.iter().enumerate() {
        if e.policy != current {
            return Err(Error::OffPolicy { episode: e.policy.clone(), current });
        }
        if advantages[i].len() != e.turns.len() {
            return Err(Error::Dimension(format!(
                "episode {i}: {} advantages for {} turns",
                advantages[i].len(),
                e.turns.len()
            )));
        }
    }
    let n = episodes.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for (e, adv) in episodes.iter().zip(advantages) {
        for (t, &a) in e.turns.iter().zip(adv) {
            let lp = params.accumulate_gradient(&t.state.source(), &t.utterance, a / n, &mut grads)?;
            loss -= a * lp / n;
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub surrogate_loss: f64,
    pub grad_norm: f64,
    pub mean_return: f64,
    pub baseline: f64,
}

/// One REINFORCE step: advantages against the current baseline, a clipped
/// SGD step on the surrogate loss, then the baseline absorbs the returns.
pub fn reinforce_update(
    params: &mut ModelParams,
    episodes: &[Episode],
    baseline: &mut BaselineState,
    learning_rate: f64,
    clip_norm: f64,
) -> Result<UpdateStats> {
    if episodes.is_empty() {
        return Err(Error::EmptyInput("episodes".into()));
    }
    let returns: Vec<f64> = episodes.iter().map(Episode::total_return).collect();
    let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
    if !baseline.is_initialized() {
        // start from the first batch rather than zero
        baseline.update(mean_return);
    }
    let b = baseline.value();
    let adv = compute_advantages(episodes, b);
    let (loss, grads) = policy_gradient(params, episodes, &adv)?;
    let grad_norm = sgd_step(params, &grads, learning_rate, clip_norm)?;
    for r in returns {
        baseline.update(r);
    }
    Ok(UpdateStats { surrogate_loss: loss, grad_norm, mean_return, baseline: b })
}
