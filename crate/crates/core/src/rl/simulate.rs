use crate::error::{Error, Result};
use crate::eval::{check_termination, TerminationCause, TerminationRule};
use crate::math::argmax;
use crate::model::decode::{beam_search_encoded, sample_decode_encoded};
use crate::model::ModelParams;
use crate::rewards::{RewardBreakdown, RewardModel};
use crate::rng::RngStream;
use crate::vocab::{DialogueState, Utterance};

use super::episode::{Agent, Episode, Turn};

/// How one of several sampled candidates becomes the emitted turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CandidateSelection {
    /// Uniformly at random; keeps the emitted turn an on-policy sample.
    #[default]
    Uniform,
    /// The candidate with the highest combined reward.
    BestReward,
}

impl CandidateSelection {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(CandidateSelection::Uniform),
            "best" | "best_reward" => Ok(CandidateSelection::BestReward),
            _ => Err(Error::Config(format!("unknown candidate selection '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    Sample { candidates: usize, temperature: f64, selection: CandidateSelection },
    Beam { width: usize },
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub decoding: Decoding,
    pub max_decode_len: usize,
    pub rule: TerminationRule,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.rule.validate()?;
        match self.decoding {
            Decoding::Sample { candidates, temperature, .. } => {
                if candidates == 0 {
                    return Err(Error::Config("candidates per step must be at least 1".into()));
                }
                if !(temperature > 0.0 && temperature.is_finite()) {
                    return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
                }
            }
            Decoding::Beam { width } => {
                if width == 0 {
                    return Err(Error::Config("beam width must be at least 1".into()));
                }
            }
        }
        if self.max_decode_len == 0 {
            return Err(Error::Config("max decode length must be at least 1".into()));
        }
        Ok(())
    }
}

/// Both agents share `policy`. The dialogue runs until the termination rule
/// fires or `turn_limit` turns have been produced, whichever comes first.
pub fn simulate_dialogue(
    policy: &ModelParams,
    initial: &Utterance,
    turn_limit: usize,
    sim: &SimConfig,
    rewards: &RewardModel<'_>,
    rng: &mut RngStream,
) -> Result<Episode> {
    sim.validate()?;
    if turn_limit == 0 {
        return Err(Error::Config("turn limit must be at least 1".into()));
    }
    let mut history = vec![initial.clone()];
    let mut turns = Vec::new();
    let mut cause = None;
    for k in 1..=turn_limit {
        let n = history.len();
        let previous = (n >= 2).then(|| history[n - 2].clone());
        let state = DialogueState::new(previous, history[n - 1].clone());
        let enc = policy.encode(&state.source())?;
        // the state's previous turn is the acting agent's own last utterance
        let own_prev = state.previous.as_ref();
        let (utterance, breakdown, candidates) = match sim.decoding {
            Decoding::Beam { width } => {
                let best = beam_search_encoded(policy, &enc, width, sim.max_decode_len)?
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::Degenerate("beam search returned no hypotheses".into()))?;
                let r = rewards.score(&best.utterance, &state, own_prev)?;
                (best.utterance, r, 1)
            }
            Decoding::Sample { candidates, temperature, selection } => {
                let mut cands = Vec::with_capacity(candidates);
                for _ in 0..candidates {
                    cands.push(sample_decode_encoded(policy, &enc, rng, temperature, sim.max_decode_len)?);
                }
                let (idx, r) = match selection {
                    CandidateSelection::Uniform => {
                        let i = rng.below(cands.len());
                        (i, rewards.score(&cands[i], &state, own_prev)?)
                    }
                    CandidateSelection::BestReward => {
                        let scored: Vec<RewardBreakdown> = cands
                            .iter()
                            .map(|c| rewards.score(c, &state, own_prev))
                            .collect::<Result<_>>()?;
                        let totals: Vec<f64> = scored.iter().map(|r| r.total).collect();
                        let i = argmax(&totals);
                        (i, scored[i])
                    }
                };
                (cands.swap_remove(idx), r, candidates)
            }
        };
        history.push(utterance.clone());
        turns.push(Turn { agent: Agent::of_turn(k), utterance, state, rewards: breakdown, candidates });
        if let Some(c) = check_termination(&history, &sim.rule) {
            cause = Some(c);
            break;
        }
        if k == turn_limit {
            cause = Some(TerminationCause::MaxTurns);
        }
    }
    Ok(Episode { initial: initial.clone(), turns, cause, policy: policy.fingerprint() })
}
