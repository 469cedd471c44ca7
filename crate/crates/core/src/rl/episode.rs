use serde::{Deserialize, Serialize};

use crate::eval::TerminationCause;
use crate::rewards::RewardBreakdown;
use crate::vocab::{DialogueState, Utterance, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Agent {
    A,
    B,
}

impl Agent {
    /// Speaker of simulated turn `k` (1-based). The initial message counts as
    /// the second agent's turn 0, so the first agent opens.
    pub fn of_turn(k: usize) -> Agent {
        if k % 2 == 1 {
            Agent::A
        } else {
            Agent::B
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub agent: Agent,
    pub utterance: Utterance,
    /// State the utterance was generated from.
    pub state: DialogueState,
    pub rewards: RewardBreakdown,
    /// Number of candidates considered when choosing this turn.
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub initial: Utterance,
    pub turns: Vec<Turn>,
    pub cause: Option<TerminationCause>,
    /// Fingerprint of the policy that generated the turns.
    pub policy: String,
}

impl Episode {
    pub fn total_return(&self) -> f64 {
        self.turns.iter().map(|t| t.rewards.total).sum()
    }

    /// Undiscounted reward-to-go from each turn.
    pub fn returns_to_go(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.turns.len()];
        let mut acc = 0.0;
        for (i, t) in self.turns.iter().enumerate().rev() {
            acc += t.rewards.total;
            out[i] = acc;
        }
        out
    }

    /// Initial message followed by every turn.
    pub fn history(&self) -> Vec<Utterance> {
        std::iter::once(self.initial.clone())
            .chain(self.turns.iter().map(|t| t.utterance.clone()))
            .collect()
    }

    pub fn to_record(&self, vocab: &Vocab) -> EpisodeRecord {
        EpisodeRecord {
            initial: vocab.decode(&self.initial),
            turns: self
                .turns
                .iter()
                .map(|t| TurnRecord {
                    agent: t.agent,
                    utterance: vocab.decode(&t.utterance),
                    r1: t.rewards.r1,
                    r2: t.rewards.r2,
                    r3: t.rewards.r3,
                    total: t.rewards.total,
                })
                .collect(),
            cause: self.cause,
        }
    }
}

/// Text form of an episode, written one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub initial: String,
    pub turns: Vec<TurnRecord>,
    pub cause: Option<TerminationCause>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub agent: Agent,
    pub utterance: String,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub total: f64,
}
