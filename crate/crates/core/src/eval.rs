//! Termination detection, dialogue length and distinct-n diversity, and the
//! per-model report.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rl::{simulate_dialogue, Episode, SimConfig};
use crate::rewards::RewardModel;
use crate::rng::RngStream;
use crate::model::ModelParams;
use crate::vocab::{DullSet, TokenId, Utterance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    Dull,
    Overlap,
    MaxTurns,
}

impl TerminationCause {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationCause::Dull => "dull",
            TerminationCause::Overlap => "overlap",
            TerminationCause::MaxTurns => "max_turns",
        }
    }
}

/// How far back the overlap check looks among the agent's own turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverlapWindow {
    /// Latest vs. the agent's immediately previous utterance.
    #[default]
    Two,
    /// Latest vs. either of the agent's two previous utterances.
    Three,
}

#[derive(Debug, Clone)]
pub struct TerminationRule {
    pub dull: DullSet,
    /// Unigram Jaccard overlap at or above which a repeat ends the dialogue.
    pub overlap_threshold: f64,
    pub window: OverlapWindow,
    pub max_turns: usize,
}

impl TerminationRule {
    pub fn new(dull: DullSet) -> Self {
        TerminationRule { dull, overlap_threshold: 0.8, window: OverlapWindow::Two, max_turns: 8 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "overlap threshold must be in (0, 1], got {}",
                self.overlap_threshold
            )));
        }
        if self.max_turns < 2 {
            return Err(Error::Config(format!("max turns must be at least 2, got {}", self.max_turns)));
        }
        Ok(())
    }
}

/// Jaccard similarity of the unigram sets of two utterances (EOS excluded).
pub fn unigram_jaccard(a: &Utterance, b: &Utterance) -> f64 {
    let sa: HashSet<TokenId> = a.content().iter().copied().collect();
    let sb: HashSet<TokenId> = b.content().iter().copied().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Checks the dialogue so far. `history[0]` is the initial message (spoken by
/// the second agent); `history[1..]` are the simulated turns, so the agent of
/// `history[i]` is the agent of `history[i - 2]`.
pub fn check_termination(history: &[Utterance], rule: &TerminationRule) -> Option<TerminationCause> {
    let latest = history.last()?;
    let turns = history.len() - 1;
    if turns == 0 {
        return None;
    }
    if rule.dull.contains(latest) {
        return Some(TerminationCause::Dull);
    }
    let back: &[usize] = match rule.window {
        OverlapWindow::Two => &[2],
        OverlapWindow::Three => &[2, 4],
    };
    let n = history.len();
    for &k in back {
        if n > k && unigram_jaccard(latest, &history[n - 1 - k]) >= rule.overlap_threshold {
            return Some(TerminationCause::Overlap);
        }
    }
    if turns >= rule.max_turns {
        return Some(TerminationCause::MaxTurns);
    }
    None
}

/// Turns emitted before the terminating one. A dull or overlapping final turn
/// is not counted; hitting the turn cap counts every turn.
pub fn dialogue_length(episode: &Episode) -> Result<usize> {
    dialogue_length_with(episode, true)
}

/// As [`dialogue_length`], optionally counting the triggering turn.
pub fn dialogue_length_with(episode: &Episode, exclude_trigger: bool) -> Result<usize> {
    match episode.cause {
        None => Err(Error::Unterminated),
        Some(TerminationCause::MaxTurns) => Ok(episode.turns.len()),
        Some(_) if exclude_trigger => Ok(episode.turns.len().saturating_sub(1)),
        Some(_) => Ok(episode.turns.len()),
    }
}

pub fn mean_dialogue_length(episodes: &[Episode]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::EmptyInput("episodes".into()));
    }
    let mut total = 0usize;
    for e in episodes {
        total += dialogue_length(e)?;
    }
    Ok(total as f64 / episodes.len() as f64)
}

/// Simulates one episode per input (in input order) and returns the
/// episodes with their mean length.
pub fn avg_dialogue_length(
    policy: &ModelParams,
    inputs: &[Utterance],
    sim: &SimConfig,
    rewards: &RewardModel<'_>,
    rng: &mut RngStream,
) -> Result<(f64, Vec<Episode>)> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("test inputs".into()));
    }
    let mut episodes = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let mut r = rng.fork(i as u64);
        episodes.push(simulate_dialogue(policy, input, sim.rule.max_turns, sim, rewards, &mut r)?);
    }
    Ok((mean_dialogue_length(&episodes)?, episodes))
}

/// Distinct n-grams over total n-grams across `responses`, EOS excluded.
/// N-grams do not cross response boundaries. Zero when there are none.
pub fn distinct_n(responses: &[Utterance], n: usize) -> Result<f64> {
    if !(n == 1 || n == 2) {
        return Err(Error::Config(format!("distinct-n supports n in {{1, 2}}, got {n}")));
    }
    let mut seen: HashSet<&[TokenId]> = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        for gram in r.content().windows(n) {
            total += 1;
            seen.insert(gram);
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(seen.len() as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub avg_len: f64,
    pub distinct1: f64,
    pub distinct2: f64,
    pub n_episodes: usize,
}

pub const REPORT_HEADER: &str = "model\tavg_len\tdistinct1\tdistinct2\tn_episodes";

pub fn build_report(model: &str, episodes: &[Episode], responses: &[Utterance]) -> Result<EvalReport> {
    if responses.is_empty() {
        return Err(Error::EmptyInput("responses".into()));
    }
    Ok(EvalReport {
        model: model.to_string(),
        avg_len: mean_dialogue_length(episodes)?,
        distinct1: distinct_n(responses, 1)?,
        distinct2: distinct_n(responses, 2)?,
        n_episodes: episodes.len(),
    })
}

pub fn reports_to_tsv(reports: &[EvalReport]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in reports {
        writeln!(
            s,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}",
            r.model, r.avg_len, r.distinct1, r.distinct2, r.n_episodes
        )
        .unwrap();
    }
    s
}
