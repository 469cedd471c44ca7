use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::{dialogue_length, TerminationRule};
use crate::model::ModelParams;
use crate::rewards::RewardModel;
use crate::rng::RngStream;
use crate::vocab::Utterance;

use super::reinforce::{reinforce_update, BaselineState};
use super::simulate::{simulate_dialogue, CandidateSelection, Decoding, SimConfig};

/// Simulated dialogues start at `start_turns` turns and grow by one per
/// stage up to `end_turns`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumSchedule {
    pub start_turns: usize,
    pub end_turns: usize,
    pub candidates_per_step: usize,
    pub iterations_per_stage: usize,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule { start_turns: 2, end_turns: 5, candidates_per_step: 5, iterations_per_stage: 40 }
    }
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.start_turns < 2 || self.start_turns > self.end_turns {
            return Err(Error::Config(format!(
                "curriculum turns must satisfy 2 <= start <= end, got {}..{}",
                self.start_turns, self.end_turns
            )));
        }
        if self.candidates_per_step == 0 || self.iterations_per_stage == 0 {
            return Err(Error::Config("candidates per step and iterations per stage must be positive".into()));
        }
        Ok(())
    }

    pub fn stages(&self) -> Vec<usize> {
        (self.start_turns..=self.end_turns).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlConfig {
    pub episodes_per_update: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub baseline_decay: f64,
    pub temperature: f64,
    pub selection: CandidateSelection,
    pub max_decode_len: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            episodes_per_update: 16,
            learning_rate: 0.02,
            clip_norm: 5.0,
            baseline_decay: 0.95,
            temperature: 1.0,
            selection: CandidateSelection::Uniform,
            max_decode_len: 12,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes_per_update == 0 || self.max_decode_len == 0 {
            return Err(Error::Config("episodes per update and decode length must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0 && self.temperature > 0.0) {
            return Err(Error::Config("RL learning rate, clip norm and temperature must be positive".into()));
        }
        BaselineState::new(self.baseline_decay).map(|_| ())
    }
}

/// What one curriculum stage did.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSnapshot {
    pub turn_limit: usize,
    pub candidates_per_step: usize,
    pub iterations: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_length: f64,
    /// Distinct candidate counts seen on simulated turns.
    pub candidates_observed: BTreeSet<usize>,
    /// Longest episode simulated in this stage.
    pub max_turns_observed: usize,
}

pub const TRAINING_LOG_HEADER: &str =
    "stage_turns\titeration\tmean_return\tmean_length\tsurrogate_loss\tgrad_norm\tbaseline";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateLog {
    pub stage_turns: usize,
    pub iteration: usize,
    pub mean_return: f64,
    pub mean_length: f64,
    pub surrogate_loss: f64,
    pub grad_norm: f64,
    pub baseline: f64,
}

impl UpdateLog {
    pub fn to_tsv(logs: &[UpdateLog]) -> String {
        let mut s = String::from(TRAINING_LOG_HEADER);
        s.push('\n');
        for l in logs {
            writeln!(
                s,
                "{}\t{}\t{:.6}\t{:.4}\t{:.6}\t{:.6}\t{:.6}",
                l.stage_turns, l.iteration, l.mean_return, l.mean_length, l.surrogate_loss, l.grad_norm, l.baseline
            )
            .unwrap();
        }
        s
    }
}

/// REINFORCE over the curriculum. `on_stage` sees each finished stage and
/// the policy at that point.
#[allow(clippy::too_many_arguments)]
pub fn curriculum_train(
    init: ModelParams,
    inputs: &[Utterance],
    schedule: &CurriculumSchedule,
    cfg: &RlConfig,
    rewards: &RewardModel<'_>,
    rule: &TerminationRule,
    rng: &mut RngStream,
    mut on_stage: impl FnMut(&StageSnapshot, &ModelParams) -> Result<()>,
) -> Result<(ModelParams, Vec<StageSnapshot>, Vec<UpdateLog>)> {
    schedule.validate()?;
    cfg.validate()?;
    rule.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyInput("initial inputs".into()));
    }
    let sim = SimConfig {
        decoding: Decoding::Sample {
            candidates: schedule.candidates_per_step,
            temperature: cfg.temperature,
            selection: cfg.selection,
        },
        max_decode_len: cfg.max_decode_len,
        rule: rule.clone(),
    };
    let mut params = init;
    let mut baseline = BaselineState::new(cfg.baseline_decay)?;
    let mut snapshots = Vec::new();
    let mut logs = Vec::new();
    for turn_limit in schedule.stages() {
        let mut snap = StageSnapshot {
            turn_limit,
            candidates_per_step: schedule.candidates_per_step,
            iterations: 0,
            episodes: 0,
            mean_return: 0.0,
            mean_length: 0.0,
            candidates_observed: BTreeSet::new(),
            max_turns_observed: 0,
        };
        let (mut ret_sum, mut len_sum) = (0.0, 0usize);
        for it in 0..schedule.iterations_per_stage {
            let mut episodes = Vec::with_capacity(cfg.episodes_per_update);
            for _ in 0..cfg.episodes_per_update {
                let input = rng.choose(inputs);
                episodes.push(simulate_dialogue(&params, input, turn_limit, &sim, rewards, rng)?);
            }
            let mut batch_len = 0usize;
            for e in &episodes {
                let len = dialogue_length(e)?;
                batch_len += len;
                ret_sum += e.total_return();
                snap.max_turns_observed = snap.max_turns_observed.max(e.turns.len());
                snap.candidates_observed.extend(e.turns.iter().map(|t| t.candidates));
            }
            len_sum += batch_len;
            let stats = reinforce_update(&mut params, &episodes, &mut baseline, cfg.learning_rate, cfg.clip_norm)?;
            logs.push(UpdateLog {
                stage_turns: turn_limit,
                iteration: it,
                mean_return: stats.mean_return,
                mean_length: batch_len as f64 / episodes.len() as f64,
                surrogate_loss: stats.surrogate_loss,
                grad_norm: stats.grad_norm,
                baseline: stats.baseline,
            });
            snap.iterations += 1;
            snap.episodes += episodes.len();
        }
        snap.mean_return = ret_sum / snap.episodes as f64;
        snap.mean_length = len_sum as f64 / snap.episodes as f64;
        on_stage(&snap, &params)?;
        snapshots.push(snap);
    }
    Ok((params, snapshots, logs))
}
