//! Two-agent simulation and policy-gradient training.

mod curriculum;
mod episode;
mod mi;
mod reinforce;
mod simulate;

pub use curriculum::{curriculum_train, CurriculumSchedule, RlConfig, StageSnapshot, UpdateLog, TRAINING_LOG_HEADER};
pub use episode::{Agent, Episode, EpisodeRecord, Turn, TurnRecord};
pub use mi::{mi_pretrain, mixed_objective_gradient, MiConfig, MiReport, MixedGradient};
pub use reinforce::{
    compute_advantages, policy_gradient, reinforce_update, BaselineState, UpdateStats,
};
pub use simulate::{simulate_dialogue, CandidateSelection, Decoding, SimConfig};
