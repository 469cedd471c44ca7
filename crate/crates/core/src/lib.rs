//! LSTM sequence-to-sequence dialogue policy trained with maximum
//! likelihood, a coherence objective, and policy-gradient self-play.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod math;
pub mod model;
pub mod pipeline;
pub mod rewards;
pub mod rl;
pub mod rng;
pub mod vocab;

pub use error::{Error, Result};
pub use model::{Direction, HyperConfig, ModelDims, ModelParams};
pub use rewards::{RewardBreakdown, RewardModel, RewardWeights};
pub use rng::RngStream;
pub use vocab::{DialogueState, DullSet, TokenId, Utterance, Vocab};
