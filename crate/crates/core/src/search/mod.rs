//! PPO-driven formula search.
//!
//! A recurrent policy emits formulas token by token in reverse Polish order,
//! restricted at each step to tokens that keep the program completable. The
//! terminal reward is the improvement of the pool's combined training IC.

mod buffer;
mod mine;
mod policy;
mod ppo;
mod rollout;

pub use buffer::ExperienceBuffer;
pub use mine::{
    mine, reward, reward_prepared, seed_buffer, Eviction, LogRecord, MineConfig, MineOutcome, Miner, MiningData,
    RewardConfig, RewardOutcome, SearchError,
};
pub use policy::{masked_log_softmax, Adam, Params, Policy, PolicyConfig, StepOutput, Trace};
pub use ppo::{gae, ppo_update, PpoConfig, PpoStats};
pub use rollout::{forced_episode, greedy_decode, rollout, ActionSpace, Episode, FormulaSpace};
