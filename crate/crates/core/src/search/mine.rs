//! The mining loop: sample formulas, reward them by pool-IC improvement,
//! update the policy, repeat.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::buffer::ExperienceBuffer;
use super::policy::{Adam, Policy, PolicyConfig};
use super::ppo::{ppo_update, PpoConfig, PpoStats};
use super::rollout::{forced_episode, rollout, ActionSpace, FormulaSpace};
use crate::dsl::{AlphaExpr, DEFAULT_MAX_TOKENS};
use crate::metrics::{ic, weighted_sum};
use crate::ops::FactorMatrix;
use crate::panel::{FeaturePanel, PanelView, Split, TargetPanel};
use crate::pool::{prepare_factor, AddOutcome, AlphaPool, PoolError, WeightOptConfig};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid mining config: {0}")]
    Config(String),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Improvements strictly above this are committed to the pool.
    pub commit_threshold: f64,
    pub degenerate_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            commit_threshold: 0.0,
            degenerate_penalty: -0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardOutcome {
    pub reward: f64,
    pub committed: bool,
    pub outcome: AddOutcome,
}

/// Reward for a factor already evaluated and z-scored on the training view.
/// The add runs on a copy of the pool and is committed only on improvement.
pub fn reward_prepared(
    pool: &mut AlphaPool,
    expr: &AlphaExpr,
    factor: Arc<FactorMatrix>,
    target: &TargetPanel,
    cfg: &RewardConfig,
) -> RewardOutcome {
    if pool.contains(&expr.print()) {
        return RewardOutcome {
            reward: 0.0,
            committed: false,
            outcome: AddOutcome::Duplicate,
        };
    }
    let mut trial = pool.clone();
    match trial.add_prepared(expr.clone(), factor, target) {
        Ok(outcome @ AddOutcome::Added { .. }) => {
            let delta = outcome.delta_ic();
            let committed = delta > cfg.commit_threshold;
            if committed {
                *pool = trial;
            }
            RewardOutcome {
                reward: delta,
                committed,
                outcome,
            }
        }
        Ok(AddOutcome::Degenerate) => RewardOutcome {
            reward: cfg.degenerate_penalty,
            committed: false,
            outcome: AddOutcome::Degenerate,
        },
        Ok(AddOutcome::Duplicate) => RewardOutcome {
            reward: 0.0,
            committed: false,
            outcome: AddOutcome::Duplicate,
        },
        Err(e) => {
            warn!("reward for {expr} skipped: {e}");
            RewardOutcome {
                reward: 0.0,
                committed: false,
                outcome: AddOutcome::Duplicate,
            }
        }
    }
}

/// Pool-IC improvement from adding `expr`, committing it when it helps.
pub fn reward(
    pool: &mut AlphaPool,
    expr: &AlphaExpr,
    view: &PanelView<'_>,
    target: &TargetPanel,
    cfg: &RewardConfig,
) -> RewardOutcome {
    let factor = Arc::new(prepare_factor(expr, view));
    reward_prepared(pool, expr, factor, target, cfg)
}

/// Turns seed formulas into seeded episodes rewarded against `pool` (applied
/// to a scratch copy in order) and appends them to `buffer`. Seeds that do not
/// fit the action space are skipped with a warning. Returns how many were added.
#[allow(clippy::too_many_arguments)]
pub fn seed_buffer(
    buffer: &mut ExperienceBuffer,
    exprs: &[AlphaExpr],
    pool: &AlphaPool,
    view: &PanelView<'_>,
    target: &TargetPanel,
    space: &FormulaSpace,
    policy: &Policy,
    cfg: &RewardConfig,
) -> usize {
    let mut scratch = pool.clone();
    let mut added = 0;
    for expr in exprs {
        let Some(actions) = space.actions_for(expr) else {
            warn!("seed {expr} is longer than {} tokens or uses off-grid tokens; not replayable", space.max_len);
            continue;
        };
        let Some(mut ep) = forced_episode(policy, space, &actions) else {
            warn!("seed {expr} violates the generation mask; skipped");
            continue;
        };
        ep.reward = reward(&mut scratch, expr, view, target, cfg).reward;
        buffer.push(ep);
        added += 1;
    }
    added
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MineConfig {
    pub pool_capacity: usize,
    /// Maximum program tokens per formula (BEG and SEP excluded).
    pub max_len: usize,
    pub updates: usize,
    /// Episodes sampled per update.
    pub batch_size: usize,
    pub rng_seed: u64,
    pub policy: PolicyConfig,
    pub ppo: PpoConfig,
    pub weights: WeightOptConfig,
    pub reward: RewardConfig,
    pub buffer_capacity: usize,
    /// Buffer episodes mixed into each batch while the replay window is open.
    pub replay_per_update: usize,
    /// Updates after seeding during which the buffer is replayed.
    pub replay_updates: usize,
    /// Initial behaviour-cloning weight on seeded episodes.
    pub bc_weight: f64,
    /// Updates over which the behaviour-cloning weight decays linearly to 0.
    pub bc_decay_updates: usize,
    /// Evaluated factors kept in the formula cache.
    pub cache_capacity: usize,
    /// Stop as soon as the training IC reaches this value.
    pub stop_at_ic: Option<f64>,
    /// Keep the old buffer when a second stage re-seeds.
    pub keep_buffer: bool,
    /// Start the second stage from a freshly initialized policy.
    pub fresh_policy: bool,
    /// Updates of an optional second stage re-seeded from the first stage's pool.
    pub stage_two_updates: Option<usize>,
}

impl Default for MineConfig {
    fn default() -> Self {
        MineConfig {
            pool_capacity: 20,
            max_len: DEFAULT_MAX_TOKENS,
            updates: 500,
            batch_size: 256,
            rng_seed: 0,
            policy: PolicyConfig::default(),
            ppo: PpoConfig::default(),
            weights: WeightOptConfig::default(),
            reward: RewardConfig::default(),
            buffer_capacity: 1024,
            replay_per_update: 16,
            replay_updates: 50,
            bc_weight: 0.1,
            bc_decay_updates: 50,
            cache_capacity: 8192,
            stop_at_ic: None,
            keep_buffer: false,
            fresh_policy: true,
            stage_two_updates: None,
        }
    }
}

impl MineConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::Config(m));
        if self.pool_capacity == 0 {
            return bad("pool capacity must be positive".into());
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.policy.embed_dim == 0 || self.policy.hidden_dim == 0 {
            return bad("policy dimensions must be positive".into());
        }
        let p = &self.ppo;
        if !(p.clip_eps >= 0.0) || !(0.0..=1.0).contains(&p.gae_lambda) || !(0.0..=1.0).contains(&p.gamma) {
            return bad("PPO clip must be >= 0 and gamma, lambda in [0, 1]".into());
        }
        if p.epochs == 0 || p.minibatch == 0 || !(p.lr > 0.0) {
            return bad("PPO epochs, minibatch and lr must be positive".into());
        }
        if !(self.bc_weight >= 0.0) {
            return bad("bc_weight must be non-negative".into());
        }
        self.weights.validate()?;
        Ok(())
    }
}

/// Train/valid/test days of one panel with its targets.
#[derive(Debug, Clone)]
pub struct MiningData<'a> {
    pub panel: &'a FeaturePanel,
    pub target: &'a TargetPanel,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eviction {
    pub added: String,
    pub evicted: String,
    pub delta_ic: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub stage: u64,
    pub train_ic: f64,
    pub valid_ic: Option<f64>,
    pub pool_size: usize,
    pub entropy: f64,
    pub kl: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_reward: f64,
    pub committed: usize,
    /// Sum of committed IC improvements during this update.
    pub committed_delta: f64,
    pub evictions: Vec<Eviction>,
    pub replayed: usize,
    pub aborted: bool,
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}

/// Bounded formula → training-factor cache with FIFO eviction.
#[derive(Debug, Clone)]
struct FactorCache {
    capacity: usize,
    map: BTreeMap<String, Arc<FactorMatrix>>,
    order: VecDeque<String>,
}

impl FactorCache {
    fn new(capacity: usize) -> Self {
        FactorCache {
            capacity,
            map: BTreeMap::new(),
            order: VecDeque::new(),
        }
    }

    fn get_or_insert(&mut self, formula: &str, make: impl FnOnce() -> FactorMatrix) -> Arc<FactorMatrix> {
        if let Some(f) = self.map.get(formula) {
            return f.clone();
        }
        let f = Arc::new(make());
        if self.capacity > 0 {
            if self.order.len() == self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.map.remove(&old);
                }
            }
            self.order.push_back(formula.to_string());
            self.map.insert(formula.to_string(), f.clone());
        }
        f
    }
}

const DOMAIN_POLICY: u64 = 1;
const DOMAIN_ROLLOUT: u64 = 2;
const DOMAIN_PPO: u64 = 3;
const DOMAIN_REPLAY: u64 = 4;

/// Independent deterministic stream per (purpose, stage, index).
fn stream_rng(seed: u64, domain: u64, stage: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(domain | (stage << 8));
    rng.set_word_pos((index as u128) << 32);
    rng
}

#[derive(Debug, Clone)]
pub struct MineOutcome {
    pub pool: AlphaPool,
    pub log: Vec<LogRecord>,
    pub policy: Policy,
    /// Training IC right after seeding, before the first update.
    pub initial_train_ic: f64,
    /// Update count at which `stop_at_ic` was first reached (0 = at start).
    pub reached_at: Option<usize>,
}

/// Stateful miner; [`mine`] drives it end to end.
pub struct Miner<'a> {
    config: MineConfig,
    space: FormulaSpace,
    train_view: PanelView<'a>,
    train_target: TargetPanel,
    valid: Option<(PanelView<'a>, TargetPanel)>,
    policy: Policy,
    adam: Adam,
    buffer: ExperienceBuffer,
    pool: AlphaPool,
    cache: FactorCache,
    valid_cache: BTreeMap<String, Arc<FactorMatrix>>,
    valid_ic: Option<f64>,
    log: Vec<LogRecord>,
    step: usize,
    stage: u64,
    episodes_drawn: u64,
    seeded_at: usize,
    initial_train_ic: f64,
    reached_at: Option<usize>,
}

impl<'a> Miner<'a> {
    pub fn new(config: MineConfig, data: &MiningData<'a>) -> Result<Self, SearchError> {
        config.validate()?;
        let split = &data.split;
        let (_, t) = data.panel.shape();
        if data.target.shape() != data.panel.shape() {
            return Err(SearchError::Config("target shape does not match the panel".into()));
        }
        if split.train.is_empty() || split.train.end > t || split.valid.end > t {
            return Err(SearchError::Config("training range is empty or outside the panel".into()));
        }
        let space = FormulaSpace::new(config.max_len);
        let policy = Self::fresh_policy(&config, &space, 0);
        let adam = Adam::new(&policy.params, config.ppo.lr);
        let valid = (!split.valid.is_empty()).then(|| {
            (
                PanelView::new(data.panel, split.valid.clone()),
                data.target.slice_days(split.valid.clone()),
            )
        });
        Ok(Miner {
            space,
            train_view: PanelView::new(data.panel, split.train.clone()),
            train_target: data.target.slice_days(split.train.clone()),
            valid,
            policy,
            adam,
            buffer: ExperienceBuffer::new(config.buffer_capacity),
            pool: AlphaPool::with_optimizer(config.pool_capacity, config.weights)?,
            cache: FactorCache::new(config.cache_capacity),
            valid_cache: BTreeMap::new(),
            valid_ic: None,
            log: Vec::new(),
            step: 0,
            stage: 0,
            episodes_drawn: 0,
            seeded_at: 0,
            initial_train_ic: 0.0,
            reached_at: None,
            config,
        })
    }

    fn fresh_policy(config: &MineConfig, space: &FormulaSpace, stage: u64) -> Policy {
        let mut rng = stream_rng(config.rng_seed, DOMAIN_POLICY, stage, 0);
        Policy::new(space.n_actions(), config.policy, &mut rng)
    }

    pub fn pool(&self) -> &AlphaPool {
        &self.pool
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn buffer(&self) -> &ExperienceBuffer {
        &self.buffer
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn space(&self) -> &FormulaSpace {
        &self.space
    }

    /// Seeds the pool (in order, via `add_factor`) and the experience buffer.
    pub fn seed(&mut self, exprs: &[AlphaExpr]) -> Result<(), SearchError> {
        if exprs.is_empty() {
            return Ok(());
        }
        let added = seed_buffer(
            &mut self.buffer,
            exprs,
            &self.pool,
            &self.train_view,
            &self.train_target,
            &self.space,
            &self.policy,
            &self.config.reward,
        );
        self.pool.seed(exprs, &self.train_view, &self.train_target)?;
        self.seeded_at = self.step;
        self.initial_train_ic = self.pool.train_ic();
        self.refresh_valid_ic();
        info!(
            "seeded pool with {} of {} formulas (train IC {:.4}); {added} replayable episodes",
            self.pool.len(),
            exprs.len(),
            self.pool.train_ic()
        );
        Ok(())
    }

    /// Starts a new stage from `exprs`: empties the pool, clears the buffer
    /// unless `keep_buffer`, optionally re-initializes the policy, then seeds.
    pub fn restart(&mut self, exprs: &[AlphaExpr]) -> Result<(), SearchError> {
        self.stage += 1;
        if !self.config.keep_buffer {
            self.buffer.clear();
        }
        if self.config.fresh_policy {
            self.policy = Self::fresh_policy(&self.config, &self.space, self.stage);
            self.adam = Adam::new(&self.policy.params, self.config.ppo.lr);
        }
        self.pool = AlphaPool::with_optimizer(self.config.pool_capacity, self.config.weights)?;
        self.initial_train_ic = 0.0;
        self.valid_ic = None;
        self.seed(exprs)
    }

    fn refresh_valid_ic(&mut self) {
        let Some((view, target)) = &self.valid else {
            self.valid_ic = None;
            return;
        };
        if self.pool.is_empty() {
            self.valid_ic = None;
            return;
        }
        let mut factors = Vec::with_capacity(self.pool.len());
        for e in self.pool.entries() {
            let f = self
                .valid_cache
                .entry(e.formula.clone())
                .or_insert_with(|| Arc::new(prepare_factor(&e.expr, view)))
                .clone();
            factors.push(f);
        }
        let live: Vec<&str> = self.pool.entries().iter().map(|e| e.formula.as_str()).collect();
        self.valid_cache.retain(|k, _| live.contains(&k.as_str()));
        let refs: Vec<&FactorMatrix> = factors.iter().map(|f| f.as_ref()).collect();
        let z = weighted_sum(&refs, &self.pool.weights());
        self.valid_ic = ic(&z, target).ok().map(|r| r.ic);
    }

    fn reached(&self) -> bool {
        self.config.stop_at_ic.is_some_and(|t| self.pool.train_ic() >= t)
    }

    /// One rollout batch, reward pass and PPO update.
    pub fn update(&mut self) -> &LogRecord {
        self.step += 1;
        let mut batch = Vec::with_capacity(self.config.batch_size + self.config.replay_per_update);
        for _ in 0..self.config.batch_size {
            let mut rng = stream_rng(self.config.rng_seed, DOMAIN_ROLLOUT, self.stage, self.episodes_drawn);
            self.episodes_drawn += 1;
            batch.push(rollout(&self.policy, &self.space, &mut rng));
        }
        let (mut committed, mut committed_delta, mut reward_sum) = (0, 0.0, 0.0);
        let mut evictions = Vec::new();
        for ep in batch.iter_mut() {
            let expr = ep.expr(&self.space.vocab).expect("masked rollouts are valid programs");
            let formula = expr.print();
            let (view, target) = (&self.train_view, &self.train_target);
            let factor = self.cache.get_or_insert(&formula, || prepare_factor(&expr, view));
            let out = reward_prepared(&mut self.pool, &expr, factor, target, &self.config.reward);
            ep.reward = out.reward;
            reward_sum += out.reward;
            if out.committed {
                committed += 1;
                committed_delta += out.reward;
                if let AddOutcome::Added {
                    evicted: Some(evicted),
                    delta_ic,
                } = &out.outcome
                {
                    evictions.push(Eviction {
                        added: formula.clone(),
                        evicted: evicted.clone(),
                        delta_ic: *delta_ic,
                    });
                }
            }
        }
        let mean_reward = reward_sum / batch.len() as f64;

        let since_seed = self.step - self.seeded_at;
        let mut replayed = 0;
        if !self.buffer.is_empty() && since_seed <= self.config.replay_updates {
            let mut rng = stream_rng(self.config.rng_seed, DOMAIN_REPLAY, self.stage, self.step as u64);
            for mut ep in self.buffer.sample(self.config.replay_per_update, &mut rng) {
                ep.rescore(&self.policy);
                batch.push(ep);
                replayed += 1;
            }
        }
        let bc = if self.config.bc_decay_updates == 0 {
            0.0
        } else {
            let frac = (since_seed - 1) as f64 / self.config.bc_decay_updates as f64;
            self.config.bc_weight * (1.0 - frac).max(0.0)
        };
        let mut rng = stream_rng(self.config.rng_seed, DOMAIN_PPO, self.stage, self.step as u64);
        let stats: PpoStats = ppo_update(&mut self.policy, &mut self.adam, &batch, &self.config.ppo, bc, &mut rng);
        if committed > 0 {
            self.refresh_valid_ic();
        }
        if self.reached_at.is_none() && self.reached() {
            self.reached_at = Some(self.step);
        }
        self.log.push(LogRecord {
            step: self.step,
            stage: self.stage,
            train_ic: self.pool.train_ic(),
            valid_ic: self.valid_ic,
            pool_size: self.pool.len(),
            entropy: stats.entropy,
            kl: stats.approx_kl,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            mean_reward,
            committed,
            committed_delta,
            evictions,
            replayed,
            aborted: stats.aborted,
        });
        self.log.last().expect("just pushed")
    }

    /// Runs up to `updates` updates, stopping early once `stop_at_ic` is reached.
    pub fn run(&mut self, updates: usize) {
        if self.reached_at.is_none() && self.reached() {
            self.reached_at = Some(self.step);
        }
        for _ in 0..updates {
            if self.config.stop_at_ic.is_some() && self.reached_at.is_some() {
                break;
            }
            let rec = self.update();
            log::debug!(
                "step {} train_ic {:.4} pool {} entropy {:.3}",
                rec.step,
                rec.train_ic,
                rec.pool_size,
                rec.entropy
            );
        }
    }

    pub fn into_outcome(self) -> MineOutcome {
        MineOutcome {
            pool: self.pool,
            log: self.log,
            policy: self.policy,
            initial_train_ic: self.initial_train_ic,
            reached_at: self.reached_at,
        }
    }
}

/// Full mining run: optional seeding, `config.updates` updates and, when
/// configured, a second stage re-seeded from the first stage's pool.
pub fn mine(config: MineConfig, data: &MiningData<'_>, seeds: &[AlphaExpr]) -> Result<MineOutcome, SearchError> {
    let mut miner = Miner::new(config, data)?;
    miner.seed(seeds)?;
    miner.run(config.updates);
    if let Some(extra) = config.stage_two_updates {
        let exprs: Vec<AlphaExpr> = miner.pool().entries().iter().map(|e| e.expr.clone()).collect();
        miner.restart(&exprs)?;
        miner.run(extra);
    }
    Ok(miner.into_outcome())
}
