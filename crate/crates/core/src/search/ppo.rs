//! Clipped-surrogate PPO over variable-length episodes.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{masked_log_softmax, Adam, Params, Policy};
use super::rollout::Episode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub epochs: usize,
    /// Episodes per minibatch.
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_eps: 0.2,
            gae_lambda: 0.95,
            gamma: 1.0,
            epochs: 4,
            minibatch: 64,
            entropy_coef: 0.01,
            value_coef: 0.5,
            lr: 1e-3,
            max_grad_norm: 0.5,
            normalize_advantages: true,
        }
    }
}

/// Diagnostics of one update, averaged over all minibatch steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// The update hit a non-finite loss or gradient and was rolled back.
    pub aborted: bool,
}

/// GAE advantages and value targets for one episode with a terminal reward.
pub fn gae(values: &[f64], reward: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let t = values.len();
    let mut adv = vec![0.0; t];
    let mut running = 0.0;
    for k in (0..t).rev() {
        let (r, next) = if k + 1 == t { (reward, 0.0) } else { (0.0, values[k + 1]) };
        let delta = r + gamma * next - values[k];
        running = delta + gamma * lambda * running;
        adv[k] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Runs `epochs` passes of minibatch PPO over `batch`. `bc_weight` adds a
/// behaviour-cloning term `-bc_weight · log π(a)` on seeded episodes.
pub fn ppo_update(
    policy: &mut Policy,
    adam: &mut Adam,
    batch: &[Episode],
    cfg: &PpoConfig,
    bc_weight: f64,
    rng: &mut impl Rng,
) -> PpoStats {
    assert!(!batch.is_empty(), "PPO batch must not be empty");
    let mut advantages = Vec::with_capacity(batch.len());
    let mut returns = Vec::with_capacity(batch.len());
    for ep in batch {
        let (a, r) = gae(&ep.values, ep.reward, cfg.gamma, cfg.gae_lambda);
        advantages.push(a);
        returns.push(r);
    }
    if cfg.normalize_advantages {
        let all: Vec<f64> = advantages.iter().flatten().copied().collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let sd = (all.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
        for a in advantages.iter_mut().flatten() {
            *a = (*a - mean) / (sd + 1e-8);
        }
    }

    let saved_params = policy.params.clone();
    let saved_adam = adam.clone();
    adam.lr = cfg.lr;
    let mut totals = PpoStats::default();
    let mut counted = 0usize;
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let minibatch = cfg.minibatch.max(1);
    let begin = policy.begin_input();
    let mut grads = Params::zeros_like(&policy.params);

    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(minibatch) {
            grads.fill(0.0);
            let steps: usize = chunk.iter().map(|&i| batch[i].len()).sum();
            let scale = 1.0 / steps as f64;
            let mut loss = 0.0;
            for &i in chunk {
                let ep = &batch[i];
                let trace = policy.forward(&ep.inputs(begin));
                let mut dlogits = Vec::with_capacity(ep.len());
                let mut dvalues = Vec::with_capacity(ep.len());
                for t in 0..ep.len() {
                    let lp = masked_log_softmax(&trace.logits[t], &ep.masks[t]);
                    let a = ep.actions[t];
                    let adv = advantages[i][t];
                    let ratio = (lp[a] - ep.log_probs[t]).exp();
                    let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
                    let surrogate = (ratio * adv).min(clipped * adv);
                    let binding =
                        (adv > 0.0 && ratio >= 1.0 + cfg.clip_eps) || (adv < 0.0 && ratio <= 1.0 - cfg.clip_eps);
                    let mut entropy = 0.0;
                    for l in &lp {
                        if l.is_finite() {
                            entropy -= l.exp() * l;
                        }
                    }
                    let value_err = trace.values[t] - returns[i][t];
                    let bc = if ep.seeded { bc_weight } else { 0.0 };
                    loss += scale
                        * (-surrogate + cfg.value_coef * value_err * value_err - cfg.entropy_coef * entropy - bc * lp[a]);
                    totals.policy_loss += -surrogate;
                    totals.value_loss += value_err * value_err;
                    totals.entropy += entropy;
                    totals.approx_kl += ep.log_probs[t] - lp[a];
                    totals.clip_fraction += ((ratio - 1.0).abs() > cfg.clip_eps) as u8 as f64;
                    counted += 1;

                    // d loss / d log π(a)
                    let dlogp = scale * (if binding { 0.0 } else { -ratio * adv } - bc);
                    let mut dl = vec![0.0; lp.len()];
                    for (j, l) in lp.iter().enumerate() {
                        if !l.is_finite() {
                            continue;
                        }
                        let p = l.exp();
                        let onehot = if j == a { 1.0 } else { 0.0 };
                        dl[j] = dlogp * (onehot - p) + scale * cfg.entropy_coef * p * (l + entropy);
                    }
                    dlogits.push(dl);
                    dvalues.push(scale * 2.0 * cfg.value_coef * value_err);
                }
                policy.backward(&trace, &dlogits, &dvalues, &mut grads);
            }
            if !loss.is_finite() || !grads.is_finite() {
                log::warn!("non-finite PPO loss or gradient; update rolled back");
                policy.params = saved_params;
                *adam = saved_adam;
                return PpoStats {
                    aborted: true,
                    ..PpoStats::default()
                };
            }
            let norm = grads.norm();
            if cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm {
                grads.scale(cfg.max_grad_norm / norm);
            }
            adam.step(&mut policy.params, &grads);
        }
    }
    if counted > 0 {
        let c = counted as f64;
        totals.policy_loss /= c;
        totals.value_loss /= c;
        totals.entropy /= c;
        totals.approx_kl /= c;
        totals.clip_fraction /= c;
    }
    totals
}
