//! Proximal policy optimization and the adversarial training loop that
//! alternates discriminator updates with policy improvement against the
//! learned reward.
//!
//! Actions are sampled from a diagonal Gaussian in an unbounded raw space,
//! squashed through tanh, and mapped affinely into the box of admissible
//! controls; log densities carry the full change-of-variables correction.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

use crate::airl::{
    sample_batch, update_discriminator, AirlConfig, DiscOptimizer, Normalizer, PolicyDensity,
    RewardNet,
};
use crate::demos::DemoSet;
use crate::env::{Action, Env, EnvConfig, HomeState, StepOutcome, Transition};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Approximator};
use crate::traces::{TraceSet, SLOTS_PER_DAY};

// ---------------------------------------------------------------------------
// Policy and value function
// ---------------------------------------------------------------------------

/// log(1 − tanh²(u)) evaluated without cancellation for large |u|.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - Activation::Softplus.apply(-2.0 * u))
}

/// Inset used when inverting the squash from a boundary action.
const SQUASH_INSET: f64 = 1e-6;

/// Diagonal Gaussian policy with a tanh squash into per-dimension bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianPolicy {
    mean_net: Approximator,
    log_std: Vec<f64>,
    low: Vec<f64>,
    high: Vec<f64>,
    state_norm: Normalizer,
}

/// One draw from the policy: the raw Gaussian sample, its squashed action,
/// and the log density of that action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    pub raw: [f64; Action::DIM],
    pub action: Action,
    pub logprob: f64,
}

impl GaussianPolicy {
    pub fn new(
        hidden: &[usize],
        low: Vec<f64>,
        high: Vec<f64>,
        state_norm: Normalizer,
        log_std_init: f64,
        seed: u64,
    ) -> Result<Self> {
        if low.len() != Action::DIM || high.len() != Action::DIM {
            return Err(Error::shape(format!(
                "action bounds must have {} dims, got {}/{}",
                Action::DIM,
                low.len(),
                high.len()
            )));
        }
        for (lo, hi) in low.iter().zip(&high) {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::config(format!(
                    "action bounds must satisfy low < high, got [{lo}, {hi}]"
                )));
            }
        }
        if !log_std_init.is_finite() {
            return Err(Error::config(format!("log_std_init is {log_std_init}")));
        }
        let mut sizes = vec![HomeState::DIM];
        sizes.extend(hidden);
        sizes.push(Action::DIM);
        Ok(Self {
            mean_net: Approximator::new(&sizes, Activation::Tanh, seed)?,
            log_std: vec![log_std_init; Action::DIM],
            low,
            high,
            state_norm,
        })
    }

    /// Bounds e ∈ [−d_max, c_max] and h ∈ [0, h_max] from the environment.
    pub fn for_env(
        cfg: &EnvConfig,
        hidden: &[usize],
        state_norm: Normalizer,
        log_std_init: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::new(
            hidden,
            vec![-cfg.d_max, 0.0],
            vec![cfg.c_max, cfg.h_max],
            state_norm,
            log_std_init,
            seed,
        )
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.low, &self.high)
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    fn features(&self, s: &HomeState) -> Vec<f64> {
        self.state_norm.apply(&s.to_vec())
    }

    /// Raw-space mean of the Gaussian at this state.
    pub fn mean_raw(&self, s: &HomeState) -> Vec<f64> {
        self.mean_net
            .forward(&self.features(s))
            .expect("policy input dims fixed")
    }

    fn squash_dim(&self, j: usize, u: f64) -> f64 {
        let half = 0.5 * (self.high[j] - self.low[j]);
        let center = 0.5 * (self.high[j] + self.low[j]);
        center + half * u.tanh()
    }

    fn squash(&self, raw: &[f64; Action::DIM]) -> Action {
        Action {
            e: self.squash_dim(0, raw[0]),
            h: self.squash_dim(1, raw[1]),
        }
    }

    /// log π of the action that `raw` squashes to, under current parameters.
    pub fn raw_logprob(&self, s: &HomeState, raw: &[f64; Action::DIM]) -> f64 {
        let mean = self.mean_raw(s);
        let mut lp = 0.0;
        for j in 0..Action::DIM {
            let sigma = self.log_std[j].exp();
            let z = (raw[j] - mean[j]) / sigma;
            lp += -0.5 * (2.0 * PI).ln() - self.log_std[j] - 0.5 * z * z;
            let half = 0.5 * (self.high[j] - self.low[j]);
            lp -= half.ln() + log_one_minus_tanh_sq(raw[j]);
        }
        lp
    }

    pub fn sample(&self, s: &HomeState, rng: &mut ChaCha8Rng) -> ActionSample {
        let mean = self.mean_raw(s);
        let mut raw = [0.0; Action::DIM];
        for j in 0..Action::DIM {
            let z: f64 = StandardNormal.sample(rng);
            raw[j] = mean[j] + self.log_std[j].exp() * z;
        }
        ActionSample {
            raw,
            action: self.squash(&raw),
            logprob: self.raw_logprob(s, &raw),
        }
    }

    /// log π(a|s) for an arbitrary in-bounds action: invert the squash with
    /// an ε-inset clamp, then evaluate the raw density with the Jacobian.
    pub fn action_logprob(&self, s: &HomeState, a: &Action) -> f64 {
        let vals = a.to_vec();
        let mut raw = [0.0; Action::DIM];
        for j in 0..Action::DIM {
            let half = 0.5 * (self.high[j] - self.low[j]);
            let center = 0.5 * (self.high[j] + self.low[j]);
            let t = ((vals[j] - center) / half).clamp(-1.0 + SQUASH_INSET, 1.0 - SQUASH_INSET);
            raw[j] = t.atanh();
        }
        self.raw_logprob(s, &raw)
    }

    /// Squashed mean, used for evaluation.
    pub fn deterministic(&self, s: &HomeState) -> Action {
        let mean = self.mean_raw(s);
        self.squash(&[mean[0], mean[1]])
    }

    /// Entropy of the raw Gaussian (state independent).
    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|ls| 0.5 * (1.0 + (2.0 * PI).ln()) + ls)
            .sum()
    }

    /// Learnable parameters: mean-net weights followed by log_std.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.mean_net.params().to_vec();
        v.extend(&self.log_std);
        v
    }

    fn set_flat_params(&mut self, v: &[f64]) {
        let n = self.mean_net.params().len();
        self.mean_net.params_mut().copy_from_slice(&v[..n]);
        self.log_std.copy_from_slice(&v[n..]);
    }

    pub fn save_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        Ok(std::fs::write(path, serde_json::to_string_pretty(self)?)?)
    }

    pub fn load_json<P: AsRef<Path>>(path: P) -> Result<Self> {
        let policy: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        policy.mean_net.validate()?;
        Ok(policy)
    }
}

impl PolicyDensity for GaussianPolicy {
    fn log_prob(&self, s: &HomeState, a: &Action) -> f64 {
        self.action_logprob(s, a)
    }
}

/// State-value function over normalized features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueNet {
    net: Approximator,
    state_norm: Normalizer,
}

impl ValueNet {
    pub fn new(hidden: &[usize], state_norm: Normalizer, seed: u64) -> Result<Self> {
        let mut sizes = vec![HomeState::DIM];
        sizes.extend(hidden);
        sizes.push(1);
        Ok(Self {
            net: Approximator::new(&sizes, Activation::Tanh, seed)?,
            state_norm,
        })
    }

    pub fn value(&self, s: &HomeState) -> f64 {
        self.net
            .forward(&self.state_norm.apply(&s.to_vec()))
            .expect("value input dims fixed")[0]
    }
}

// ---------------------------------------------------------------------------
// Rollouts and advantages
// ---------------------------------------------------------------------------

/// One environment step as stored for learning. `squashed` is the policy's
/// own action; `executed` is the control after feasibility projection, which
/// is what the transition and the costs reflect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutRow {
    pub state: HomeState,
    pub next_state: HomeState,
    pub raw: [f64; Action::DIM],
    pub squashed: Action,
    pub executed: Action,
    pub logprob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub rows: Vec<RolloutRow>,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// V(s) one past the final row, for bootstrap when it is not terminal.
    pub last_value: f64,
}

impl RolloutBuffer {
    pub fn mean_reward(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.reward).sum::<f64>() / self.rows.len() as f64
    }

    /// Transitions with executed actions, as the discriminator consumes them.
    pub fn transitions(&self) -> Vec<Transition> {
        self.rows
            .iter()
            .map(|r| Transition {
                s: r.state,
                a: r.executed,
                s_next: r.next_state,
            })
            .collect()
    }
}

/// Rolls the policy for `steps` slots. Episodes are whole trace days: each
/// begins at a day boundary drawn from `rng` and ends after the 24th slot,
/// where `done` is set. Rewards come from `reward_fn` on the executed
/// transition.
pub fn collect_rollout(
    env: &mut Env,
    policy: &GaussianPolicy,
    value_net: &ValueNet,
    reward_fn: &dyn Fn(&HomeState, &StepOutcome) -> f64,
    steps: usize,
    gamma: f64,
    gae_lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutBuffer> {
    let mut buf = RolloutBuffer {
        rows: Vec::with_capacity(steps),
        gamma,
        gae_lambda,
        last_value: 0.0,
    };
    let days = env.traces().days();
    if steps > 0 && days == 0 {
        return Err(Error::config(
            "rollouts need at least one full trace day".to_string(),
        ));
    }
    let mut episode_step = SLOTS_PER_DAY;
    for _ in 0..steps {
        if episode_step >= SLOTS_PER_DAY {
            let day = rng.random_range(0..days);
            env.reset(day * SLOTS_PER_DAY, rng.random())?;
            episode_step = 0;
        }
        let s = *env.state();
        let sample = policy.sample(&s, rng);
        let out = env.step(sample.action)?;
        let done = episode_step == SLOTS_PER_DAY - 1;
        buf.rows.push(RolloutRow {
            state: s,
            next_state: out.next_state,
            raw: sample.raw,
            squashed: sample.action,
            executed: out.action,
            logprob: sample.logprob,
            reward: reward_fn(&s, &out),
            value: value_net.value(&s),
            done,
            x1: out.x1,
            x2: out.x2,
            x3: out.x3,
        });
        episode_step += 1;
    }
    if let Some(last) = buf.rows.last() {
        buf.last_value = if last.done {
            0.0
        } else {
            value_net.value(&last.next_state)
        };
    }
    Ok(buf)
}

/// Generalized advantage estimates plus discounted returns.
#[derive(Debug, Clone)]
pub struct Advantages {
    /// GAE(γ, λ) values before normalization.
    pub raw: Vec<f64>,
    /// Batch-normalized advantages (zero mean, unit variance).
    pub normalized: Vec<f64>,
    /// Value targets: raw advantage + V(s).
    pub returns: Vec<f64>,
}

pub fn gae_advantages(buf: &RolloutBuffer) -> Result<Advantages> {
    if !(0.0..=1.0).contains(&buf.gae_lambda) {
        return Err(Error::config(format!(
            "gae_lambda must lie in [0,1], got {}",
            buf.gae_lambda
        )));
    }
    let n = buf.rows.len();
    let mut raw = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let row = &buf.rows[t];
        let (next_value, carry) = if row.done {
            (0.0, 0.0)
        } else if t + 1 < n {
            (buf.rows[t + 1].value, next_adv)
        } else {
            (buf.last_value, 0.0)
        };
        let delta = row.reward + buf.gamma * next_value - row.value;
        raw[t] = delta + buf.gamma * buf.gae_lambda * carry;
        next_adv = raw[t];
    }
    let returns: Vec<f64> = raw
        .iter()
        .zip(&buf.rows)
        .map(|(a, r)| a + r.value)
        .collect();
    let mean = if n == 0 {
        0.0
    } else {
        raw.iter().sum::<f64>() / n as f64
    };
    let var = if n == 0 {
        0.0
    } else {
        raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64
    };
    let std = var.sqrt();
    let normalized = raw.iter().map(|a| (a - mean) / (std + 1e-8)).collect();
    Ok(Advantages {
        raw,
        normalized,
        returns,
    })
}

// ---------------------------------------------------------------------------
// PPO update
// ---------------------------------------------------------------------------

/// Hyperparameters of the policy optimizer and the outer training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    /// Outer iterations N of the adversarial loop.
    pub iterations: usize,
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub steps_per_iter: usize,
    pub entropy_coef: f64,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub log_std_init: f64,
    /// Snapshot cadence of the policy during training, in iterations.
    pub snapshot_every: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            clip_eps: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            epochs: 10,
            minibatch: 64,
            lr_policy: 3e-4,
            lr_value: 1e-3,
            steps_per_iter: 2048,
            entropy_coef: 0.01,
            policy_hidden: vec![32, 32],
            value_hidden: vec![32, 32],
            log_std_init: -0.5,
            snapshot_every: 50,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::config(format!(
                "clip_eps must lie in (0,1), got {}",
                self.clip_eps
            )));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::config(format!(
                "gae_lambda must lie in [0,1], got {}",
                self.gae_lambda
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!(
                "gamma must lie in (0,1), got {}",
                self.gamma
            )));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.snapshot_every == 0 {
            return Err(Error::config(
                "epochs, minibatch and snapshot_every must be ≥ 1".to_string(),
            ));
        }
        if self.lr_policy < 0.0 || self.lr_value < 0.0 {
            return Err(Error::config("learning rates must be non-negative".to_string()));
        }
        if !self.log_std_init.is_finite() {
            return Err(Error::config("log_std_init must be finite".to_string()));
        }
        Ok(())
    }
}

/// Adam states for the policy (mean net + log_std jointly) and value net.
#[derive(Debug, Clone)]
pub struct PpoOptimizer {
    policy_opt: Adam,
    value_opt: Adam,
}

impl PpoOptimizer {
    pub fn new(policy: &GaussianPolicy, value_net: &ValueNet, cfg: &PpoConfig) -> Self {
        Self {
            policy_opt: Adam::new(policy.flat_params().len(), cfg.lr_policy),
            value_opt: Adam::new(value_net.net.params().len(), cfg.lr_value),
        }
    }
}

/// Diagnostics of one `ppo_update` call, averaged over all minibatches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Runs `epochs` passes of clipped-surrogate minibatch SGD over the buffer.
/// The surrogate is −E[min(ρÂ, clip(ρ)Â)] − c_H·H(π); the value net fits the
/// returns with MSE. Advantages are normalized once over the whole batch.
pub fn ppo_update(
    policy: &mut GaussianPolicy,
    value_net: &mut ValueNet,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    opt: &mut PpoOptimizer,
    rng: &mut ChaCha8Rng,
) -> Result<PpoStats> {
    cfg.validate()?;
    if buf.rows.is_empty() {
        return Err(Error::config("ppo_update needs a nonempty rollout".to_string()));
    }
    let adv = gae_advantages(buf)?;
    let n = buf.rows.len();
    let features: Vec<Vec<f64>> = buf
        .rows
        .iter()
        .map(|r| policy.state_norm.apply(&r.state.to_vec()))
        .collect();

    let n_mean = policy.mean_net.params().len();
    let mut sum_policy_loss = 0.0;
    let mut sum_value_loss = 0.0;
    let mut sum_kl = 0.0;
    let mut clipped = 0usize;
    let mut seen = 0usize;

    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        // Fisher-Yates driven by the caller's rng keeps runs reproducible.
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for chunk in order.chunks(cfg.minibatch) {
            let m = chunk.len() as f64;
            let mut pol_grad = vec![0.0; n_mean + Action::DIM];
            let mut val_grad = vec![0.0; value_net.net.params().len()];
            for &i in chunk {
                let row = &buf.rows[i];
                let x = &features[i];
                let mean = policy.mean_net.forward(x)?;
                let mut logp_new = 0.0;
                let mut zs = [0.0; Action::DIM];
                for j in 0..Action::DIM {
                    let sigma = policy.log_std[j].exp();
                    zs[j] = (row.raw[j] - mean[j]) / sigma;
                    logp_new += -0.5 * (2.0 * PI).ln() - policy.log_std[j] - 0.5 * zs[j] * zs[j];
                    let half = 0.5 * (policy.high[j] - policy.low[j]);
                    logp_new -= half.ln() + log_one_minus_tanh_sq(row.raw[j]);
                }
                let log_ratio = logp_new - row.logprob;
                let ratio = log_ratio.exp();
                let a = adv.normalized[i];
                let unclipped = ratio * a;
                let clamped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a;
                sum_policy_loss += -unclipped.min(clamped) - cfg.entropy_coef * policy.entropy();
                sum_kl += (ratio - 1.0) - log_ratio;
                if (ratio - 1.0).abs() > cfg.clip_eps {
                    clipped += 1;
                }
                seen += 1;

                // The surrogate has zero gradient when the clip binds against
                // the direction of improvement.
                let flows = if a >= 0.0 {
                    ratio <= 1.0 + cfg.clip_eps
                } else {
                    ratio >= 1.0 - cfg.clip_eps
                };
                if flows && cfg.lr_policy > 0.0 {
                    let coeff = -a * ratio / m;
                    let mut upstream = vec![0.0; Action::DIM];
                    for j in 0..Action::DIM {
                        let sigma = policy.log_std[j].exp();
                        upstream[j] = coeff * zs[j] / sigma;
                        pol_grad[n_mean + j] += coeff * (zs[j] * zs[j] - 1.0);
                    }
                    let g = policy.mean_net.grad_params(x, &upstream)?;
                    for (acc, v) in pol_grad.iter_mut().zip(g) {
                        *acc += v;
                    }
                }
                for j in 0..Action::DIM {
                    pol_grad[n_mean + j] -= cfg.entropy_coef / m;
                }

                let v = value_net.net.forward(x)?[0];
                let err = v - adv.returns[i];
                sum_value_loss += err * err;
                let vg = value_net.net.grad_params(x, &[2.0 * err / m])?;
                for (acc, g) in val_grad.iter_mut().zip(vg) {
                    *acc += g;
                }
            }
            let mut flat = policy.flat_params();
            opt.policy_opt.step(&mut flat, &pol_grad)?;
            policy.set_flat_params(&flat);
            opt.value_opt.step(value_net.net.params_mut(), &val_grad)?;
        }
    }
    Ok(PpoStats {
        policy_loss: sum_policy_loss / seen as f64,
        value_loss: sum_value_loss / seen as f64,
        approx_kl: sum_kl / seen as f64,
        clip_fraction: clipped as f64 / seen as f64,
    })
}

// ---------------------------------------------------------------------------
// Adversarial training loop
// ---------------------------------------------------------------------------

/// One row of the training log CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterLog {
    pub iteration: usize,
    /// Absent for trainers without a discriminator.
    pub disc_loss: Option<f64>,
    pub mean_agent_reward: f64,
    pub eval_tec: f64,
    pub eval_mtd: f64,
}

pub fn write_training_log<P: AsRef<Path>>(path: P, logs: &[IterLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in logs {
        w.serialize(row)?;
    }
    Ok(w.flush().map(|_| ())?)
}

pub fn load_training_log<P: AsRef<Path>>(path: P) -> Result<Vec<IterLog>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut logs = Vec::new();
    for row in r.deserialize() {
        logs.push(row?);
    }
    Ok(logs)
}

/// Deterministic evaluation over every full day of the bound traces:
/// total energy cost and mean temperature deviation.
pub fn eval_policy(
    policy: &GaussianPolicy,
    env_cfg: &EnvConfig,
    traces: &Arc<TraceSet>,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut env = Env::new(env_cfg.clone(), Arc::clone(traces))?;
    let days = traces.days();
    if days == 0 {
        return Err(Error::config("evaluation needs at least one full day".to_string()));
    }
    let mut tec = 0.0;
    let mut dev = 0.0;
    let mut slots = 0usize;
    for day in 0..days {
        env.reset(day * SLOTS_PER_DAY, seed.wrapping_add(day as u64))?;
        for _ in 0..SLOTS_PER_DAY {
            let s = *env.state();
            let out = env.step(policy.deterministic(&s))?;
            tec += out.x1 + out.x2;
            dev += out.x3;
            slots += 1;
        }
    }
    Ok((tec, dev / slots as f64))
}

/// Everything the adversarial trainer produces.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: GaussianPolicy,
    pub value_net: ValueNet,
    pub reward_net: RewardNet,
    pub logs: Vec<IterLog>,
}

/// Inverse-RL training: for each of N iterations, sample an expert batch,
/// collect an agent batch, take one discriminator step, roll the policy
/// under the refreshed reward, and run a PPO update. Feature normalization
/// is fitted once on the expert data and shared by every net.
pub fn train_hmpc_airl(
    env_cfg: &EnvConfig,
    traces: Arc<TraceSet>,
    demos: &DemoSet,
    airl_cfg: &AirlConfig,
    ppo_cfg: &PpoConfig,
    seed: u64,
    mut on_iter: impl FnMut(usize, &GaussianPolicy, &IterLog) -> Result<()>,
) -> Result<TrainOutput> {
    airl_cfg.validate()?;
    ppo_cfg.validate()?;
    demos.validate()?;
    env_cfg.validate()?;

    let state_norm = Normalizer::fit_states(demos);
    let action_norm = Normalizer::fit_actions(demos);
    let mut rnet = RewardNet::new(airl_cfg, state_norm.clone(), action_norm, seed)?;
    let mut disc_opt = DiscOptimizer::new(&rnet, airl_cfg.lr);
    let mut policy = GaussianPolicy::for_env(
        env_cfg,
        &ppo_cfg.policy_hidden,
        state_norm.clone(),
        ppo_cfg.log_std_init,
        seed.wrapping_add(1),
    )?;
    let mut value_net = ValueNet::new(&ppo_cfg.value_hidden, state_norm, seed.wrapping_add(2))?;
    let mut opt = PpoOptimizer::new(&policy, &value_net, ppo_cfg);
    let mut env = Env::new(env_cfg.clone(), Arc::clone(&traces))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logs = Vec::with_capacity(ppo_cfg.iterations);

    for iteration in 0..ppo_cfg.iterations {
        let expert = sample_batch(demos, airl_cfg.batch_size, &mut rng);
        let probe = collect_rollout(
            &mut env,
            &policy,
            &value_net,
            &|_, _| 0.0,
            airl_cfg.batch_size,
            ppo_cfg.gamma,
            ppo_cfg.gae_lambda,
            &mut rng,
        )?;
        let disc_loss =
            update_discriminator(&mut rnet, &expert, &probe.transitions(), &policy, &mut disc_opt)?;

        let reward_fn = |s: &HomeState, out: &StepOutcome| {
            rnet.reward_value(s, &out.action, &out.next_state)
        };
        let buf = collect_rollout(
            &mut env,
            &policy,
            &value_net,
            &reward_fn,
            ppo_cfg.steps_per_iter,
            ppo_cfg.gamma,
            ppo_cfg.gae_lambda,
            &mut rng,
        )?;
        let mean_agent_reward = buf.mean_reward();
        ppo_update(&mut policy, &mut value_net, &buf, ppo_cfg, &mut opt, &mut rng)?;

        let (eval_tec, eval_mtd) = eval_policy(&policy, env_cfg, &traces, seed ^ 0x5eed)?;
        let row = IterLog {
            iteration,
            disc_loss: Some(disc_loss),
            mean_agent_reward,
            eval_tec,
            eval_mtd,
        };
        on_iter(iteration, &policy, &row)?;
        logs.push(row);
    }

    Ok(TrainOutput {
        policy,
        value_net,
        reward_net: rnet,
        logs,
    })
}
