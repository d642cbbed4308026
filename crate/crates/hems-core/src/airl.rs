//! Adversarial inverse reinforcement learning: a decomposed reward
//! r(s,a,s') = g(s,a) + γ·h(s') − h(s) scored against the policy density
//! through the discriminator d̂ = exp(r) / (exp(r) + π(a|s)), trained with
//! binary cross entropy on mixed expert/agent batches.
//!
//! All scores are computed in log space: d̂ = sigmoid(r − log π), which is
//! the same function without the overflow.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demos::DemoSet;
use crate::env::{Action, HomeState, Transition};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Approximator};

/// Per-dimension shift/scale fitted on expert data and shared by every net
/// input, so all models see comparably scaled features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<I: Iterator<Item = Vec<f64>> + Clone>(rows: I, dim: usize) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        for row in rows.clone() {
            for (m, v) in mean.iter_mut().zip(&row) {
                *m += v;
            }
            n += 1;
        }
        let n = n.max(1);
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for k in 0..dim {
                let d = row[k] - mean[k];
                var[k] += d * d;
            }
        }
        let std = var
            .iter()
            .map(|v| (v / n as f64).sqrt().max(1e-6))
            .collect();
        Self { mean, std }
    }

    pub fn fit_states(demos: &DemoSet) -> Self {
        Normalizer::fit(
            demos.transitions.iter().map(|t| t.s.to_vec().to_vec()),
            HomeState::DIM,
        )
    }

    pub fn fit_actions(demos: &DemoSet) -> Self {
        Normalizer::fit(
            demos.transitions.iter().map(|t| t.a.to_vec().to_vec()),
            Action::DIM,
        )
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Learned reward with a state-only shaping head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardNet {
    g_net: Approximator,
    h_net: Approximator,
    gamma: f64,
    state_norm: Normalizer,
    action_norm: Normalizer,
}

/// Configuration of the reward nets and their optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AirlConfig {
    /// Discount γ shared with the policy trainer; in (0, 1).
    pub gamma: f64,
    /// Mixed-batch size per class (I expert rows and I agent rows).
    pub batch_size: usize,
    /// Adam rate for both reward heads.
    pub lr: f64,
    pub g_hidden: Vec<usize>,
    pub h_hidden: Vec<usize>,
}

impl Default for AirlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 256,
            lr: 1e-3,
            g_hidden: vec![32, 32],
            h_hidden: vec![32, 32],
        }
    }
}

impl AirlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be ≥ 1".to_string()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::config(format!("lr must be non-negative, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Anything that can report log π(a|s); the policy trainer implements this,
/// and tests substitute fixed densities.
pub trait PolicyDensity {
    fn log_prob(&self, s: &HomeState, a: &Action) -> f64;
}

impl RewardNet {
    pub fn new(
        cfg: &AirlConfig,
        state_norm: Normalizer,
        action_norm: Normalizer,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut g_sizes = vec![HomeState::DIM + Action::DIM];
        g_sizes.extend(&cfg.g_hidden);
        g_sizes.push(1);
        let mut h_sizes = vec![HomeState::DIM];
        h_sizes.extend(&cfg.h_hidden);
        h_sizes.push(1);
        Ok(Self {
            g_net: Approximator::new(&g_sizes, Activation::Relu, seed)?,
            h_net: Approximator::new(&h_sizes, Activation::Relu, seed.wrapping_add(1))?,
            gamma: cfg.gamma,
            state_norm,
            action_norm,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn g_net_mut(&mut self) -> &mut Approximator {
        &mut self.g_net
    }

    pub fn h_net_mut(&mut self) -> &mut Approximator {
        &mut self.h_net
    }

    fn g_input(&self, s: &HomeState, a: &Action) -> Vec<f64> {
        let mut x = self.state_norm.apply(&s.to_vec());
        x.extend(self.action_norm.apply(&a.to_vec()));
        x
    }

    fn h_input(&self, s: &HomeState) -> Vec<f64> {
        self.state_norm.apply(&s.to_vec())
    }

    pub fn g_value(&self, s: &HomeState, a: &Action) -> f64 {
        self.g_net.forward(&self.g_input(s, a)).expect("g input dims fixed")[0]
    }

    pub fn h_value(&self, s: &HomeState) -> f64 {
        self.h_net.forward(&self.h_input(s)).expect("h input dims fixed")[0]
    }

    /// r(s,a,s') = g(s,a) + γ·h(s') − h(s). Pure.
    pub fn reward_value(&self, s: &HomeState, a: &Action, s_next: &HomeState) -> f64 {
        self.g_value(s, a) + self.gamma * self.h_value(s_next) - self.h_value(s)
    }

    /// d̂ = sigmoid(r − log π), identical to exp(r)/(exp(r)+π) wherever the
    /// latter is representable.
    pub fn discriminator_score(&self, logpi: f64, s: &HomeState, a: &Action, s_next: &HomeState) -> f64 {
        sigmoid(self.reward_value(s, a, s_next) - logpi)
    }

    pub fn save_json<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        Ok(std::fs::write(path, serde_json::to_string_pretty(self)?)?)
    }

    pub fn load_json<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        let net: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        net.g_net.validate()?;
        net.h_net.validate()?;
        if !(net.gamma > 0.0 && net.gamma < 1.0) {
            return Err(Error::config(format!("gamma must lie in (0,1), got {}", net.gamma)));
        }
        Ok(net)
    }
}

/// Mixed batch of labeled transitions with the matching policy densities.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    pub transitions: Vec<Transition>,
    /// 1 for expert rows, 0 for agent rows.
    pub labels: Vec<f64>,
    pub agent_logprobs: Vec<f64>,
}

impl LabeledBatch {
    pub fn validate(&self) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::config("labeled batch is empty".to_string()));
        }
        if self.transitions.len() != self.labels.len()
            || self.transitions.len() != self.agent_logprobs.len()
        {
            return Err(Error::shape(format!(
                "batch columns disagree: {} transitions, {} labels, {} logprobs",
                self.transitions.len(),
                self.labels.len(),
                self.agent_logprobs.len()
            )));
        }
        if self.labels.iter().any(|&d| d != 0.0 && d != 1.0) {
            return Err(Error::config("labels must be 0 or 1".to_string()));
        }
        Ok(())
    }
}

/// Mean binary cross entropy of the discriminator over the batch, in stable
/// logits form: per row, d·softplus(−z) + (1−d)·softplus(z) with
/// z = r − log π.
pub fn discriminator_loss(batch: &LabeledBatch, rnet: &RewardNet) -> Result<f64> {
    batch.validate()?;
    let mut total = 0.0;
    for i in 0..batch.transitions.len() {
        let t = &batch.transitions[i];
        let z = rnet.reward_value(&t.s, &t.a, &t.s_next) - batch.agent_logprobs[i];
        let d = batch.labels[i];
        total += d * Activation::Softplus.apply(-z) + (1.0 - d) * Activation::Softplus.apply(z);
    }
    Ok(total / batch.transitions.len() as f64)
}

/// Adam state for the two reward heads.
#[derive(Debug, Clone)]
pub struct DiscOptimizer {
    g_opt: Adam,
    h_opt: Adam,
}

impl DiscOptimizer {
    pub fn new(rnet: &RewardNet, lr: f64) -> Self {
        Self {
            g_opt: Adam::new(rnet.g_net.params().len(), lr),
            h_opt: Adam::new(rnet.h_net.params().len(), lr),
        }
    }
}

/// One joint gradient step on both reward heads from a mixed batch; the
/// policy supplies log π(a|s) for every row, expert rows included. Returns
/// the pre-step loss. Policy parameters are read, never written.
pub fn update_discriminator(
    rnet: &mut RewardNet,
    expert: &[Transition],
    agent: &[Transition],
    policy: &dyn PolicyDensity,
    opt: &mut DiscOptimizer,
) -> Result<f64> {
    if expert.is_empty() || agent.is_empty() {
        return Err(Error::config("discriminator batches must be nonempty".to_string()));
    }
    let mut batch = LabeledBatch {
        transitions: Vec::with_capacity(expert.len() + agent.len()),
        labels: Vec::with_capacity(expert.len() + agent.len()),
        agent_logprobs: Vec::with_capacity(expert.len() + agent.len()),
    };
    for t in expert {
        batch.transitions.push(*t);
        batch.labels.push(1.0);
        batch.agent_logprobs.push(policy.log_prob(&t.s, &t.a));
    }
    for t in agent {
        batch.transitions.push(*t);
        batch.labels.push(0.0);
        batch.agent_logprobs.push(policy.log_prob(&t.s, &t.a));
    }

    let n = batch.transitions.len() as f64;
    let mut loss = 0.0;
    let mut g_grad = vec![0.0; rnet.g_net.params().len()];
    let mut h_grad = vec![0.0; rnet.h_net.params().len()];
    for i in 0..batch.transitions.len() {
        let t = &batch.transitions[i];
        let d = batch.labels[i];
        let z = rnet.reward_value(&t.s, &t.a, &t.s_next) - batch.agent_logprobs[i];
        loss += d * Activation::Softplus.apply(-z) + (1.0 - d) * Activation::Softplus.apply(z);
        // dL/dz = sigmoid(z) − d, and z depends on φ only through r.
        let up = (sigmoid(z) - d) / n;
        let gg = rnet.g_net.grad_params(&rnet.g_input(&t.s, &t.a), &[up])?;
        for (acc, v) in g_grad.iter_mut().zip(gg) {
            *acc += v;
        }
        let hn = rnet.h_net.grad_params(&rnet.h_input(&t.s_next), &[up * rnet.gamma])?;
        for (acc, v) in h_grad.iter_mut().zip(hn) {
            *acc += v;
        }
        let hc = rnet.h_net.grad_params(&rnet.h_input(&t.s), &[-up])?;
        for (acc, v) in h_grad.iter_mut().zip(hc) {
            *acc += v;
        }
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::training(format!("discriminator loss is {loss}")));
    }
    opt.g_opt.step(rnet.g_net.params_mut(), &g_grad)?;
    opt.h_opt.step(rnet.h_net.params_mut(), &h_grad)?;
    Ok(loss)
}

/// Uniform with-replacement sample of `n` transitions.
pub fn sample_batch(demos: &DemoSet, n: usize, rng: &mut ChaCha8Rng) -> Vec<Transition> {
    (0..n)
        .map(|_| demos.transitions[rng.random_range(0..demos.transitions.len())])
        .collect()
}
