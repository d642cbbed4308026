//! Neural surrogate of the indoor-temperature dynamics.
//!
//! Samples (t_in, t_out, h) → t_in' are collected by driving the environment
//! with random feasible controls; a small tanh network fits them under input
//! and output standardization so the lookahead controller gets a smooth,
//! differentiable model with well-scaled gradients.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Env};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Approximator};

/// One observed thermal transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalSample {
    pub t_in: f64,
    pub t_out: f64,
    pub h: f64,
    pub t_in_next: f64,
}

/// Drives the environment with uniformly random feasible HVAC power (and
/// random ESS power, which does not enter the thermal dynamics) and records
/// `n` thermal transitions. Wraps to the start of the trace when exhausted.
/// Deterministic for a fixed (env state, n, seed).
pub fn collect_samples(env: &mut Env, n: usize, seed: u64) -> Result<Vec<ThermalSample>> {
    if n == 0 {
        return Err(Error::config("sample count must be ≥ 1".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_max = env.config().h_max;
    let (c_max, d_max) = (env.config().c_max, env.config().d_max);
    env.reset(0, rng.random())?;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if env.remaining() == 0 {
            env.reset(0, rng.random())?;
        }
        let s = *env.state();
        let raw = Action {
            e: rng.random_range(-d_max..=c_max),
            h: rng.random_range(0.0..=h_max),
        };
        let step = env.step(raw)?;
        out.push(ThermalSample {
            t_in: s.t_in,
            t_out: s.t_out,
            h: step.action.h,
            t_in_next: step.next_state.t_in,
        });
    }
    Ok(out)
}

/// Trained thermal model: network plus the standardization constants, so a
/// saved surrogate is self-contained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Surrogate {
    net: Approximator,
    input_mean: [f64; 3],
    input_std: [f64; 3],
    output_mean: f64,
    output_std: f64,
}

impl Surrogate {
    /// Predicted next indoor temperature. Pure.
    pub fn next_t_in(&self, t_in: f64, t_out: f64, h: f64) -> f64 {
        let x = self.standardize([t_in, t_out, h]);
        let y = self.net.forward(&x).expect("surrogate input is 3-dim");
        y[0] * self.output_std + self.output_mean
    }

    /// Partial derivatives (∂t_in'/∂t_in, ∂t_in'/∂t_out, ∂t_in'/∂h), chained
    /// through both standardizations.
    pub fn grad(&self, t_in: f64, t_out: f64, h: f64) -> [f64; 3] {
        let x = self.standardize([t_in, t_out, h]);
        let jac = self.net.grad_input(&x).expect("surrogate input is 3-dim");
        let mut g = [0.0; 3];
        for i in 0..3 {
            g[i] = jac[0][i] * self.output_std / self.input_std[i];
        }
        g
    }

    pub fn grad_h(&self, t_in: f64, t_out: f64, h: f64) -> f64 {
        self.grad(t_in, t_out, h)[2]
    }

    pub fn net(&self) -> &Approximator {
        &self.net
    }

    fn standardize(&self, raw: [f64; 3]) -> Vec<f64> {
        (0..3)
            .map(|i| (raw[i] - self.input_mean[i]) / self.input_std[i])
            .collect()
    }

    pub fn save_json<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        let s: Surrogate = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.net.validate()?;
        if s.net.input_dim() != 3 || s.net.output_dim() != 1 {
            return Err(Error::config("surrogate network must map 3 inputs to 1 output".to_string()));
        }
        Ok(s)
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt().max(1e-6))
}

/// Fits a network of shape `arch` (must be 3 in, 1 out) to the samples.
/// Shuffles, splits 80/20, standardizes with training-split statistics, and
/// minimizes mean squared error with Adam. Returns the model and the holdout
/// RMSE in °C.
pub fn train_surrogate(
    samples: &[ThermalSample],
    arch: &[usize],
    epochs: usize,
    seed: u64,
) -> Result<(Surrogate, f64)> {
    if samples.len() < 2 {
        return Err(Error::config(format!(
            "need at least 2 samples for a train/holdout split, got {}",
            samples.len()
        )));
    }
    if arch.first() != Some(&3) || arch.last() != Some(&1) {
        return Err(Error::config(format!("arch must map 3 inputs to 1 output, got {arch:?}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_train = ((samples.len() * 4) / 5).max(1).min(samples.len() - 1);
    let (train_idx, hold_idx) = order.split_at(n_train);

    let train: Vec<ThermalSample> = train_idx.iter().map(|&i| samples[i]).collect();
    let fields = |s: &ThermalSample| [s.t_in, s.t_out, s.h];
    let mut input_mean = [0.0; 3];
    let mut input_std = [1.0; 3];
    for k in 0..3 {
        let (m, s) = mean_std(train.iter().map(|smp| fields(smp)[k]), train.len());
        input_mean[k] = m;
        input_std[k] = s;
    }
    let (output_mean, output_std) = mean_std(train.iter().map(|s| s.t_in_next), train.len());

    let net = Approximator::new(arch, Activation::Tanh, rng.random())?;
    let mut model = Surrogate {
        net,
        input_mean,
        input_std,
        output_mean,
        output_std,
    };

    let std_x = |model: &Surrogate, s: &ThermalSample| model.standardize(fields(s));
    let std_y = |model: &Surrogate, s: &ThermalSample| (s.t_in_next - model.output_mean) / model.output_std;

    let batch = 64;
    let mut opt = Adam::new(model.net.params().len(), 3e-3);
    let mut idx: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..epochs {
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(batch) {
            let mut grad = vec![0.0; model.net.params().len()];
            let mut loss = 0.0;
            for &i in chunk {
                let x = std_x(&model, &train[i]);
                let y = std_y(&model, &train[i]);
                let pred = model.net.forward(&x)?[0];
                let err = pred - y;
                loss += err * err;
                let g = model.net.grad_params(&x, &[2.0 * err / chunk.len() as f64])?;
                for (acc, gi) in grad.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
            loss /= chunk.len() as f64;
            if !loss.is_finite() {
                return Err(Error::training(format!(
                    "surrogate loss diverged to {loss} at epoch {epoch}"
                )));
            }
            opt.step(model.net.params_mut(), &grad)?;
        }
    }

    let mut sq = 0.0;
    for &i in hold_idx {
        let s = &samples[i];
        let err = model.next_t_in(s.t_in, s.t_out, s.h) - s.t_in_next;
        sq += err * err;
    }
    let rmse = (sq / hold_idx.len() as f64).sqrt();
    Ok((model, rmse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{thermal_next, EnvConfig};
    use crate::traces::{synth_traces, SynthProfile};
    use std::sync::Arc;

    fn test_env(noise_sigma: f64) -> Env {
        let traces = synth_traces(5, 10, &SynthProfile::default()).unwrap();
        let cfg = EnvConfig {
            noise_sigma,
            ..EnvConfig::default()
        };
        Env::new(cfg, Arc::new(traces)).unwrap()
    }

    fn noise_free_samples(n: usize, seed: u64) -> Vec<ThermalSample> {
        let mut env = test_env(0.0);
        collect_samples(&mut env, n, seed).unwrap()
    }

    #[test]
    fn collects_requested_count_with_feasible_h() {
        let mut env = test_env(0.05);
        let samples = collect_samples(&mut env, 100, 1).unwrap();
        assert_eq!(samples.len(), 100);
        let h_max = env.config().h_max;
        assert!(samples.iter().all(|s| (0.0..=h_max).contains(&s.h)));
    }

    #[test]
    fn noise_free_samples_replay_the_dynamics_exactly() {
        let mut env = test_env(0.0);
        let cfg = env.config().clone();
        for s in collect_samples(&mut env, 200, 2).unwrap() {
            let expect = thermal_next(&cfg, s.t_in, s.t_out, s.h, 0.0);
            assert!((s.t_in_next - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn collection_is_seed_deterministic() {
        let a = {
            let mut env = test_env(0.05);
            collect_samples(&mut env, 300, 7).unwrap()
        };
        let b = {
            let mut env = test_env(0.05);
            collect_samples(&mut env, 300, 7).unwrap()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn collection_wraps_past_trace_end() {
        let mut env = test_env(0.0);
        let len = env.traces().len();
        let samples = collect_samples(&mut env, len + 50, 3).unwrap();
        assert_eq!(samples.len(), len + 50);
    }

    #[test]
    fn fits_noise_free_dynamics_below_five_hundredths() {
        let samples = noise_free_samples(3000, 4);
        let (_, rmse) = train_surrogate(&samples, &[3, 32, 32, 1], 60, 0).unwrap();
        assert!(rmse < 0.05, "holdout RMSE {rmse}");
    }

    #[test]
    fn noisy_fit_stays_within_point_one_degree() {
        let mut env = test_env(0.05);
        let samples = collect_samples(&mut env, 5000, 5).unwrap();
        let (_, rmse) = train_surrogate(&samples, &[3, 32, 32, 1], 60, 0).unwrap();
        assert!(rmse < 0.1, "holdout RMSE {rmse}");
    }

    #[test]
    fn zero_epochs_returns_untrained_baseline() {
        let samples = noise_free_samples(500, 6);
        let (m0a, r0a) = train_surrogate(&samples, &[3, 16, 1], 0, 9).unwrap();
        let (m0b, r0b) = train_surrogate(&samples, &[3, 16, 1], 0, 9).unwrap();
        assert_eq!(m0a.net().params(), m0b.net().params());
        assert_eq!(r0a, r0b);
        // Untrained output sits near the target mean, so the error is on the
        // order of the target's spread, far above a trained fit.
        assert!(r0a > 0.3, "untrained RMSE suspiciously low: {r0a}");
        let (m1, r1) = train_surrogate(&samples, &[3, 16, 1], 20, 9).unwrap();
        assert_ne!(m0a.net().params(), m1.net().params());
        assert!(r1 < r0a, "training should improve on the untrained baseline");
    }

    #[test]
    fn sample_order_does_not_move_rmse_much() {
        let samples = noise_free_samples(2000, 8);
        let mut reversed = samples.clone();
        reversed.reverse();
        let (_, r1) = train_surrogate(&samples, &[3, 16, 1], 40, 11).unwrap();
        let (_, r2) = train_surrogate(&reversed, &[3, 16, 1], 40, 11).unwrap();
        let rel = (r1 - r2).abs() / r1.max(r2);
        assert!(rel < 0.10, "rmse {r1} vs {r2} differ by {rel}");
    }

    #[test]
    fn prediction_is_pure_and_matches_dynamics() {
        let samples = noise_free_samples(3000, 10);
        let (model, _) = train_surrogate(&samples, &[3, 32, 32, 1], 60, 1).unwrap();
        let cfg = EnvConfig::default();
        for (t_in, t_out, h) in [(23.0, 30.0, 1.0), (21.0, 26.0, 0.0), (24.0, 33.0, 2.0)] {
            let a = model.next_t_in(t_in, t_out, h);
            let b = model.next_t_in(t_in, t_out, h);
            assert_eq!(a, b);
            let truth = thermal_next(&cfg, t_in, t_out, h, 0.0);
            assert!((a - truth).abs() < 0.15, "probe ({t_in},{t_out},{h}): {a} vs {truth}");
        }
        let at_mean = model.next_t_in(model.input_mean[0], model.input_mean[1], model.input_mean[2]);
        assert!(at_mean.is_finite());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let samples = noise_free_samples(1500, 12);
        let (model, _) = train_surrogate(&samples, &[3, 16, 16, 1], 30, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let t_in = rng.random_range(20.0..26.0);
            let t_out = rng.random_range(24.0..34.0);
            let h = rng.random_range(0.1..1.9);
            let g = model.grad_h(t_in, t_out, h);
            let d = 1e-5;
            let fd = (model.next_t_in(t_in, t_out, h + d) - model.next_t_in(t_in, t_out, h - d))
                / (2.0 * d);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "grad {g} vs fd {fd} rel {rel}");
        }
    }

    #[test]
    fn cooling_gradient_is_negative_on_training_region() {
        let samples = noise_free_samples(2500, 14);
        let (model, _) = train_surrogate(&samples, &[3, 32, 32, 1], 60, 3).unwrap();
        for (t_in, t_out) in [(22.0, 28.0), (23.5, 32.0), (21.0, 30.0)] {
            for h in [0.2, 1.0, 1.8] {
                let g = model.grad_h(t_in, t_out, h);
                assert!(g < 0.0, "grad at ({t_in},{t_out},{h}) is {g}");
            }
        }
    }

    #[test]
    fn gradient_is_continuous_in_h() {
        let samples = noise_free_samples(1500, 15);
        let (model, _) = train_surrogate(&samples, &[3, 16, 1], 30, 4).unwrap();
        let delta = 1e-3;
        let mut prev = model.grad_h(23.0, 30.0, 0.0);
        for i in 1..=2000 {
            let h = i as f64 * delta;
            let g = model.grad_h(23.0, 30.0, h);
            assert!(
                (g - prev).abs() <= 10.0 * delta,
                "gradient jump {} -> {} at h = {h}",
                prev,
                g
            );
            prev = g;
        }
    }

    #[test]
    fn save_load_round_trip_preserves_predictions() {
        let samples = noise_free_samples(500, 16);
        let (model, _) = train_surrogate(&samples, &[3, 8, 1], 10, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("surrogate.json");
        model.save_json(&path).unwrap();
        let back = Surrogate::load_json(&path).unwrap();
        assert_eq!(model.next_t_in(23.0, 30.0, 1.0), back.next_t_in(23.0, 30.0, 1.0));
        assert_eq!(model.grad_h(23.0, 30.0, 1.0), back.grad_h(23.0, 30.0, 1.0));
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let samples = noise_free_samples(10, 17);
        assert!(train_surrogate(&samples[..1], &[3, 8, 1], 1, 0).is_err());
        assert!(train_surrogate(&samples, &[2, 8, 1], 1, 0).is_err());
        assert!(train_surrogate(&samples, &[3, 8, 2], 1, 0).is_err());
    }
}
