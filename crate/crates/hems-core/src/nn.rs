//! Dense feed-forward networks with exact reverse-mode gradients and an Adam
//! optimizer.
//!
//! Parameters live in one flat `Vec<f64>`. For each affine layer the weights
//! come first in row-major order (`out_dim` rows of `in_dim`), followed by the
//! biases (`out_dim`). Layers are concatenated input-to-output, so a
//! `[3, 4, 2]` network stores `3*4` weights, `4` biases, `4*2` weights, `2`
//! biases, 26 parameters total.
//!
//! Hidden layers apply the configured activation; the output layer is always
//! linear. Forward and gradient evaluation are pure: the same inputs produce
//! bit-identical outputs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element-wise activation applied after a hidden layer's affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Softplus => {
                // ln(1 + e^x), computed from the non-positive side to avoid overflow.
                if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative with respect to the pre-activation value.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let y = x.tanh();
                1.0 - y * y
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

/// A dense feed-forward network over flat `f64` parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Approximator {
    layer_sizes: Vec<usize>,
    /// One activation per hidden layer (`layer_sizes.len() - 2` entries).
    activations: Vec<Activation>,
    params: Vec<f64>,
}

impl Approximator {
    /// Builds a seeded network with `activation` on every hidden layer.
    ///
    /// Weights are uniform in ±sqrt(6 / (fan_in + fan_out)); biases start at
    /// zero. The same seed reproduces bit-identical parameters.
    pub fn new(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let hidden = layer_sizes.len().saturating_sub(2);
        Self::with_activations(layer_sizes, vec![activation; hidden], seed)
    }

    /// Builds a seeded network with an explicit activation per hidden layer.
    pub fn with_activations(
        layer_sizes: &[usize],
        activations: Vec<Activation>,
        seed: u64,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::config(format!(
                "need at least 2 layer sizes, got {}",
                layer_sizes.len()
            )));
        }
        if let Some(bad) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::config(format!("layer size at index {bad} is zero")));
        }
        if activations.len() != layer_sizes.len() - 2 {
            return Err(Error::config(format!(
                "expected {} hidden activations, got {}",
                layer_sizes.len() - 2,
                activations.len()
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::param_count_for(layer_sizes));
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-limit..limit));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
            let _ = l;
        }

        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activations,
            params,
        })
    }

    /// Total parameter count for a layer list: Σ (in+1)·out over layers.
    pub fn param_count_for(layer_sizes: &[usize]) -> usize {
        layer_sizes
            .windows(2)
            .map(|p| (p[0] + 1) * p[1])
            .sum()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Checks internal consistency; call after deserializing.
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::config("invalid layer sizes".to_string()));
        }
        if self.activations.len() != self.layer_sizes.len() - 2 {
            return Err(Error::config("activation count mismatch".to_string()));
        }
        let expect = Self::param_count_for(&self.layer_sizes);
        if self.params.len() != expect {
            return Err(Error::config(format!(
                "params length {} does not match layout {}",
                self.params.len(),
                expect
            )));
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input length {} does not match first layer size {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Activation for layer `l` (identity on the output layer).
    fn layer_activation(&self, l: usize) -> Option<Activation> {
        self.activations.get(l).copied()
    }

    /// Evaluates the network. Pure: no parameter mutation.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut offset = 0;
        for (l, pair) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (pair[0], pair[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
            offset += (n_in + 1) * n_out;

            let act = self.layer_activation(l);
            let mut next = vec![0.0; n_out];
            for (o, out) in next.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut z = biases[o];
                for (w, x) in row.iter().zip(cur.iter()) {
                    z += w * x;
                }
                *out = match act {
                    Some(a) => a.apply(z),
                    None => z,
                };
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Forward pass that keeps pre- and post-activation values per layer for
    /// the backward pass. `post[0]` is the input itself.
    fn forward_trace(&self, input: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n_layers = self.layer_sizes.len() - 1;
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        post.push(input.to_vec());

        let mut offset = 0;
        for (l, pair) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (pair[0], pair[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
            offset += (n_in + 1) * n_out;

            let act = self.layer_activation(l);
            let cur = post.last().unwrap();
            let mut z_vec = vec![0.0; n_out];
            for (o, z_out) in z_vec.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut z = biases[o];
                for (w, x) in row.iter().zip(cur.iter()) {
                    z += w * x;
                }
                *z_out = z;
            }
            let y_vec: Vec<f64> = match act {
                Some(a) => z_vec.iter().map(|&z| a.apply(z)).collect(),
                None => z_vec.clone(),
            };
            pre.push(z_vec);
            post.push(y_vec);
        }
        (pre, post)
    }

    /// Reverse-mode pass: gradient of `upstreamᵀ · forward(input)` with
    /// respect to both the flat parameters and the input.
    pub fn backprop(&self, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(input)?;
        if upstream.len() != self.output_dim() {
            return Err(Error::shape(format!(
                "upstream length {} does not match output size {}",
                upstream.len(),
                self.output_dim()
            )));
        }

        let (pre, post) = self.forward_trace(input);
        let n_layers = self.layer_sizes.len() - 1;
        let mut param_grad = vec![0.0; self.params.len()];

        // Layer parameter offsets, front to back.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for pair in self.layer_sizes.windows(2) {
            offsets.push(offset);
            offset += (pair[0] + 1) * pair[1];
        }

        // delta = dL/d(pre-activation of layer l); output layer is linear.
        let mut delta = upstream.to_vec();
        for l in (0..n_layers).rev() {
            let n_in = self.layer_sizes[l];
            let n_out = self.layer_sizes[l + 1];
            let base = offsets[l];
            let weights = &self.params[base..base + n_in * n_out];
            let layer_in = &post[l];

            let (w_grad, b_grad) = param_grad[base..base + (n_in + 1) * n_out]
                .split_at_mut(n_in * n_out);
            let mut d_in = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                b_grad[o] = d;
                let row = o * n_in;
                for i in 0..n_in {
                    w_grad[row + i] = d * layer_in[i];
                    d_in[i] += weights[row + i] * d;
                }
            }

            if l > 0 {
                let act = self.layer_activation(l - 1).unwrap();
                delta = d_in
                    .iter()
                    .zip(pre[l - 1].iter())
                    .map(|(&g, &z)| g * act.derivative(z))
                    .collect();
            } else {
                delta = d_in;
            }
        }

        let input_grad = delta;
        Ok((param_grad, input_grad))
    }

    /// Exact Jacobian of `forward` at `input`, `output_dim` rows by
    /// `input_dim` columns.
    pub fn grad_input(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(input)?;
        let out_dim = self.output_dim();
        let mut jac = Vec::with_capacity(out_dim);
        for r in 0..out_dim {
            let mut basis = vec![0.0; out_dim];
            basis[r] = 1.0;
            let (_, row) = self.backprop(input, &basis)?;
            jac.push(row);
        }
        Ok(jac)
    }

    /// Gradient of `upstreamᵀ · forward(input)` with respect to the flat
    /// parameter vector.
    pub fn grad_params(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        Ok(self.backprop(input, upstream)?.0)
    }
}

/// Adam optimizer state with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl Adam {
    pub fn new(param_len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: vec![0.0; param_len],
            second_moment: vec![0.0; param_len],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if grad.len() != params.len() || grad.len() != self.first_moment.len() {
            return Err(Error::shape(format!(
                "gradient length {} does not match parameter length {}",
                grad.len(),
                params.len()
            )));
        }
        if let Some(idx) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite gradient entry at index {idx}"
            )));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn finite_diff_params(net: &Approximator, input: &[f64], upstream: &[f64], idx: usize) -> f64 {
        let delta = 1e-5;
        let mut plus = net.clone();
        plus.params_mut()[idx] += delta;
        let mut minus = net.clone();
        minus.params_mut()[idx] -= delta;
        let f = |n: &Approximator| -> f64 {
            n.forward(input)
                .unwrap()
                .iter()
                .zip(upstream)
                .map(|(y, u)| y * u)
                .sum()
        };
        (f(&plus) - f(&minus)) / (2.0 * delta)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = Approximator::new(&[2, 1], Activation::Tanh, 7).unwrap();
        let b = Approximator::new(&[2, 1], Activation::Tanh, 7).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn param_count_matches_layout_arithmetic() {
        let net = Approximator::new(&[3, 4, 2], Activation::Relu, 42).unwrap();
        assert_eq!(net.params().len(), 26);
        assert_eq!(Approximator::param_count_for(&[3, 4, 2]), 26);
    }

    #[test]
    fn rejects_bad_layer_lists() {
        assert!(Approximator::new(&[3], Activation::Tanh, 0).is_err());
        assert!(Approximator::new(&[3, 0, 1], Activation::Tanh, 0).is_err());
        assert!(Approximator::new(&[], Activation::Tanh, 0).is_err());
    }

    #[test]
    fn two_layer_hand_trace() {
        // y = w2 * tanh(w1*x + b1) + b2 recomputed by hand from the raw params.
        let net = Approximator::new(&[1, 1, 1], Activation::Tanh, 0).unwrap();
        let p = net.params();
        let (w1, b1, w2, b2) = (p[0], p[1], p[2], p[3]);
        let x = 0.37;
        let expected = w2 * (w1 * x + b1).tanh() + b2;
        let got = net.forward(&[x]).unwrap()[0];
        assert!((got - expected).abs() < 1e-15, "got {got}, want {expected}");
    }

    #[test]
    fn single_affine_layer_identity() {
        let mut net = Approximator::new(&[1, 1], Activation::Tanh, 0).unwrap();
        net.params_mut().copy_from_slice(&[2.0, 1.0]);
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn zero_params_propagate_zero() {
        for act in [Activation::Tanh, Activation::Relu] {
            let mut net = Approximator::new(&[3, 4, 2], act, 1).unwrap();
            net.params_mut().fill(0.0);
            assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn forward_is_pure() {
        let net = Approximator::new(&[3, 8, 2], Activation::Softplus, 3).unwrap();
        let x = [0.1, -0.4, 2.0];
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let net = Approximator::new(&[3, 2], Activation::Tanh, 0).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape(_))));
        assert!(matches!(
            net.grad_params(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn linear_net_jacobian_equals_weights() {
        let mut net = Approximator::new(&[2, 2], Activation::Tanh, 0).unwrap();
        net.params_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 0.0, 0.0]);
        let jac = net.grad_input(&[0.3, -0.7]).unwrap();
        assert_eq!(jac, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn relu_dead_region_has_zero_jacobian() {
        let mut net = Approximator::new(&[1, 2, 1], Activation::Relu, 5).unwrap();
        // Negative weights, negative biases: pre-activations < 0 for x > 0.
        net.params_mut()
            .copy_from_slice(&[-1.0, -2.0, -0.5, -0.5, 1.0, 1.0, 0.0]);
        let jac = net.grad_input(&[2.0]).unwrap();
        assert_eq!(jac[0][0], 0.0);
    }

    #[test]
    fn grad_input_matches_finite_differences() {
        for (seed, act) in [(1, Activation::Tanh), (2, Activation::Relu), (3, Activation::Softplus)]
        {
            let net = Approximator::new(&[3, 8, 5, 2], act, seed).unwrap();
            let x = [0.3, -1.1, 0.8];
            let jac = net.grad_input(&x).unwrap();
            let delta = 1e-5;
            for j in 0..3 {
                let mut xp = x;
                xp[j] += delta;
                let mut xm = x;
                xm[j] -= delta;
                let fp = net.forward(&xp).unwrap();
                let fm = net.forward(&xm).unwrap();
                for r in 0..2 {
                    let fd = (fp[r] - fm[r]) / (2.0 * delta);
                    assert!(
                        rel_err(jac[r][j], fd) < 1e-4,
                        "act {act:?} jac[{r}][{j}]={} fd={fd}",
                        jac[r][j]
                    );
                }
            }
        }
    }

    #[test]
    fn grad_params_matches_finite_differences() {
        let net = Approximator::new(&[4, 6, 3], Activation::Tanh, 11).unwrap();
        let x = [0.2, -0.5, 1.3, 0.1];
        let upstream = [0.7, -1.2, 0.4];
        let grad = net.grad_params(&x, &upstream).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let idx = rng.random_range(0..grad.len());
            let fd = finite_diff_params(&net, &x, &upstream, idx);
            assert!(
                rel_err(grad[idx], fd) < 1e-4,
                "param {idx}: analytic {} vs fd {fd}",
                grad[idx]
            );
        }
    }

    #[test]
    fn affine_param_grad_is_input_and_one() {
        let mut net = Approximator::new(&[3, 1], Activation::Tanh, 0).unwrap();
        net.params_mut().copy_from_slice(&[0.5, -0.25, 2.0, 0.1]);
        let x = [1.5, -2.0, 0.25];
        let grad = net.grad_params(&x, &[1.0]).unwrap();
        assert_eq!(&grad[..3], &x);
        assert_eq!(grad[3], 1.0);
    }

    #[test]
    fn zero_upstream_gives_zero_grad() {
        let net = Approximator::new(&[2, 4, 2], Activation::Tanh, 8).unwrap();
        let grad = net.grad_params(&[0.4, 0.6], &[0.0, 0.0]).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point_from_fresh_state() {
        let mut params = vec![1.0, -2.0, 0.5];
        let mut opt = Adam::new(3, 0.1);
        opt.step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn adam_first_step_is_bias_corrected() {
        // With g=1 and fresh moments, first step moves by lr * g/(|g| + eps).
        let mut params = vec![1.0];
        let mut opt = Adam::new(1, 0.1);
        opt.step(&mut params, &[1.0]).unwrap();
        assert!((params[0] - 0.9).abs() < 1e-7, "got {}", params[0]);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut params = vec![0.3, -0.8];
            let mut opt = Adam::new(2, 0.05);
            for i in 0..10 {
                opt.step(&mut params, &[0.1 * i as f64, -0.2]).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut params = vec![1.0];
        let mut opt = Adam::new(1, 0.1);
        assert!(matches!(
            opt.step(&mut params, &[f64::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn serde_round_trip_preserves_params() {
        let net = Approximator::new(&[3, 5, 1], Activation::Tanh, 21).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: Approximator = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(net.params(), back.params());
        assert_eq!(net.forward(&[0.1, 0.2, 0.3]).unwrap(), back.forward(&[0.1, 0.2, 0.3]).unwrap());
    }

    proptest! {
        #[test]
        fn param_count_formula_holds(sizes in proptest::collection::vec(1usize..12, 2..6)) {
            let net = Approximator::new(&sizes, Activation::Tanh, 0).unwrap();
            let expect: usize = sizes.windows(2).map(|p| (p[0] + 1) * p[1]).sum();
            prop_assert_eq!(net.params().len(), expect);
        }

        #[test]
        fn gradients_match_finite_differences_on_random_nets(
            seed in 0u64..500,
            hidden in 1usize..10,
        ) {
            let net = Approximator::new(&[2, hidden, 1], Activation::Tanh, seed).unwrap();
            let x = [0.4, -0.9];
            let grad = net.grad_params(&x, &[1.0]).unwrap();
            let idx = (seed as usize) % grad.len();
            let fd = finite_diff_params(&net, &x, &[1.0], idx);
            prop_assert!(rel_err(grad[idx], fd) < 1e-4);
        }
    }
}
