//! Two-level model-predictive expert.
//!
//! The upper level picks an HVAC power sequence by projected gradient descent
//! through the thermal surrogate, penalizing comfort-band deviation plus a
//! small energy pull that parks the temperature near the upper band edge (the
//! cheap side when cooling). The lower level then dispatches the ESS over a
//! discrete power grid by best-first branch and bound, taking the HVAC plan
//! as given. Demonstrations apply only the first action of each solve and
//! re-plan every slot with within-horizon foresight from the trace.

use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::demos::DemoSet;
use crate::env::{ess_next, Action, Env, EnvConfig, Transition};
use crate::error::{Error, Result};
use crate::surrogate::Surrogate;
use crate::traces::TraceSet;

/// Planner knobs. Loads from JSON with defaults and unknown keys rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    /// Lookahead length in slots.
    pub horizon: usize,
    /// Projected-gradient iterations for the HVAC solve.
    pub gd_iters: usize,
    /// Initial gradient step; halved on objective increase (max 10 halvings).
    pub gd_lr: f64,
    /// Penalty scale on comfort deviation inside the HVAC objective, $/°C.
    pub comfort_weight: f64,
    /// Small pull toward low HVAC power, $/kW: without it the objective is
    /// flat anywhere inside the band and the plan would overcool.
    pub energy_weight: f64,
    /// Safety margin subtracted from the upper comfort bound inside the
    /// planner, °C: absorbs surrogate error so the real trajectory stays in
    /// band.
    pub comfort_margin: f64,
    /// ESS power grid size over [−d_max, c_max]; odd so idle is a level.
    pub charge_levels: usize,
    /// Demonstration length in slots (L).
    pub expert_slots: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 24,
            gd_iters: 300,
            gd_lr: 0.4,
            comfort_weight: 1.0,
            energy_weight: 0.05,
            comfort_margin: 0.05,
            charge_levels: 9,
            expert_slots: 360,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("horizon must be ≥ 1".to_string()));
        }
        if self.charge_levels < 3 || self.charge_levels % 2 == 0 {
            return Err(Error::config(format!(
                "charge_levels must be odd and ≥ 3, got {}",
                self.charge_levels
            )));
        }
        if !(self.gd_lr > 0.0) {
            return Err(Error::config(format!("gd_lr must be positive, got {}", self.gd_lr)));
        }
        if self.comfort_weight < 0.0 || self.energy_weight < 0.0 || self.comfort_margin < 0.0 {
            return Err(Error::config(
                "comfort_weight, energy_weight, comfort_margin must be non-negative".to_string(),
            ));
        }
        if self.expert_slots == 0 {
            return Err(Error::config("expert_slots must be ≥ 1".to_string()));
        }
        Ok(())
    }
}

/// Per-slot exogenous forecasts over one lookahead window. Taken verbatim
/// from the trace: planning assumes perfect within-horizon foresight.
#[derive(Debug, Clone)]
pub struct ForecastWindow {
    pub buy: Vec<f64>,
    pub sell: Vec<f64>,
    pub pv: Vec<f64>,
    pub load: Vec<f64>,
    pub t_out: Vec<f64>,
}

impl ForecastWindow {
    pub fn from_traces(ts: &TraceSet, start: usize, len: usize) -> Result<Self> {
        if start + len > ts.len() {
            return Err(Error::range(format!(
                "window [{start}, {}) exceeds trace length {}",
                start + len,
                ts.len()
            )));
        }
        Ok(Self {
            buy: ts.buy_price[start..start + len].to_vec(),
            sell: ts.sell_price[start..start + len].to_vec(),
            pv: ts.pv[start..start + len].to_vec(),
            load: ts.load[start..start + len].to_vec(),
            t_out: ts.t_out[start..start + len].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.buy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buy.is_empty()
    }
}

// --- upper level: HVAC by projected gradient descent ------------------------

fn planner_band(env_cfg: &EnvConfig, mpc: &MpcConfig) -> (f64, f64) {
    (env_cfg.t_low, env_cfg.t_upp - mpc.comfort_margin)
}

fn hinge(t: f64, low: f64, upp: f64) -> f64 {
    (t - upp).max(0.0) + (low - t).max(0.0)
}

fn hinge_sub(t: f64, low: f64, upp: f64) -> f64 {
    if t > upp {
        1.0
    } else if t < low {
        -1.0
    } else {
        0.0
    }
}

/// Objective the HVAC solve minimizes: rolls the surrogate forward from
/// `t_in0` under `h` and sums comfort deviation (against the margin-tightened
/// band) plus the energy pull. Exposed so tests can grid-search it.
pub fn upper_objective(
    surrogate: &Surrogate,
    env_cfg: &EnvConfig,
    mpc: &MpcConfig,
    t_in0: f64,
    t_out: &[f64],
    h: &[f64],
) -> f64 {
    let (low, upp) = planner_band(env_cfg, mpc);
    let mut t = t_in0;
    let mut j = 0.0;
    for k in 0..h.len() {
        j += mpc.energy_weight * h[k];
        t = surrogate.next_t_in(t, t_out[k], h[k]);
        j += mpc.comfort_weight * hinge(t, low, upp);
    }
    j
}

fn upper_gradient(
    surrogate: &Surrogate,
    env_cfg: &EnvConfig,
    mpc: &MpcConfig,
    t_in0: f64,
    t_out: &[f64],
    h: &[f64],
) -> Vec<f64> {
    let n = h.len();
    let (low, upp) = planner_band(env_cfg, mpc);
    let mut temps = Vec::with_capacity(n + 1);
    let mut d_t = vec![0.0; n];
    let mut d_h = vec![0.0; n];
    temps.push(t_in0);
    for k in 0..n {
        let t = temps[k];
        let g = surrogate.grad(t, t_out[k], h[k]);
        d_t[k] = g[0];
        d_h[k] = g[2];
        temps.push(surrogate.next_t_in(t, t_out[k], h[k]));
    }
    // Reverse sweep: adj accumulates dJ/dt_{k+1}.
    let mut grad = vec![0.0; n];
    let mut adj = 0.0;
    for k in (0..n).rev() {
        let a = adj + mpc.comfort_weight * hinge_sub(temps[k + 1], low, upp);
        grad[k] = a * d_h[k] + mpc.energy_weight;
        adj = a * d_t[k];
    }
    grad
}

/// HVAC power that holds the indoor temperature at `upp` for one slot under
/// the surrogate, found by bisection; 0 when no cooling is needed and `h_max`
/// when even full power cannot hold the edge.
fn edge_hold_power(surrogate: &Surrogate, env_cfg: &EnvConfig, upp: f64, t_out: f64) -> f64 {
    if surrogate.next_t_in(upp, t_out, 0.0) <= upp {
        return 0.0;
    }
    if surrogate.next_t_in(upp, t_out, env_cfg.h_max) >= upp {
        return env_cfg.h_max;
    }
    let (mut lo, mut hi) = (0.0, env_cfg.h_max);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if surrogate.next_t_in(upp, t_out, mid) > upp {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Plans an HVAC power sequence over the window by projected gradient
/// descent. The start iterate holds each slot's temperature at the upper
/// band edge in steady state; a cold start at zero stalls on the hinge's
/// uniform subgradient and freezes wasteful pre-cooling into the plan. The
/// objective never increases across iterations: each step backtracks
/// (halving the rate up to 10 times) until it improves, and the solve stops
/// early once no halving helps.
pub fn upper_mpc(
    surrogate: &Surrogate,
    env_cfg: &EnvConfig,
    mpc: &MpcConfig,
    t_in0: f64,
    t_out: &[f64],
) -> Result<Vec<f64>> {
    let n = t_out.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let (_, upp) = planner_band(env_cfg, mpc);
    let mut h: Vec<f64> = t_out
        .iter()
        .map(|&t| edge_hold_power(surrogate, env_cfg, upp, t))
        .collect();
    let mut j = upper_objective(surrogate, env_cfg, mpc, t_in0, t_out, &h);
    if !j.is_finite() {
        return Err(Error::numeric(format!("HVAC objective not finite at h = {h:?}")));
    }
    for _ in 0..mpc.gd_iters {
        let grad = upper_gradient(surrogate, env_cfg, mpc, t_in0, t_out, &h);
        let mut lr = mpc.gd_lr;
        let mut improved = false;
        for _ in 0..=10 {
            let cand: Vec<f64> = h
                .iter()
                .zip(&grad)
                .map(|(&hi, &gi)| (hi - lr * gi).clamp(0.0, env_cfg.h_max))
                .collect();
            let jc = upper_objective(surrogate, env_cfg, mpc, t_in0, t_out, &cand);
            if !jc.is_finite() {
                return Err(Error::numeric(format!(
                    "HVAC objective diverged at iterate {cand:?}"
                )));
            }
            if jc <= j {
                let moved = cand.iter().zip(&h).any(|(a, b)| a != b);
                h = cand;
                j = jc;
                improved = moved;
                break;
            }
            lr *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(h)
}

// --- lower level: ESS dispatch ----------------------------------------------

fn level_grid(env_cfg: &EnvConfig, mpc: &MpcConfig) -> Vec<f64> {
    let n = mpc.charge_levels;
    let (lo, hi) = (-env_cfg.d_max, env_cfg.c_max);
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn ess_feasible(cfg: &EnvConfig, e_level: f64, e: f64) -> bool {
    let next = if e > 0.0 {
        e_level + cfg.eta_c * e * cfg.dt
    } else {
        e_level + (e / cfg.eta_d) * cfg.dt
    };
    next >= cfg.e_min - 1e-12 && next <= cfg.e_max + 1e-12
}

/// Transaction-plus-aging cost of ESS power `e` at slot `k` given the fixed
/// HVAC/load/PV balance.
fn ess_slot_cost(cfg: &EnvConfig, net_fixed: f64, buy: f64, sell: f64, e: f64) -> f64 {
    let g = net_fixed + e;
    let x1 = if g > 0.0 {
        buy * g * cfg.dt
    } else {
        sell * g * cfg.dt
    };
    x1 + cfg.k_e * e.abs()
}

/// Exact cost of an explicit dispatch sequence under the window; errors if
/// any step is infeasible. Shared yardstick for the solver cross-checks.
pub fn ess_sequence_cost(
    env_cfg: &EnvConfig,
    h: &[f64],
    window: &ForecastWindow,
    e0: f64,
    seq: &[f64],
) -> Result<f64> {
    if seq.len() != h.len() || window.len() != h.len() {
        return Err(Error::shape(format!(
            "sequence length {} vs horizon {}",
            seq.len(),
            h.len()
        )));
    }
    let mut e_level = e0;
    let mut cost = 0.0;
    for k in 0..seq.len() {
        let net_fixed = h[k] + window.load[k] - window.pv[k];
        cost += ess_slot_cost(env_cfg, net_fixed, window.buy[k], window.sell[k], seq[k]);
        e_level = ess_next(env_cfg, e_level, seq[k])?;
    }
    Ok(cost)
}

fn quantize(e: f64) -> i64 {
    (e * 1e9).round() as i64
}

#[derive(Debug)]
struct BnbNode {
    parent: usize,
    level_value: f64,
    slot: usize,
    e_level: f64,
    cost: f64,
}

struct HeapEntry {
    bound: f64,
    counter: u64,
    node: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.counter == other.counter
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // BinaryHeap is a max-heap; invert so the smallest (bound, counter) pops.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.counter.cmp(&self.counter))
    }
}

/// Optimal ESS dispatch over the discrete level grid by best-first branch
/// and bound.
///
/// The bound adds, to a node's exact partial cost, the sum over remaining
/// slots of the cheapest per-slot cost ignoring energy coupling, which never
/// exceeds any completion's true cost, so the first leaf popped is optimal.
/// Nodes that reach the same (slot, energy) as a no-worse earlier node are
/// dropped. Ties break deterministically: children are expanded preferring
/// smaller |e| then lower level index, and equal bounds pop in insertion
/// order.
pub fn lower_mpc_bnb(
    env_cfg: &EnvConfig,
    mpc: &MpcConfig,
    h: &[f64],
    window: &ForecastWindow,
    e0: f64,
) -> Result<Vec<f64>> {
    let hzn = h.len();
    if hzn == 0 {
        return Ok(Vec::new());
    }
    if window.len() != hzn {
        return Err(Error::shape(format!(
            "window length {} vs horizon {hzn}",
            window.len()
        )));
    }
    if !(env_cfg.e_min..=env_cfg.e_max).contains(&e0) {
        return Err(Error::config(format!(
            "initial ESS level {e0} outside [{}, {}]",
            env_cfg.e_min, env_cfg.e_max
        )));
    }

    let levels = level_grid(env_cfg, mpc);
    let mut expand_order: Vec<usize> = (0..levels.len()).collect();
    expand_order.sort_by(|&a, &b| {
        levels[a]
            .abs()
            .total_cmp(&levels[b].abs())
            .then(a.cmp(&b))
    });

    let net_fixed: Vec<f64> = (0..hzn).map(|k| h[k] + window.load[k] - window.pv[k]).collect();
    let slot_cost =
        |k: usize, e: f64| ess_slot_cost(env_cfg, net_fixed[k], window.buy[k], window.sell[k], e);

    // suffix[k] = sum over slots ≥ k of the unconstrained per-slot minimum.
    let mut suffix = vec![0.0; hzn + 1];
    for k in (0..hzn).rev() {
        let best = levels
            .iter()
            .map(|&e| slot_cost(k, e))
            .fold(f64::INFINITY, f64::min);
        suffix[k] = suffix[k + 1] + best;
    }

    let mut arena = vec![BnbNode {
        parent: usize::MAX,
        level_value: 0.0,
        slot: 0,
        e_level: e0,
        cost: 0.0,
    }];
    let mut heap = BinaryHeap::new();
    let mut counter = 0u64;
    heap.push(HeapEntry {
        bound: suffix[0],
        counter,
        node: 0,
    });
    let mut best_seen: HashMap<(usize, i64), f64> = HashMap::new();
    best_seen.insert((0, quantize(e0)), 0.0);

    while let Some(entry) = heap.pop() {
        let (slot, e_level, cost) = {
            let n = &arena[entry.node];
            (n.slot, n.e_level, n.cost)
        };
        if slot == hzn {
            // Admissible bound: the first completed plan is optimal.
            let mut seq = vec![0.0; hzn];
            let mut idx = entry.node;
            while arena[idx].parent != usize::MAX {
                seq[arena[idx].slot - 1] = arena[idx].level_value;
                idx = arena[idx].parent;
            }
            return Ok(seq);
        }
        // A cheaper path to this (slot, energy) may have been found after
        // this entry was pushed.
        if let Some(&best) = best_seen.get(&(slot, quantize(e_level))) {
            if best < cost - 1e-15 {
                continue;
            }
        }
        for &li in &expand_order {
            let e = levels[li];
            if !ess_feasible(env_cfg, e_level, e) {
                continue;
            }
            let next_cost = cost + slot_cost(slot, e);
            let next_level = ess_next(env_cfg, e_level, e)?;
            let key = (slot + 1, quantize(next_level));
            if let Some(&best) = best_seen.get(&key) {
                if best <= next_cost {
                    continue;
                }
            }
            best_seen.insert(key, next_cost);
            arena.push(BnbNode {
                parent: entry.node,
                level_value: e,
                slot: slot + 1,
                e_level: next_level,
                cost: next_cost,
            });
            counter += 1;
            heap.push(HeapEntry {
                bound: next_cost + suffix[slot + 1],
                counter,
                node: arena.len() - 1,
            });
        }
    }
    // Idling every slot is always feasible, so the search space is nonempty.
    Err(Error::contract("branch and bound exhausted without a leaf".to_string()))
}

/// Dynamic-programming dispatch over a quantized energy grid; the oracle
/// cross-check for `lower_mpc_bnb`. Each grid cell keeps the true energy of
/// the best path into it, so returned sequences are exactly feasible and
/// their reported cost is exact.
pub fn lower_mpc_dp(
    env_cfg: &EnvConfig,
    mpc: &MpcConfig,
    h: &[f64],
    window: &ForecastWindow,
    e0: f64,
    e_grid_points: usize,
) -> Result<Vec<f64>> {
    let hzn = h.len();
    if hzn == 0 {
        return Ok(Vec::new());
    }
    if window.len() != hzn {
        return Err(Error::shape(format!(
            "window length {} vs horizon {hzn}",
            window.len()
        )));
    }
    if !(env_cfg.e_min..=env_cfg.e_max).contains(&e0) {
        return Err(Error::config(format!(
            "initial ESS level {e0} outside [{}, {}]",
            env_cfg.e_min, env_cfg.e_max
        )));
    }
    if e_grid_points < 2 {
        return Err(Error::config("e_grid_points must be ≥ 2".to_string()));
    }

    let levels = level_grid(env_cfg, mpc);
    let net_fixed: Vec<f64> = (0..hzn).map(|k| h[k] + window.load[k] - window.pv[k]).collect();
    let slot_cost =
        |k: usize, e: f64| ess_slot_cost(env_cfg, net_fixed[k], window.buy[k], window.sell[k], e);
    let cell_of = |e: f64| -> usize {
        let frac = (e - env_cfg.e_min) / (env_cfg.e_max - env_cfg.e_min);
        ((frac * (e_grid_points - 1) as f64).round() as isize)
            .clamp(0, e_grid_points as isize - 1) as usize
    };

    #[derive(Clone, Copy)]
    struct Cell {
        cost: f64,
        e_true: f64,
        parent: usize,
        level_idx: usize,
        occupied: bool,
    }
    let empty = Cell {
        cost: f64::INFINITY,
        e_true: 0.0,
        parent: usize::MAX,
        level_idx: usize::MAX,
        occupied: false,
    };
    let mut layers = vec![vec![empty; e_grid_points]; hzn + 1];
    let start = cell_of(e0);
    layers[0][start] = Cell {
        cost: 0.0,
        e_true: e0,
        parent: usize::MAX,
        level_idx: usize::MAX,
        occupied: true,
    };

    for k in 0..hzn {
        for ci in 0..e_grid_points {
            let cell = layers[k][ci];
            if !cell.occupied {
                continue;
            }
            for (li, &e) in levels.iter().enumerate() {
                if !ess_feasible(env_cfg, cell.e_true, e) {
                    continue;
                }
                let e_next = ess_next(env_cfg, cell.e_true, e)?;
                let cost = cell.cost + slot_cost(k, e);
                let target = &mut layers[k + 1][cell_of(e_next)];
                if !target.occupied || cost < target.cost {
                    *target = Cell {
                        cost,
                        e_true: e_next,
                        parent: ci,
                        level_idx: li,
                        occupied: true,
                    };
                }
            }
        }
    }

    let mut best_ci = usize::MAX;
    let mut best_cost = f64::INFINITY;
    for (ci, cell) in layers[hzn].iter().enumerate() {
        if cell.occupied && cell.cost < best_cost {
            best_cost = cell.cost;
            best_ci = ci;
        }
    }
    if best_ci == usize::MAX {
        return Err(Error::contract("DP reached no terminal state".to_string()));
    }
    let mut seq = vec![0.0; hzn];
    let mut ci = best_ci;
    for k in (0..hzn).rev() {
        let cell = layers[k + 1][ci];
        seq[k] = levels[cell.level_idx];
        ci = cell.parent;
    }
    Ok(seq)
}

// --- receding-horizon demonstration generation ------------------------------

/// Runs the two-level controller for `expert_slots` slots from the start of
/// the environment's trace, applying only the first planned action each slot
/// and recording the executed transition. The noise stream is seeded with
/// `seed`, so runs are reproducible.
pub fn generate_demonstrations(
    env: &mut Env,
    surrogate: &Surrogate,
    mpc: &MpcConfig,
    seed: u64,
) -> Result<DemoSet> {
    mpc.validate()?;
    if mpc.expert_slots > env.traces().len() {
        return Err(Error::range(format!(
            "expert_slots {} exceeds trace length {}",
            mpc.expert_slots,
            env.traces().len()
        )));
    }
    env.reset(0, seed)?;
    let mut transitions = Vec::with_capacity(mpc.expert_slots);
    for _ in 0..mpc.expert_slots {
        let a = plan_step(env, surrogate, mpc)?;
        let s = *env.state();
        let out = env.step(a)?;
        transitions.push(Transition {
            s,
            a: out.action,
            s_next: out.next_state,
        });
    }
    DemoSet::new(transitions)
}

/// One receding-horizon solve at the environment's current cursor; returns
/// the first planned action without stepping.
pub fn plan_step(env: &Env, surrogate: &Surrogate, mpc: &MpcConfig) -> Result<Action> {
    let len = mpc.horizon.min(env.remaining());
    if len == 0 {
        return Err(Error::EpisodeExhausted);
    }
    let window = ForecastWindow::from_traces(env.traces(), env.cursor(), len)?;
    let state = env.state();
    let h = upper_mpc(surrogate, env.config(), mpc, state.t_in, &window.t_out)?;
    let e = lower_mpc_bnb(env.config(), mpc, &h, &window, state.e_level)?;
    Ok(Action { e: e[0], h: h[0] })
}
