//! Slotted-time smart-home MDP: ESS and thermal dynamics, action projection,
//! power balance, and the three per-slot cost terms.
//!
//! State follows the tuple (p, l, E, T_out, T_in, u, t') with t' the hour of
//! day; actions are (e, h) with e the signed ESS power (charge positive) and
//! h the HVAC input power. All controllers act through the same projection,
//! so every recorded transition is feasible.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traces::{TraceSet, SLOTS_PER_DAY};

/// Physical and economic constants of the home. Loads from JSON with every
/// field optional (defaults below) and unknown keys rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// ESS energy bounds, kWh.
    pub e_min: f64,
    pub e_max: f64,
    /// Charge / discharge power limits, kW (both positive).
    pub c_max: f64,
    pub d_max: f64,
    /// Charge / discharge efficiencies in (0, 1].
    pub eta_c: f64,
    pub eta_d: f64,
    /// HVAC input power limit, kW.
    pub h_max: f64,
    /// ESS depreciation coefficient, $/kWh of throughput.
    pub k_e: f64,
    /// Comfort band, °C.
    pub t_low: f64,
    pub t_upp: f64,
    /// Slot length, hours.
    pub dt: f64,
    /// Thermal inertia ε in (0, 1): weight of the previous indoor temperature.
    pub thermal_eps: f64,
    /// HVAC gain η (°C of drive per kW over conductance A).
    pub thermal_eta: f64,
    /// Envelope conductance A, kW/°C.
    pub thermal_a: f64,
    /// Std of the additive indoor-temperature noise, °C.
    pub noise_sigma: f64,
    /// Initial ESS level, kWh.
    pub e0: f64,
    /// Initial indoor temperature, °C.
    pub t_in0: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            e_min: 0.4,
            e_max: 4.0,
            c_max: 2.0,
            d_max: 2.0,
            eta_c: 0.95,
            eta_d: 0.95,
            h_max: 2.0,
            k_e: 0.01,
            t_low: 20.0,
            t_upp: 24.0,
            dt: 1.0,
            thermal_eps: 0.7,
            thermal_eta: 2.5,
            thermal_a: 0.5,
            noise_sigma: 0.05,
            e0: 2.0,
            t_in0: 23.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_min < self.e_max) {
            return Err(Error::config(format!(
                "e_min {} must be below e_max {}",
                self.e_min, self.e_max
            )));
        }
        for (name, v) in [("eta_c", self.eta_c), ("eta_d", self.eta_d)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("c_max", self.c_max),
            ("d_max", self.d_max),
            ("h_max", self.h_max),
            ("dt", self.dt),
            ("thermal_a", self.thermal_a),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.t_low < self.t_upp) {
            return Err(Error::config(format!(
                "t_low {} must be below t_upp {}",
                self.t_low, self.t_upp
            )));
        }
        if !(self.thermal_eps > 0.0 && self.thermal_eps < 1.0) {
            return Err(Error::config(format!(
                "thermal_eps must lie in (0, 1), got {}",
                self.thermal_eps
            )));
        }
        if self.noise_sigma < 0.0 || self.k_e < 0.0 {
            return Err(Error::config(
                "noise_sigma and k_e must be non-negative".to_string(),
            ));
        }
        if !(self.e_min..=self.e_max).contains(&self.e0) {
            return Err(Error::config(format!(
                "e0 {} outside [{}, {}]",
                self.e0, self.e_min, self.e_max
            )));
        }
        Ok(())
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let cfg: EnvConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// MDP state (p, l, E, T_out, T_in, u, t'). `u` is the buying price; the
/// selling price stays on the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomeState {
    pub p: f64,
    pub l: f64,
    pub e_level: f64,
    pub t_out: f64,
    pub t_in: f64,
    pub u: f64,
    pub hour: u8,
}

impl HomeState {
    pub const DIM: usize = 7;

    /// Flat feature order (p, l, E, T_out, T_in, u, t').
    pub fn to_vec(self) -> [f64; Self::DIM] {
        [
            self.p,
            self.l,
            self.e_level,
            self.t_out,
            self.t_in,
            self.u,
            self.hour as f64,
        ]
    }
}

/// Control (e, h): signed ESS power (charge > 0) and HVAC input power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub e: f64,
    pub h: f64,
}

impl Action {
    pub const DIM: usize = 2;

    pub fn to_vec(self) -> [f64; Self::DIM] {
        [self.e, self.h]
    }
}

/// Result of one environment step. `action` is the executed control after
/// projection, which is what demonstrations record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_state: HomeState,
    pub action: Action,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub grid_power: f64,
}

/// One recorded (s, a, s') sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: HomeState,
    pub a: Action,
    pub s_next: HomeState,
}

// --- dynamics and cost primitives -----------------------------------------

/// Projects a raw control onto the feasible set: h into [0, h_max], e into
/// [−d_max, c_max] tightened so the ESS update keeps E within its bounds.
pub fn clip_action(cfg: &EnvConfig, state: &HomeState, raw: Action) -> Result<Action> {
    clip_action_at(cfg, state.e_level, raw)
}

/// Projection at an explicit battery level; lookahead planners call this with
/// hypothetical levels.
pub fn clip_action_at(cfg: &EnvConfig, e_level: f64, raw: Action) -> Result<Action> {
    if !raw.e.is_finite() || !raw.h.is_finite() {
        return Err(Error::numeric(format!(
            "non-finite action ({}, {})",
            raw.e, raw.h
        )));
    }
    let h = raw.h.clamp(0.0, cfg.h_max);
    let mut e = raw.e.clamp(-cfg.d_max, cfg.c_max);
    if e > 0.0 {
        // Charge branch of the ESS update inverted for the headroom cap.
        e = e.min((cfg.e_max - e_level) / (cfg.eta_c * cfg.dt)).max(0.0);
    } else if e < 0.0 {
        e = e.max((cfg.e_min - e_level) * cfg.eta_d / cfg.dt).min(0.0);
    }
    Ok(Action { e, h })
}

/// ESS energy update: charging stores η_c·e·Δt, discharging removes
/// (|e|/η_d)·Δt. `e` must already be feasible; a result outside the energy
/// bounds beyond 1e-9 means the caller skipped projection.
pub fn ess_next(cfg: &EnvConfig, e_level: f64, e: f64) -> Result<f64> {
    let next = if e > 0.0 {
        e_level + cfg.eta_c * e * cfg.dt
    } else {
        e_level + (e / cfg.eta_d) * cfg.dt
    };
    if next < cfg.e_min - 1e-9 || next > cfg.e_max + 1e-9 {
        return Err(Error::contract(format!(
            "ESS level {next} outside [{}, {}]; action {e} was not projected",
            cfg.e_min, cfg.e_max
        )));
    }
    Ok(next.clamp(cfg.e_min, cfg.e_max))
}

/// First-order thermal recursion for a cooling HVAC:
/// t_in' = ε·t_in + (1−ε)·(t_out − η·h/A) + noise.
pub fn thermal_next(cfg: &EnvConfig, t_in: f64, t_out: f64, h: f64, noise: f64) -> f64 {
    cfg.thermal_eps * t_in
        + (1.0 - cfg.thermal_eps) * (t_out - cfg.thermal_eta * h / cfg.thermal_a)
        + noise
}

/// Power balance g = h + e + l − p; positive means buying from the grid.
pub fn grid_power(p: f64, h: f64, e: f64, l: f64) -> f64 {
    h + e + l - p
}

/// Comfort-band deviation [t_in − t_upp]⁺ + [t_low − t_in]⁺, °C.
pub fn band_deviation(cfg: &EnvConfig, t_in: f64) -> f64 {
    (t_in - cfg.t_upp).max(0.0) + (cfg.t_low - t_in).max(0.0)
}

/// Per-slot costs: transaction cost x1 (buy price above zero grid power,
/// sell price at or below; negative when selling), ESS aging x2 = k_e·|e|,
/// and comfort deviation x3 from the current indoor temperature.
pub fn cost_components(
    cfg: &EnvConfig,
    state: &HomeState,
    action: &Action,
    g: f64,
    sell_price: f64,
) -> (f64, f64, f64) {
    let x1 = if g > 0.0 {
        state.u * g * cfg.dt
    } else {
        sell_price * g * cfg.dt
    };
    let x2 = cfg.k_e * action.e.abs();
    let x3 = band_deviation(cfg, state.t_in);
    (x1, x2, x3)
}

// --- environment -----------------------------------------------------------

/// Mutable simulation handle over one shared trace. Clones share the trace
/// and are independent afterwards, so parallel rollouts clone with distinct
/// seeds.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    traces: Arc<TraceSet>,
    cursor: usize,
    state: HomeState,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
}

impl Env {
    pub fn new(cfg: EnvConfig, traces: Arc<TraceSet>) -> Result<Self> {
        cfg.validate()?;
        traces.validate()?;
        let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0))
            .map_err(|e| Error::config(format!("bad noise sigma: {e}")))?;
        let state = Self::state_at(&cfg, &traces, 0, cfg.e0, cfg.t_in0);
        Ok(Self {
            cfg,
            traces,
            cursor: 0,
            state,
            rng: ChaCha8Rng::seed_from_u64(0),
            noise,
        })
    }

    fn state_at(
        cfg: &EnvConfig,
        traces: &TraceSet,
        slot: usize,
        e_level: f64,
        t_in: f64,
    ) -> HomeState {
        // Past-the-end slots reuse the final row so a terminal next_state is
        // always well defined.
        let row = slot.min(traces.len() - 1);
        let _ = cfg;
        HomeState {
            p: traces.pv[row],
            l: traces.load[row],
            e_level,
            t_out: traces.t_out[row],
            t_in,
            u: traces.buy_price[row],
            hour: (slot % SLOTS_PER_DAY) as u8,
        }
    }

    /// Rewinds to `start_slot` with fresh initial ESS level and indoor
    /// temperature and a reseeded noise stream.
    pub fn reset(&mut self, start_slot: usize, seed: u64) -> Result<HomeState> {
        if start_slot >= self.traces.len() {
            return Err(Error::range(format!(
                "start_slot {start_slot} outside trace of length {}",
                self.traces.len()
            )));
        }
        self.cursor = start_slot;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = Self::state_at(&self.cfg, &self.traces, start_slot, self.cfg.e0, self.cfg.t_in0);
        Ok(self.state)
    }

    /// Applies one control: projects it, prices the current slot, advances
    /// the ESS and thermal states, and moves the cursor. Errors with
    /// `EpisodeExhausted` once every trace slot has been consumed.
    pub fn step(&mut self, raw: Action) -> Result<StepOutcome> {
        if self.cursor >= self.traces.len() {
            return Err(Error::EpisodeExhausted);
        }
        let action = clip_action(&self.cfg, &self.state, raw)?;
        let g = grid_power(self.state.p, action.h, action.e, self.state.l);
        let sell = self.traces.sell_price[self.cursor];
        let (x1, x2, x3) = cost_components(&self.cfg, &self.state, &action, g, sell);

        let e_next = ess_next(&self.cfg, self.state.e_level, action.e)?;
        let noise = if self.cfg.noise_sigma > 0.0 {
            self.noise.sample(&mut self.rng)
        } else {
            0.0
        };
        let t_in_next = thermal_next(&self.cfg, self.state.t_in, self.state.t_out, action.h, noise);

        self.cursor += 1;
        let next_state = Self::state_at(&self.cfg, &self.traces, self.cursor, e_next, t_in_next);
        self.state = next_state;

        Ok(StepOutcome {
            next_state,
            action,
            x1,
            x2,
            x3,
            grid_power: g,
        })
    }

    pub fn state(&self) -> &HomeState {
        &self.state
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Slots left before exhaustion.
    pub fn remaining(&self) -> usize {
        self.traces.len().saturating_sub(self.cursor)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn traces(&self) -> &Arc<TraceSet> {
        &self.traces
    }
}
