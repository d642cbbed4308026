//! Expert demonstration sets: ordered (s, a, s') transitions with CSV
//! round-tripping.
//!
//! Column order, one row per transition: state (pv, load, ess, t_out, t_in,
//! price, hour), action (e, h), next state (same seven fields). Consecutive
//! rows chain: each next state equals the following row's state.

use std::path::Path;

use crate::env::{Action, HomeState, Transition};
use crate::error::{Error, Result};

pub const DEMO_CSV_HEADER: [&str; 16] = [
    "s_pv_kw",
    "s_load_kw",
    "s_ess_kwh",
    "s_t_out_c",
    "s_t_in_c",
    "s_price",
    "s_hour",
    "a_e_kw",
    "a_h_kw",
    "sn_pv_kw",
    "sn_load_kw",
    "sn_ess_kwh",
    "sn_t_out_c",
    "sn_t_in_c",
    "sn_price",
    "sn_hour",
];

/// Ordered expert transitions from one continuous rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub transitions: Vec<Transition>,
}

impl DemoSet {
    pub fn new(transitions: Vec<Transition>) -> Result<Self> {
        let set = Self { transitions };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Checks the chaining invariant s_{i+1} = s'_i.
    pub fn validate(&self) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::config("demonstration set is empty".to_string()));
        }
        for (i, pair) in self.transitions.windows(2).enumerate() {
            let prev = pair[0].s_next.to_vec();
            let next = pair[1].s.to_vec();
            for (a, b) in prev.iter().zip(next.iter()) {
                if (a - b).abs() > 1e-9 {
                    return Err(Error::contract(format!(
                        "transitions {i} and {} do not chain: {prev:?} vs {next:?}",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(DEMO_CSV_HEADER)?;
        for t in &self.transitions {
            let mut rec: Vec<String> = Vec::with_capacity(16);
            rec.extend(t.s.to_vec().iter().map(|v| v.to_string()));
            rec.extend(t.a.to_vec().iter().map(|v| v.to_string()));
            rec.extend(t.s_next.to_vec().iter().map(|v| v.to_string()));
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path.as_ref())?;
        let headers = r.headers()?.clone();
        if headers.len() != 16 || headers.iter().zip(DEMO_CSV_HEADER).any(|(a, b)| a != b) {
            return Err(Error::parse(format!(
                "demo CSV header mismatch: expected {DEMO_CSV_HEADER:?}"
            )));
        }
        let mut transitions = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let mut vals = [0.0f64; 16];
            for (k, v) in vals.iter_mut().enumerate() {
                let raw = rec
                    .get(k)
                    .ok_or_else(|| Error::parse(format!("row {row}: missing field {k}")))?;
                *v = raw.parse().map_err(|_| {
                    Error::parse(format!(
                        "row {row}: non-numeric {} '{raw}'",
                        DEMO_CSV_HEADER[k]
                    ))
                })?;
            }
            let state = |o: usize| -> Result<HomeState> {
                let hour = vals[o + 6];
                if hour < 0.0 || hour > 23.0 || hour.fract() != 0.0 {
                    return Err(Error::parse(format!("row {row}: bad hour {hour}")));
                }
                Ok(HomeState {
                    p: vals[o],
                    l: vals[o + 1],
                    e_level: vals[o + 2],
                    t_out: vals[o + 3],
                    t_in: vals[o + 4],
                    u: vals[o + 5],
                    hour: hour as u8,
                })
            };
            transitions.push(Transition {
                s: state(0)?,
                a: Action {
                    e: vals[7],
                    h: vals[8],
                },
                s_next: state(9)?,
            });
        }
        Self::new(transitions)
    }
}
