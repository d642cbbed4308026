//! Exogenous time series driving the environment: electricity prices, PV
//! generation, non-shiftable load, and outdoor temperature.
//!
//! Traces are hourly by default and move as CSV with columns
//! `slot, buy_price, sell_price, pv_kw, load_kw, t_out_c` (slot is 0-based).
//! A synthetic generator produces a summer-cooling scenario: sinusoidal
//! outdoor temperature peaking in the afternoon, a daytime PV bell,
//! time-of-use buy prices, and a base-plus-evening-peak load.

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SLOTS_PER_DAY: usize = 24;

const CSV_HEADER: [&str; 6] = [
    "slot",
    "buy_price",
    "sell_price",
    "pv_kw",
    "load_kw",
    "t_out_c",
];

/// Per-slot exogenous series. Constructors validate the invariants below;
/// fields are public for read access and should not be mutated piecemeal.
///
/// Invariants: all vectors share one length ≥ 1, prices, PV, and load are
/// non-negative, and `sell_price[t] ≤ buy_price[t]` at every slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub slot_length_hours: f64,
    pub buy_price: Vec<f64>,
    pub sell_price: Vec<f64>,
    pub pv: Vec<f64>,
    pub load: Vec<f64>,
    pub t_out: Vec<f64>,
}

impl TraceSet {
    pub fn new(
        slot_length_hours: f64,
        buy_price: Vec<f64>,
        sell_price: Vec<f64>,
        pv: Vec<f64>,
        load: Vec<f64>,
        t_out: Vec<f64>,
    ) -> Result<Self> {
        let ts = Self {
            slot_length_hours,
            buy_price,
            sell_price,
            pv,
            load,
            t_out,
        };
        ts.validate()?;
        Ok(ts)
    }

    pub fn len(&self) -> usize {
        self.buy_price.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buy_price.is_empty()
    }

    /// Whole days contained in the trace (floor).
    pub fn days(&self) -> usize {
        self.len() / SLOTS_PER_DAY
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.buy_price.len();
        if n == 0 {
            return Err(Error::config("trace must contain at least one slot".to_string()));
        }
        if !(self.slot_length_hours.is_finite() && self.slot_length_hours > 0.0) {
            return Err(Error::config(format!(
                "slot_length_hours must be positive, got {}",
                self.slot_length_hours
            )));
        }
        for (name, v) in [
            ("sell_price", &self.sell_price),
            ("pv_kw", &self.pv),
            ("load_kw", &self.load),
            ("t_out_c", &self.t_out),
        ] {
            if v.len() != n {
                return Err(Error::shape(format!(
                    "{name} has {} slots, buy_price has {n}",
                    v.len()
                )));
            }
        }
        for t in 0..n {
            validate_row(
                t,
                self.buy_price[t],
                self.sell_price[t],
                self.pv[t],
                self.load[t],
                self.t_out[t],
            )?;
        }
        Ok(())
    }

    /// Parses and validates a trace CSV. Errors name the offending data row
    /// (0-based, matching the slot column).
    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path.as_ref())?;

        let headers = reader.headers()?.clone();
        let mut col = [0usize; 6];
        for (k, want) in CSV_HEADER.iter().enumerate() {
            col[k] = headers
                .iter()
                .position(|h| h == *want)
                .ok_or_else(|| Error::parse(format!("missing column '{want}'")))?;
        }

        let mut ts = Self {
            slot_length_hours: 1.0,
            buy_price: Vec::new(),
            sell_price: Vec::new(),
            pv: Vec::new(),
            load: Vec::new(),
            t_out: Vec::new(),
        };
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let field = |k: usize, name: &str| -> Result<f64> {
                let raw = record
                    .get(col[k])
                    .ok_or_else(|| Error::parse(format!("row {row}: missing field '{name}'")))?;
                raw.parse::<f64>().map_err(|_| {
                    Error::parse(format!("row {row}: non-numeric {name} '{raw}'"))
                })
            };
            let slot = field(0, "slot")?;
            if slot != row as f64 {
                return Err(Error::parse(format!(
                    "row {row}: slot index {slot} out of order (expected {row})"
                )));
            }
            let buy = field(1, "buy_price")?;
            let sell = field(2, "sell_price")?;
            let pv = field(3, "pv_kw")?;
            let load = field(4, "load_kw")?;
            let t_out = field(5, "t_out_c")?;
            validate_row(row, buy, sell, pv, load, t_out)?;
            ts.buy_price.push(buy);
            ts.sell_price.push(sell);
            ts.pv.push(pv);
            ts.load.push(load);
            ts.t_out.push(t_out);
        }
        if ts.is_empty() {
            return Err(Error::parse("trace file contains no data rows".to_string()));
        }
        Ok(ts)
    }

    /// Writes the canonical CSV form; `load_csv` of the output reproduces
    /// `self` exactly (f64 round-trips through the shortest decimal form).
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut writer = csv::Writer::from_path(path.as_ref())?;
        writer.write_record(CSV_HEADER)?;
        for t in 0..self.len() {
            writer.write_record([
                t.to_string(),
                self.buy_price[t].to_string(),
                self.sell_price[t].to_string(),
                self.pv[t].to_string(),
                self.load[t].to_string(),
                self.t_out[t].to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Contiguous split at day boundaries: the first `train_days` days, then
    /// the following `test_days` days.
    pub fn split(&self, train_days: usize, test_days: usize) -> Result<(TraceSet, TraceSet)> {
        let need = SLOTS_PER_DAY * (train_days + test_days);
        if need > self.len() {
            return Err(Error::range(format!(
                "split needs {need} slots ({train_days}+{test_days} days), trace has {}",
                self.len()
            )));
        }
        if train_days == 0 {
            eprintln!("warning: split produced an empty training set");
        }
        if test_days == 0 {
            eprintln!("warning: split produced an empty test set");
        }
        let cut = SLOTS_PER_DAY * train_days;
        let end = need;
        let slice = |v: &[f64], a: usize, b: usize| v[a..b].to_vec();
        let part = |a: usize, b: usize| TraceSet {
            slot_length_hours: self.slot_length_hours,
            buy_price: slice(&self.buy_price, a, b),
            sell_price: slice(&self.sell_price, a, b),
            pv: slice(&self.pv, a, b),
            load: slice(&self.load, a, b),
            t_out: slice(&self.t_out, a, b),
        };
        Ok((part(0, cut), part(cut, end)))
    }
}

fn validate_row(row: usize, buy: f64, sell: f64, pv: f64, load: f64, t_out: f64) -> Result<()> {
    for (name, v) in [
        ("buy_price", buy),
        ("sell_price", sell),
        ("pv_kw", pv),
        ("load_kw", load),
        ("t_out_c", t_out),
    ] {
        if !v.is_finite() {
            return Err(Error::parse(format!("row {row}: non-finite {name}")));
        }
    }
    if buy < 0.0 {
        return Err(Error::parse(format!("row {row}: negative buy_price {buy}")));
    }
    if sell < 0.0 {
        return Err(Error::parse(format!("row {row}: negative sell_price {sell}")));
    }
    if pv < 0.0 {
        return Err(Error::parse(format!("row {row}: negative pv_kw {pv}")));
    }
    if load < 0.0 {
        return Err(Error::parse(format!("row {row}: negative load_kw {load}")));
    }
    if sell > buy {
        return Err(Error::parse(format!(
            "row {row}: sell_price {sell} exceeds buy_price {buy}"
        )));
    }
    Ok(())
}

/// Shape of the synthetic summer scenario. All noise comes from the seed
/// passed to [`synth_traces`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthProfile {
    /// Diurnal outdoor temperature: mean, half peak-to-trough amplitude,
    /// hour of the daily maximum, and per-slot noise std (°C).
    pub t_out_mean: f64,
    pub t_out_amplitude: f64,
    pub t_out_peak_hour: f64,
    pub t_out_noise: f64,
    /// PV bell: peak output (kW) and the sunrise/sunset hours outside of
    /// which output is exactly zero. Noise is multiplicative (fractional).
    pub pv_peak_kw: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
    pub pv_noise_frac: f64,
    /// Time-of-use buy price tiers ($/kWh): night (before `day_start` and
    /// from `night_start`), day, and evening (from `evening_start` to
    /// `night_start`).
    pub price_night: f64,
    pub price_day: f64,
    pub price_evening: f64,
    pub day_start_hour: usize,
    pub evening_start_hour: usize,
    pub night_start_hour: usize,
    /// Per-slot additive price noise ($/kWh). Zero makes every day's price
    /// curve identical (daily-periodic prices).
    pub price_noise: f64,
    /// Per-day multiplicative price jitter std. Zero keeps one tariff across
    /// all days; nonzero scales each day's whole curve independently.
    pub price_day_jitter: f64,
    /// Sell price as a fraction of buy price, in [0, 1].
    pub sell_ratio: f64,
    /// Load: base (kW), evening bump height (kW), bump center hour, bump
    /// width (hours), and per-slot noise std.
    pub load_base_kw: f64,
    pub load_evening_kw: f64,
    pub load_peak_hour: f64,
    pub load_peak_width: f64,
    pub load_noise: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            t_out_mean: 28.0,
            t_out_amplitude: 6.0,
            t_out_peak_hour: 15.0,
            t_out_noise: 0.4,
            pv_peak_kw: 3.0,
            sunrise_hour: 6.0,
            sunset_hour: 19.0,
            pv_noise_frac: 0.10,
            price_night: 0.08,
            price_day: 0.15,
            price_evening: 0.30,
            day_start_hour: 7,
            evening_start_hour: 17,
            night_start_hour: 22,
            price_noise: 0.005,
            price_day_jitter: 0.0,
            sell_ratio: 0.5,
            load_base_kw: 0.3,
            load_evening_kw: 0.8,
            load_peak_hour: 19.5,
            load_peak_width: 2.0,
            load_noise: 0.05,
        }
    }
}

impl SynthProfile {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sell_ratio) {
            return Err(Error::config(format!(
                "sell_ratio must lie in [0, 1], got {}",
                self.sell_ratio
            )));
        }
        if self.sunrise_hour >= self.sunset_hour {
            return Err(Error::config(format!(
                "sunrise_hour {} must precede sunset_hour {}",
                self.sunrise_hour, self.sunset_hour
            )));
        }
        if self.day_start_hour >= self.evening_start_hour
            || self.evening_start_hour >= self.night_start_hour
            || self.night_start_hour > 24
        {
            return Err(Error::config(
                "tariff tier hours must satisfy day < evening < night ≤ 24".to_string(),
            ));
        }
        for (name, v) in [
            ("pv_peak_kw", self.pv_peak_kw),
            ("price_night", self.price_night),
            ("price_day", self.price_day),
            ("price_evening", self.price_evening),
            ("load_base_kw", self.load_base_kw),
        ] {
            if v < 0.0 {
                return Err(Error::config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    fn base_price(&self, hour: usize) -> f64 {
        if hour < self.day_start_hour || hour >= self.night_start_hour {
            self.price_night
        } else if hour < self.evening_start_hour {
            self.price_day
        } else {
            self.price_evening
        }
    }
}

/// Generates `days` days of hourly traces. Identical `(seed, days, profile)`
/// reproduce the same TraceSet bit for bit.
pub fn synth_traces(seed: u64, days: usize, profile: &SynthProfile) -> Result<TraceSet> {
    if days == 0 {
        return Err(Error::config("days must be ≥ 1".to_string()));
    }
    profile.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let n = days * SLOTS_PER_DAY;
    let mut ts = TraceSet {
        slot_length_hours: 1.0,
        buy_price: Vec::with_capacity(n),
        sell_price: Vec::with_capacity(n),
        pv: Vec::with_capacity(n),
        load: Vec::with_capacity(n),
        t_out: Vec::with_capacity(n),
    };

    for _day in 0..days {
        let day_scale = 1.0 + profile.price_day_jitter * unit.sample(&mut rng);
        let day_scale = day_scale.max(0.1);
        for hour in 0..SLOTS_PER_DAY {
            let h = hour as f64;

            let phase = 2.0 * PI * (h - profile.t_out_peak_hour) / 24.0;
            let t_out = profile.t_out_mean
                + profile.t_out_amplitude * phase.cos()
                + profile.t_out_noise * unit.sample(&mut rng);

            let pv_noise = unit.sample(&mut rng);
            let pv = if h > profile.sunrise_hour && h < profile.sunset_hour {
                let arg = PI * (h - profile.sunrise_hour)
                    / (profile.sunset_hour - profile.sunrise_hour);
                (profile.pv_peak_kw * arg.sin() * (1.0 + profile.pv_noise_frac * pv_noise))
                    .max(0.0)
            } else {
                0.0
            };

            let buy = (profile.base_price(hour) * day_scale
                + profile.price_noise * unit.sample(&mut rng))
            .max(0.01);
            let sell = profile.sell_ratio * buy;

            let bump = (h - profile.load_peak_hour) / profile.load_peak_width;
            let load = (profile.load_base_kw
                + profile.load_evening_kw * (-0.5 * bump * bump).exp()
                + profile.load_noise * unit.sample(&mut rng))
            .max(0.0);

            ts.t_out.push(t_out);
            ts.pv.push(pv);
            ts.buy_price.push(buy);
            ts.sell_price.push(sell);
            ts.load.push(load);
        }
    }

    ts.validate()?;
    Ok(ts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn synth_is_seed_deterministic() {
        let p = SynthProfile::default();
        let a = synth_traces(42, 3, &p).unwrap();
        let b = synth_traces(42, 3, &p).unwrap();
        assert_eq!(a, b);
        let c = synth_traces(43, 3, &p).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pv_is_zero_at_midnight_every_day() {
        let ts = synth_traces(7, 10, &SynthProfile::default()).unwrap();
        for day in 0..10 {
            assert_eq!(ts.pv[day * SLOTS_PER_DAY], 0.0, "day {day}");
        }
    }

    #[test]
    fn t_out_mean_tracks_profile_mean() {
        let p = SynthProfile::default();
        let ts = synth_traces(3, 40, &p).unwrap();
        let mean = ts.t_out.iter().sum::<f64>() / ts.t_out.len() as f64;
        assert!(
            (mean - p.t_out_mean).abs() < 0.5,
            "mean {mean} vs profile {}",
            p.t_out_mean
        );
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let ts = synth_traces(5, 2, &SynthProfile::default()).unwrap();
        ts.write_csv(&path).unwrap();
        let back = TraceSet::load_csv(&path).unwrap();
        assert_eq!(ts, back);
    }

    #[test]
    fn well_formed_24_row_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("day.csv");
        let ts = synth_traces(1, 1, &SynthProfile::default()).unwrap();
        ts.write_csv(&path).unwrap();
        let back = TraceSet::load_csv(&path).unwrap();
        assert_eq!(back.len(), 24);
    }

    #[test]
    fn negative_pv_error_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut ts = synth_traces(1, 1, &SynthProfile::default()).unwrap();
        ts.pv[5] = -1.0;
        ts.write_csv(&path).unwrap();
        let err = TraceSet::load_csv(&path).unwrap_err().to_string();
        assert!(err.contains("row 5"), "error was: {err}");
        assert!(err.contains("pv"), "error was: {err}");
    }

    #[test]
    fn missing_column_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cols.csv");
        std::fs::write(&path, "slot,buy_price,sell_price,pv_kw,load_kw\n0,0.1,0.05,0,0.3\n")
            .unwrap();
        let err = TraceSet::load_csv(&path).unwrap_err().to_string();
        assert!(err.contains("t_out_c"), "error was: {err}");
    }

    #[test]
    fn non_numeric_cell_error_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.csv");
        std::fs::write(
            &path,
            "slot,buy_price,sell_price,pv_kw,load_kw,t_out_c\n0,0.1,0.05,0,0.3,30\n1,abc,0.05,0,0.3,30\n",
        )
        .unwrap();
        let err = TraceSet::load_csv(&path).unwrap_err().to_string();
        assert!(err.contains("row 1") && err.contains("buy_price"), "error was: {err}");
    }

    #[test]
    fn sell_above_buy_is_rejected() {
        let ts = TraceSet::new(
            1.0,
            vec![0.1],
            vec![0.2],
            vec![0.0],
            vec![0.3],
            vec![30.0],
        );
        assert!(ts.is_err());
    }

    #[test]
    fn split_lengths_match_day_arithmetic() {
        let ts = synth_traces(1, 90, &SynthProfile::default()).unwrap();
        let (train, test) = ts.split(60, 30).unwrap();
        assert_eq!(train.len(), 1440);
        assert_eq!(test.len(), 720);
    }

    #[test]
    fn split_parts_concatenate_to_original() {
        let ts = synth_traces(2, 4, &SynthProfile::default()).unwrap();
        let (a, b) = ts.split(3, 1).unwrap();
        let mut joined = a.buy_price.clone();
        joined.extend_from_slice(&b.buy_price);
        assert_eq!(joined, ts.buy_price);
        let mut joined_t = a.t_out.clone();
        joined_t.extend_from_slice(&b.t_out);
        assert_eq!(joined_t, ts.t_out);
    }

    #[test]
    fn split_rejects_insufficient_length() {
        let ts = synth_traces(3, 2, &SynthProfile::default()).unwrap();
        assert!(matches!(ts.split(2, 1), Err(Error::Range(_))));
    }

    #[test]
    fn empty_train_split_is_permitted() {
        let ts = synth_traces(3, 2, &SynthProfile::default()).unwrap();
        let (train, test) = ts.split(0, 2).unwrap();
        assert!(train.is_empty());
        assert_eq!(test.len(), 48);
    }

    proptest! {
        #[test]
        fn synth_output_satisfies_invariants(seed in 0u64..200, days in 1usize..8) {
            let ts = synth_traces(seed, days, &SynthProfile::default()).unwrap();
            prop_assert_eq!(ts.len(), days * SLOTS_PER_DAY);
            for t in 0..ts.len() {
                prop_assert!(ts.buy_price[t] > 0.0);
                prop_assert!(ts.sell_price[t] >= 0.0);
                prop_assert!(ts.sell_price[t] <= ts.buy_price[t]);
                prop_assert!(ts.pv[t] >= 0.0);
                prop_assert!(ts.load[t] >= 0.0);
                prop_assert!(ts.t_out[t].is_finite());
            }
        }

        #[test]
        fn daily_jitter_preserves_invariants(seed in 0u64..50) {
            let profile = SynthProfile { price_day_jitter: 0.2, ..SynthProfile::default() };
            let ts = synth_traces(seed, 3, &profile).unwrap();
            for t in 0..ts.len() {
                prop_assert!(ts.sell_price[t] <= ts.buy_price[t]);
                prop_assert!(ts.buy_price[t] > 0.0);
            }
        }
    }
}
