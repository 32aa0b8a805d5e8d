//! Decision traffic generation.
//!
//! Sensors report through on/off (interrupted Poisson) sources: exponential
//! on and off periods with the same mean `tau`, starting in a uniformly
//! drawn phase, and Poisson reports at `rate` while on. The "normal" context
//! count series comes from a piecewise-constant periodic NHPP and is combined
//! with event-driven changes as `Y = max(0, Y_N + Y_C)` per slot.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmpp::NhppProfile;
use crate::rng::{derive_seed, stream};

/// On/off decision source of one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnOffSource {
    pub sensor_id: u32,
    /// Mean on-duration and mean off-duration.
    pub tau: f64,
    /// Report rate while on.
    pub rate: f64,
    /// Number of decision values.
    #[serde(default = "default_radix")]
    pub radix: u32,
}

fn default_radix() -> u32 {
    3
}

impl OnOffSource {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidParameter(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.rate >= 0.0) || !self.rate.is_finite() {
            return Err(Error::InvalidParameter(format!("rate must be >= 0, got {}", self.rate)));
        }
        if self.radix < 2 {
            return Err(Error::InvalidParameter(format!("radix must be >= 2, got {}", self.radix)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionEvent {
    pub time: f64,
    pub sensor_id: u32,
    pub value: u32,
}

fn event_order(a: &DecisionEvent, b: &DecisionEvent) -> std::cmp::Ordering {
    a.time.total_cmp(&b.time).then(a.sensor_id.cmp(&b.sensor_id))
}

/// Time-ordered decision events on `[0, horizon)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    events: Vec<DecisionEvent>,
    horizon: f64,
}

impl Trace {
    pub fn empty(horizon: f64) -> Self {
        Self {
            events: Vec::new(),
            horizon,
        }
    }

    /// Sorts `events` by `(time, sensor_id)` (stable) and checks their range.
    pub fn new(mut events: Vec<DecisionEvent>, horizon: f64) -> Result<Self> {
        if !(horizon >= 0.0) {
            return Err(Error::InvalidParameter(format!("horizon must be >= 0, got {horizon}")));
        }
        if let Some(e) = events.iter().find(|e| !(e.time >= 0.0 && e.time < horizon)) {
            return Err(Error::InvalidParameter(format!(
                "event time {} outside [0, {horizon})",
                e.time
            )));
        }
        events.sort_by(event_order);
        Ok(Self { events, horizon })
    }

    pub fn events(&self) -> &[DecisionEvent] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| event_order(&w[0], &w[1]).is_le())
    }

    pub fn into_events(self) -> Vec<DecisionEvent> {
        self.events
    }

    /// Number of events in each slot of width `slot_width`.
    pub fn slot_counts(&self, slot_width: f64) -> Result<CountSeries> {
        if !(slot_width > 0.0) {
            return Err(Error::InvalidParameter(format!("slot width must be > 0, got {slot_width}")));
        }
        let slots = (self.horizon / slot_width).ceil() as usize;
        let mut counts = vec![0u64; slots];
        for e in &self.events {
            let k = ((e.time / slot_width) as usize).min(slots.saturating_sub(1));
            counts[k] += 1;
        }
        Ok(CountSeries { slot_width, counts })
    }

    /// CSV `time,sensor_id,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.events.len() + 1));
        out.push_str("time,sensor_id,value\n");
        for e in &self.events {
            let _ = writeln!(out, "{},{},{}", format_time(e.time), e.sensor_id, e.value);
        }
        out
    }

    /// Parses the CSV written by [`Trace::to_csv`]; `#` lines are skipped.
    pub fn from_csv(text: &str, horizon: f64) -> Result<Self> {
        let mut events = Vec::new();
        let mut header_seen = false;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != "time,sensor_id,value" {
                    return Err(Error::Parse {
                        line: idx + 1,
                        msg: format!("unexpected header '{line}'"),
                    });
                }
                header_seen = true;
                continue;
            }
            let bad = |what: &str| Error::Parse {
                line: idx + 1,
                msg: format!("invalid {what} in '{line}'"),
            };
            let mut parts = line.split(',');
            let time = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("time"))?;
            let sensor_id = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("sensor_id"))?;
            let value = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("value"))?;
            if parts.next().is_some() {
                return Err(bad("column count"));
            }
            events.push(DecisionEvent {
                time,
                sensor_id,
                value,
            });
        }
        Self::new(events, horizon)
    }
}

/// Decimal seconds with at least 9 significant digits.
pub fn format_time(t: f64) -> String {
    let magnitude = if t > 0.0 { t.log10().floor() as i32 } else { 0 };
    let decimals = (8 - magnitude).max(9) as usize;
    format!("{t:.decimals$}")
}

/// Alternating on/off periods over `[0, horizon)`; returns on intervals.
pub fn on_intervals(tau: f64, horizon: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let sojourn = Exp::new(1.0 / tau).expect("tau validated positive");
    let mut on = rng.random_bool(0.5);
    let mut t = 0.0;
    let mut out = Vec::new();
    while t < horizon {
        let end = (t + sojourn.sample(rng)).min(horizon);
        if on && end > t {
            out.push((t, end));
        }
        t = end;
        on = !on;
    }
    out
}

/// Homogeneous Poisson event times at `rate` inside each interval.
pub fn poisson_times(intervals: &[(f64, f64)], rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if !(rate > 0.0) {
        return Vec::new();
    }
    let gap = Exp::new(rate).expect("rate checked positive");
    let mut out = Vec::new();
    for &(start, end) in intervals {
        let mut t = start + gap.sample(rng);
        while t < end {
            out.push(t);
            t += gap.sample(rng);
        }
    }
    out
}

/// Simulates a source and labels each event through `decide(time, rng)`.
/// Event times and labels use independent streams derived from `seed`.
pub fn simulate_onoff_with(
    src: &OnOffSource,
    horizon: f64,
    seed: u64,
    mut decide: impl FnMut(f64, &mut ChaCha8Rng) -> u32,
) -> Result<Trace> {
    src.validate()?;
    if !(horizon >= 0.0) {
        return Err(Error::InvalidParameter(format!("horizon must be >= 0, got {horizon}")));
    }
    let mut timing = stream(derive_seed(seed, 0));
    let mut labels = stream(derive_seed(seed, 1));
    let intervals = on_intervals(src.tau, horizon, &mut timing);
    let events = poisson_times(&intervals, src.rate, &mut timing)
        .into_iter()
        .map(|time| DecisionEvent {
            time,
            sensor_id: src.sensor_id,
            value: decide(time, &mut labels),
        })
        .collect();
    Trace::new(events, horizon)
}

/// Simulates a source with uniformly drawn decision values; callers that
/// need hypothesis-driven values use [`simulate_onoff_with`].
pub fn simulate_onoff(src: &OnOffSource, horizon: f64, seed: u64) -> Result<Trace> {
    let radix = src.radix;
    simulate_onoff_with(src, horizon, seed, |_, rng| rng.random_range(0..radix))
}

/// Per-slot event counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSeries {
    pub slot_width: f64,
    pub counts: Vec<u64>,
}

/// Per-slot Poisson counts with mean equal to the integrated rate of the
/// slot. Slots cover `[0, horizon)`, the last one clipped at the horizon.
pub fn simulate_nhpp_counts(p: &NhppProfile, slot_width: f64, horizon: f64, seed: u64) -> Result<CountSeries> {
    p.validate()?;
    if !(slot_width > 0.0) {
        return Err(Error::InvalidParameter(format!("slot width must be > 0, got {slot_width}")));
    }
    let mut rng = stream(seed);
    let slots = (horizon.max(0.0) / slot_width).ceil() as usize;
    let counts = (0..slots)
        .map(|k| {
            let a = k as f64 * slot_width;
            let b = ((k + 1) as f64 * slot_width).min(horizon);
            let mean = p.integrated_rate(a, b);
            if mean > 0.0 {
                Poisson::new(mean).expect("positive mean").sample(&mut rng) as u64
            } else {
                0
            }
        })
        .collect();
    Ok(CountSeries { slot_width, counts })
}

/// `Y = max(0, Y_N + Y_C)` slot by slot.
pub fn compose_counts(normal: &CountSeries, change: &[i64]) -> Result<CountSeries> {
    if normal.counts.len() != change.len() {
        return Err(Error::LengthMismatch {
            left: normal.counts.len(),
            right: change.len(),
        });
    }
    let counts = normal
        .counts
        .iter()
        .zip(change)
        .map(|(&n, &c)| (n as i64).saturating_add(c).max(0) as u64)
        .collect();
    Ok(CountSeries {
        slot_width: normal.slot_width,
        counts,
    })
}

/// Time-sorted union of traces sharing one horizon.
pub fn merge_traces(traces: &[Trace]) -> Result<Trace> {
    let Some(first) = traces.first() else {
        return Ok(Trace::default());
    };
    let horizon = first.horizon;
    if let Some(t) = traces.iter().find(|t| t.horizon != horizon) {
        return Err(Error::HorizonMismatch {
            left: horizon,
            right: t.horizon,
        });
    }
    let events = traces.iter().flat_map(|t| t.events.iter().copied()).collect();
    Trace::new(events, horizon)
}
