//! Markov-modulated Poisson process models.
//!
//! A two-state MMPP switches between phase 1 and phase 2 with rates
//! `delta_12` and `delta_21` and emits Poisson events at `r1` or `r2`
//! depending on the phase. Running `N` independent components side by side
//! gives a superposed MMPP with `2^N` states whose generator is the
//! Kronecker sum of the component generators.
//!
//! State indices of the superposed chain are 1-based. State `i` selects
//! phase `h_k = 2 - ((ceil(i / 2^(N-k))) mod 2)` of component `k`, so the
//! first component is the most significant "digit" and phase 1 maps to a
//! zero digit. This is the same ordering produced by composing Kronecker
//! operands in component-list order.
//!
//! The rate difference that weights each autocovariance term is taken
//! between the two Poisson event rates (`r2 - r1`). The generic-state
//! arrival rate likewise sums per-component Poisson rates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-10;

/// One two-state MMPP component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStateMmpp {
    /// Transition rate from phase 1 to phase 2.
    #[serde(rename = "delta12")]
    pub delta_12: f64,
    /// Transition rate from phase 2 to phase 1.
    #[serde(rename = "delta21")]
    pub delta_21: f64,
    /// Poisson event rate in phase 1.
    pub r1: f64,
    /// Poisson event rate in phase 2.
    pub r2: f64,
}

impl TwoStateMmpp {
    pub fn new(delta_12: f64, delta_21: f64, r1: f64, r2: f64) -> Result<Self> {
        let m = Self {
            delta_12,
            delta_21,
            r1,
            r2,
        };
        m.validate()?;
        Ok(m)
    }

    /// On/off source with symmetric mean sojourn `tau`: phase 1 is "off"
    /// (rate 0), phase 2 is "on" (rate `rate`).
    pub fn on_off(tau: f64, rate: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be > 0, got {tau}")));
        }
        Self::new(1.0 / tau, 1.0 / tau, 0.0, rate)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("delta12", self.delta_12),
            ("delta21", self.delta_21),
            ("r1", self.r1),
            ("r2", self.r2),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_ergodic(&self) -> bool {
        self.delta_12 + self.delta_21 > 0.0
    }

    pub fn generator(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[-self.delta_12, self.delta_12, self.delta_21, -self.delta_21],
        )
    }

    /// Rate of phase `h` (1 or 2).
    pub fn rate(&self, h: u8) -> f64 {
        if h == 1 {
            self.r1
        } else {
            self.r2
        }
    }

    /// Rate out of phase `h` (1 or 2).
    pub fn leave_rate(&self, h: u8) -> f64 {
        if h == 1 {
            self.delta_12
        } else {
            self.delta_21
        }
    }

    pub fn mean_rate(&self) -> Result<f64> {
        let s = steady_state(self)?;
        Ok(s.probs[0] * self.r1 + s.probs[1] * self.r2)
    }
}

/// Stationary distribution of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub probs: Vec<f64>,
}

impl SteadyState {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Largest absolute entry of `probs * generator`.
    pub fn balance_residual(&self, generator: &DMatrix<f64>) -> f64 {
        let p = DVector::from_column_slice(&self.probs);
        (generator.transpose() * p).amax()
    }
}

/// Closed-form steady state `(theta_1, theta_2)` of one component.
pub fn steady_state(m: &TwoStateMmpp) -> Result<SteadyState> {
    m.validate()?;
    if !m.is_ergodic() {
        return Err(Error::NonErgodic);
    }
    let total = m.delta_12 + m.delta_21;
    Ok(SteadyState {
        probs: vec![m.delta_21 / total, m.delta_12 / total],
    })
}

/// Stationary distribution of an arbitrary generator by dense solve of
/// `p G = 0`, `sum(p) = 1` (last balance equation replaced by normalization).
pub fn stationary_distribution(generator: &DMatrix<f64>) -> Result<SteadyState> {
    let n = generator.nrows();
    if n == 0 || generator.ncols() != n {
        return Err(Error::InvalidParameter("generator must be square and nonempty".into()));
    }
    let mut a = generator.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = a.lu().solve(&b).ok_or(Error::Singular)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular);
    }
    // clip rounding noise on structurally zero entries
    let probs: Vec<f64> = x.iter().map(|&v| if v < 0.0 && v > -1e-12 { 0.0 } else { v }).collect();
    Ok(SteadyState { probs })
}

/// Phase `h` of component `k` inside a superposed state (both 1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ComponentState {
    pub phase: u8,
    pub component: usize,
}

/// Superposition of independent two-state MMPPs.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperposedMmpp {
    components: Vec<TwoStateMmpp>,
    generator: DMatrix<f64>,
    rates: Vec<f64>,
}

impl SuperposedMmpp {
    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn num_states(&self) -> usize {
        self.rates.len()
    }

    pub fn components(&self) -> &[TwoStateMmpp] {
        &self.components
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Stationary distribution via the dense linear solve.
    pub fn steady_state(&self) -> Result<SteadyState> {
        stationary_distribution(&self.generator)
    }

    /// Stationary distribution as the product of component steady states.
    pub fn product_steady_state(&self) -> Result<SteadyState> {
        let probs = (1..=self.num_states())
            .map(|i| generic_params(self, i).map(|g| g.prob))
            .collect::<Result<Vec<_>>>()?;
        Ok(SteadyState { probs })
    }

    pub fn mean_rate(&self) -> Result<f64> {
        self.components.iter().map(TwoStateMmpp::mean_rate).sum()
    }

    pub fn max_row_sum(&self) -> f64 {
        self.generator
            .row_iter()
            .map(|r| r.sum().abs())
            .fold(0.0, f64::max)
    }

    fn check(&self) -> Result<()> {
        if self.max_row_sum() > STOCHASTIC_TOL {
            return Err(Error::InvalidParameter("generator rows must sum to zero".into()));
        }
        Ok(())
    }
}

/// Phase (1 or 2) of 0-based component `k` in 0-based state `idx` of an
/// `n`-component superposition.
fn phase_of(idx: usize, n: usize, k: usize) -> u8 {
    (((idx >> (n - 1 - k)) & 1) + 1) as u8
}

/// Builds the Kronecker-sum generator and the summed rate vector.
pub fn superpose(components: &[TwoStateMmpp]) -> Result<SuperposedMmpp> {
    if components.is_empty() {
        return Err(Error::EmptyComponents);
    }
    if components.len() > 20 {
        return Err(Error::InvalidParameter(format!(
            "{} components would need 2^{} states",
            components.len(),
            components.len()
        )));
    }
    for c in components {
        c.validate()?;
    }
    let n = components.len();
    let dim = 1usize << n;
    let mut generator = DMatrix::zeros(dim, dim);
    let mut rates = vec![0.0; dim];
    for idx in 0..dim {
        let mut out = 0.0;
        for (k, comp) in components.iter().enumerate() {
            let h = phase_of(idx, n, k);
            rates[idx] += comp.rate(h);
            let q = comp.leave_rate(h);
            let target = idx ^ (1 << (n - 1 - k));
            generator[(idx, target)] += q;
            out += q;
        }
        generator[(idx, idx)] = -out;
    }
    let s = SuperposedMmpp {
        components: components.to_vec(),
        generator,
        rates,
    };
    s.check()?;
    Ok(s)
}

/// One exponential term `alpha * exp(-beta t)` of the rate autocovariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutocovTerm {
    pub alpha: f64,
    pub beta: f64,
}

pub fn autocov_terms(components: &[TwoStateMmpp]) -> Result<Vec<AutocovTerm>> {
    components
        .iter()
        .map(|c| {
            let theta = steady_state(c)?;
            let g = c.r2 - c.r1;
            Ok(AutocovTerm {
                alpha: g * g * theta.probs[0] * (1.0 - theta.probs[0]),
                beta: c.delta_12 + c.delta_21,
            })
        })
        .collect()
}

pub fn eval_autocov(terms: &[AutocovTerm], t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::NegativeLag(t));
    }
    Ok(terms.iter().map(|a| a.alpha * (-a.beta * t).exp()).sum())
}

fn check_state_index(i: usize, n: usize) -> Result<usize> {
    if n == 0 || n > 63 {
        return Err(Error::InvalidParameter(format!("component count {n} out of range")));
    }
    let max = 1usize << n;
    if i == 0 || i > max {
        return Err(Error::IndexOutOfRange { index: i, max });
    }
    Ok(max)
}

/// Component phases selected by superposed state `i` (1-based) of an
/// `n`-component model, one entry per component in order.
pub fn state_map(i: usize, n: usize) -> Result<Vec<ComponentState>> {
    check_state_index(i, n)?;
    Ok((1..=n)
        .map(|k| {
            let block = 1usize << (n - k);
            let digit = i.div_ceil(block) % 2;
            ComponentState {
                phase: (2 - digit) as u8,
                component: k,
            }
        })
        .collect())
}

/// Arrival rate and stationary probability of a generic (superposed) state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenericState {
    pub rate: f64,
    pub prob: f64,
}

pub fn generic_params(s: &SuperposedMmpp, i: usize) -> Result<GenericState> {
    let map = state_map(i, s.num_components())?;
    let mut rate = 0.0;
    let mut prob = 1.0;
    for cs in map {
        let comp = &s.components[cs.component - 1];
        let theta = steady_state(comp)?;
        rate += comp.rate(cs.phase);
        prob *= theta.probs[cs.phase as usize - 1];
    }
    Ok(GenericState { rate, prob })
}

/// Expands a base rate and `N` per-component rate differences into the
/// `2^N` state rates; difference `d_k` is added in states where component
/// `k` sits in phase 2.
pub fn rate_diff_expand(r_delta: f64, d: &[f64]) -> Vec<f64> {
    let n = d.len();
    (1..=(1usize << n))
        .map(|i| {
            r_delta
                + d.iter()
                    .enumerate()
                    .map(|(k0, dk)| {
                        let block = 1usize << (n - (k0 + 1));
                        let digit = i.div_ceil(block) % 2;
                        dk * (1 - digit) as f64
                    })
                    .sum::<f64>()
        })
        .collect()
}

/// Base rate and differences reproducing the rates of `components` under
/// [`rate_diff_expand`]: base is the all-phase-1 rate, `d_k = r2_k - r1_k`.
pub fn rate_diff_decompose(components: &[TwoStateMmpp]) -> (f64, Vec<f64>) {
    let base = components.iter().map(|c| c.r1).sum();
    let d = components.iter().map(|c| c.r2 - c.r1).collect();
    (base, d)
}

/// One constant-rate segment of a periodic profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSegment {
    pub start: f64,
    pub rate: f64,
}

/// Periodic piecewise-constant rate schedule of a nonhomogeneous Poisson
/// process. Segments are left-closed and the last one runs to `period`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NhppProfile {
    pub period: f64,
    pub segments: Vec<RateSegment>,
}

impl NhppProfile {
    pub fn new(period: f64, segments: Vec<RateSegment>) -> Result<Self> {
        let p = Self { period, segments };
        p.validate()?;
        Ok(p)
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(1.0, vec![RateSegment { start: 0.0, rate }])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) || !self.period.is_finite() {
            return Err(Error::InvalidParameter(format!("period must be > 0, got {}", self.period)));
        }
        let first = self
            .segments
            .first()
            .ok_or_else(|| Error::InvalidParameter("profile needs at least one segment".into()))?;
        if first.start != 0.0 {
            return Err(Error::InvalidParameter("first segment must start at 0".into()));
        }
        for w in self.segments.windows(2) {
            if !(w[1].start > w[0].start) {
                return Err(Error::InvalidParameter("segment starts must increase".into()));
            }
        }
        for s in &self.segments {
            if !(s.start < self.period) {
                return Err(Error::InvalidParameter("segment starts must lie in [0, period)".into()));
            }
            if !(s.rate >= 0.0) || !s.rate.is_finite() {
                return Err(Error::InvalidParameter(format!("segment rate must be >= 0, got {}", s.rate)));
            }
        }
        Ok(())
    }

    fn segment_end(&self, idx: usize) -> f64 {
        self.segments.get(idx + 1).map_or(self.period, |s| s.start)
    }

    /// Rate active at time `t` (wrapped modulo the period).
    pub fn rate_at(&self, t: f64) -> f64 {
        let x = t.rem_euclid(self.period);
        let idx = self.segments.partition_point(|s| s.start <= x);
        self.segments[idx.saturating_sub(1)].rate
    }

    fn cumulative_within(&self, x: f64) -> f64 {
        self.segments
            .iter()
            .enumerate()
            .take_while(|(_, s)| s.start < x)
            .map(|(i, s)| s.rate * (self.segment_end(i).min(x) - s.start))
            .sum()
    }

    /// Expected event count over `[a, b)`.
    pub fn integrated_rate(&self, a: f64, b: f64) -> f64 {
        let per_period = self.cumulative_within(self.period);
        let cumulative = |t: f64| {
            let cycles = (t / self.period).floor();
            cycles * per_period + self.cumulative_within(t - cycles * self.period)
        };
        cumulative(b) - cumulative(a)
    }
}

/// `P(X = x)` for `X ~ Poisson(lambda)`.
pub fn poisson_pmf(x: i64, lambda: f64) -> Result<f64> {
    if x < 0 {
        return Err(Error::NegativeCount(x));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("rate must be >= 0, got {lambda}")));
    }
    Ok(poisson_ln_pmf(x as u64, lambda).exp())
}

pub(crate) fn poisson_ln_pmf(x: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    x as f64 * lambda.ln() - lambda - ln_factorial(x)
}

/// Serialized model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub components: Vec<TwoStateMmpp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nhpp: Option<NhppProfile>,
}

impl ModelDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.components {
            c.validate()?;
        }
        if let Some(p) = &self.nhpp {
            p.validate()?;
        }
        Ok(())
    }

    pub fn superposed(&self) -> Result<SuperposedMmpp> {
        superpose(&self.components)
    }
}
