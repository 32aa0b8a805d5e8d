//! Fusion-center context capture.
//!
//! Time is cut into slots of width `slot_width`. In each slot the fusion
//! center accepts at most `B` decisions (earliest first) and misses the
//! rest. `B` is derived from an estimated arrival rate `r` as
//! `budget_factor * r * slot_width`:
//!
//! * `poisson` kind: `r` is a fixed mean rate;
//! * `mmpp` kind: `r` is the one-step predicted rate of a forward filter
//!   over the superposed MMPP state, updated with each slot's arrival count.
//!
//! The real-valued target is turned into an integer budget by rounding up
//! ([`BudgetRounding::Ceil`]) or by deterministic dithering
//! ([`BudgetRounding::Dither`]), which keeps the long-run mean budget equal
//! to the target so that two policies can be compared at equal average
//! budget.

use std::fmt::Write as _;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmpp::{poisson_ln_pmf, SuperposedMmpp};
use crate::traffic::{DecisionEvent, Trace};

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    const TOL: f64 = 1e-12;
    let n = a.nrows();
    let norm = a
        .column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(squarings);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..64 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() < TOL * 1e-4 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetRounding {
    #[default]
    Ceil,
    Dither,
}

/// Fractional part of `k * (sqrt(5) - 1) / 2`: an equidistributed offset
/// sequence in `[0, 1)`.
fn dither_offset(slot: usize) -> f64 {
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    (slot as f64 * GOLDEN).fract()
}

fn round_budget(target: f64, slot: usize, rounding: BudgetRounding) -> u64 {
    if !(target > 0.0) {
        return 0;
    }
    match rounding {
        // slack keeps exact integers from rounding up on representation error
        BudgetRounding::Ceil => (target - 1e-9).ceil().max(0.0) as u64,
        BudgetRounding::Dither => (target + dither_offset(slot)).floor() as u64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CaptureKind {
    Poisson {
        mean_rate: f64,
    },
    Mmpp {
        model: SuperposedMmpp,
        transition: DMatrix<f64>,
        stationary: Vec<f64>,
        belief: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureModel {
    kind: CaptureKind,
    slot_width: f64,
    budget_factor: f64,
    rounding: BudgetRounding,
}

fn check_slot_and_factor(slot_width: f64, budget_factor: f64) -> Result<()> {
    if !(slot_width > 0.0) || !slot_width.is_finite() {
        return Err(Error::InvalidParameter(format!("slot width must be > 0, got {slot_width}")));
    }
    if !(budget_factor > 0.0) || !budget_factor.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "budget factor must be > 0, got {budget_factor}"
        )));
    }
    Ok(())
}

impl CaptureModel {
    pub fn poisson(mean_rate: f64, slot_width: f64, budget_factor: f64) -> Result<Self> {
        check_slot_and_factor(slot_width, budget_factor)?;
        if !(mean_rate >= 0.0) || !mean_rate.is_finite() {
            return Err(Error::InvalidParameter(format!("mean rate must be >= 0, got {mean_rate}")));
        }
        Ok(Self {
            kind: CaptureKind::Poisson { mean_rate },
            slot_width,
            budget_factor,
            rounding: BudgetRounding::Ceil,
        })
    }

    /// Filter starts from the stationary distribution of `model`.
    pub fn mmpp(model: SuperposedMmpp, slot_width: f64, budget_factor: f64) -> Result<Self> {
        check_slot_and_factor(slot_width, budget_factor)?;
        let transition = expm(&(model.generator() * slot_width));
        let stationary = model.steady_state()?.probs;
        Ok(Self {
            kind: CaptureKind::Mmpp {
                model,
                transition,
                belief: stationary.clone(),
                stationary,
            },
            slot_width,
            budget_factor,
            rounding: BudgetRounding::Ceil,
        })
    }

    pub fn with_rounding(mut self, rounding: BudgetRounding) -> Self {
        self.rounding = rounding;
        self
    }

    pub fn kind(&self) -> &CaptureKind {
        &self.kind
    }

    pub fn slot_width(&self) -> f64 {
        self.slot_width
    }

    pub fn budget_factor(&self) -> f64 {
        self.budget_factor
    }

    pub fn rounding(&self) -> BudgetRounding {
        self.rounding
    }

    pub fn belief(&self) -> Option<&[f64]> {
        match &self.kind {
            CaptureKind::Mmpp { belief, .. } => Some(belief),
            CaptureKind::Poisson { .. } => None,
        }
    }

    /// Belief propagated one slot ahead (`belief * P`).
    pub fn predicted_belief(&self) -> Option<Vec<f64>> {
        match &self.kind {
            CaptureKind::Mmpp {
                belief, transition, ..
            } => {
                let row = DVector::from_column_slice(belief).transpose() * transition;
                Some(row.iter().copied().collect())
            }
            CaptureKind::Poisson { .. } => None,
        }
    }

    /// Arrival rate expected in the next slot.
    pub fn expected_rate(&self) -> f64 {
        match &self.kind {
            CaptureKind::Poisson { mean_rate } => *mean_rate,
            CaptureKind::Mmpp { model, .. } => {
                let pred = self.predicted_belief().unwrap_or_default();
                pred.iter().zip(model.rates()).map(|(p, r)| p * r).sum()
            }
        }
    }

    /// Integer budget for slot index `slot`.
    pub fn budget(&self, slot: usize) -> u64 {
        round_budget(
            self.budget_factor * self.expected_rate() * self.slot_width,
            slot,
            self.rounding,
        )
    }

    /// Forward-filter step with the arrival count of one slot. A no-op for
    /// the poisson kind.
    pub fn update(&mut self, observed_count: u64) {
        let slot_width = self.slot_width;
        let pred = self.predicted_belief();
        let CaptureKind::Mmpp {
            model,
            stationary,
            belief,
            ..
        } = &mut self.kind
        else {
            return;
        };
        let pred = pred.expect("mmpp kind has a belief");
        let log_lik: Vec<f64> = model
            .rates()
            .iter()
            .map(|r| poisson_ln_pmf(observed_count, r * slot_width))
            .collect();
        let max = log_lik
            .iter()
            .zip(&pred)
            .filter(|(_, p)| **p > 0.0)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            warn!("count {observed_count} impossible under every state; belief reset to stationary");
            belief.clone_from(stationary);
            return;
        }
        let mut post: Vec<f64> = pred
            .iter()
            .zip(&log_lik)
            .map(|(p, l)| p * (l - max).exp())
            .collect();
        let total: f64 = post.iter().sum();
        post.iter_mut().for_each(|p| *p /= total);
        *belief = post;
    }

    /// 1-based index of the most probable predicted state.
    pub fn top_state(&self) -> Option<usize> {
        let pred = self.predicted_belief()?;
        let mut best = 0;
        for (i, p) in pred.iter().enumerate() {
            if *p > pred[best] {
                best = i;
            }
        }
        Some(best + 1)
    }
}

/// Returns the model after one forward-filter step.
pub fn filter_update(m: &CaptureModel, observed_count: u64) -> Result<CaptureModel> {
    if !matches!(m.kind, CaptureKind::Mmpp { .. }) {
        return Err(Error::InvalidParameter("filter_update needs an mmpp capture model".into()));
    }
    let mut next = m.clone();
    next.update(observed_count);
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotRecord {
    pub slot: usize,
    pub budget: u64,
    pub arrivals: u64,
    pub captured: u64,
    pub belief_top_state: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureOutcome {
    pub captured: Trace,
    pub missed: Trace,
    pub ratio: f64,
    pub slots: Vec<SlotRecord>,
}

impl CaptureOutcome {
    pub fn mean_budget(&self) -> f64 {
        if self.slots.is_empty() {
            return 0.0;
        }
        self.slots.iter().map(|s| s.budget as f64).sum::<f64>() / self.slots.len() as f64
    }

    /// CSV `slot,budget,arrivals,captured,belief_top_state` and a trailing
    /// summary comment.
    pub fn report_csv(&self) -> String {
        let mut out = String::from("slot,budget,arrivals,captured,belief_top_state\n");
        for s in &self.slots {
            let top = s.belief_top_state.map_or(String::new(), |t| t.to_string());
            let _ = writeln!(out, "{},{},{},{},{}", s.slot, s.budget, s.arrivals, s.captured, top);
        }
        let _ = writeln!(
            out,
            "# summary captured={} total={} ratio={:.9} mean_budget={:.9}",
            self.captured.len(),
            self.captured.len() + self.missed.len(),
            self.ratio,
            self.mean_budget()
        );
        out
    }
}

/// Runs slot-budgeted reception over `trace`, consuming the model state.
pub fn run_capture(trace: &Trace, mut model: CaptureModel) -> Result<CaptureOutcome> {
    let width = model.slot_width;
    let slots = (trace.horizon() / width).ceil() as usize;
    let mut captured = Vec::new();
    let mut missed = Vec::new();
    let mut records = Vec::with_capacity(slots);
    let events = trace.events();
    let mut cursor = 0;
    for slot in 0..slots {
        let end = (slot + 1) as f64 * width;
        let start_idx = cursor;
        while cursor < events.len() && (events[cursor].time < end || slot + 1 == slots) {
            cursor += 1;
        }
        let in_slot: &[DecisionEvent] = &events[start_idx..cursor];
        let budget = model.budget(slot);
        let top = model.top_state();
        let take = (budget as usize).min(in_slot.len());
        captured.extend_from_slice(&in_slot[..take]);
        missed.extend_from_slice(&in_slot[take..]);
        records.push(SlotRecord {
            slot,
            budget,
            arrivals: in_slot.len() as u64,
            captured: take as u64,
            belief_top_state: top,
        });
        model.update(in_slot.len() as u64);
    }
    let ratio = if events.is_empty() {
        1.0
    } else {
        captured.len() as f64 / events.len() as f64
    };
    Ok(CaptureOutcome {
        captured: Trace::new(captured, trace.horizon())?,
        missed: Trace::new(missed, trace.horizon())?,
        ratio,
        slots: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmpp::{superpose, TwoStateMmpp};
    use crate::traffic::{merge_traces, simulate_onoff, OnOffSource};

    fn two_state(rates: (f64, f64)) -> SuperposedMmpp {
        superpose(&[TwoStateMmpp::new(0.2, 0.3, rates.0, rates.1).unwrap()]).unwrap()
    }

    #[test]
    fn test_expm_matches_nalgebra() {
        let comps = [
            TwoStateMmpp::new(0.7, 0.2, 0.0, 1.0).unwrap(),
            TwoStateMmpp::new(1.5, 3.0, 0.0, 1.0).unwrap(),
            TwoStateMmpp::new(0.05, 0.4, 0.0, 1.0).unwrap(),
        ];
        let g = superpose(&comps).unwrap().generator().clone();
        for dt in [0.01, 1.0, 5.0, 40.0] {
            let ours = expm(&(&g * dt));
            let reference = (&g * dt).exp();
            assert!((&ours - &reference).amax() < 1e-10, "dt {dt}");
            for row in ours.row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn test_expm_two_state_closed_form() {
        let m = TwoStateMmpp::new(1.0, 3.0, 0.0, 1.0).unwrap();
        let p = expm(&(m.generator() * 0.7));
        // P_11 = theta_1 + theta_2 exp(-(d12 + d21) t)
        let expected = 0.75 + 0.25 * (-4.0f64 * 0.7).exp();
        assert!((p[(0, 0)] - expected).abs() < 1e-13);
    }

    #[test]
    fn test_filter_concentrates_on_high_rate_state() {
        let m = CaptureModel::mmpp(two_state((0.1, 10.0)), 1.0, 2.0).unwrap();
        let next = filter_update(&m, 25).unwrap();
        // direct Bayes computation
        let pred = m.predicted_belief().unwrap();
        let lik = |r: f64| (-r).exp() * r.powi(25);
        let post0 = pred[0] * lik(0.1);
        let post1 = pred[1] * lik(10.0);
        let b = next.belief().unwrap();
        assert!((b[1] - post1 / (post0 + post1)).abs() < 1e-12);
        assert!(b[1] > b[0]);
    }

    #[test]
    fn test_filter_prediction_only_limits() {
        let m = CaptureModel::mmpp(two_state((1.0, 5.0)), 1e-9, 1.0).unwrap();
        let next = filter_update(&m, 0).unwrap();
        let pred = m.predicted_belief().unwrap();
        for (a, b) in next.belief().unwrap().iter().zip(&pred) {
            assert!((a - b).abs() < 1e-7);
        }

        let flat = CaptureModel::mmpp(two_state((2.0, 2.0)), 1.0, 1.0).unwrap();
        let mut stepped = filter_update(&flat, 0).unwrap();
        stepped = filter_update(&stepped, 0).unwrap();
        let base = filter_update(&flat, 0).unwrap();
        let pred = base.predicted_belief().unwrap();
        let after = filter_update(&base, 9).unwrap();
        for ((a, b), c) in after.belief().unwrap().iter().zip(&pred).zip(stepped.belief().unwrap()) {
            assert!((a - b).abs() < 1e-12);
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn test_filter_impossible_count_resets() {
        let m = CaptureModel::mmpp(two_state((0.0, 0.0)), 1.0, 1.0).unwrap();
        let next = filter_update(&m, 3).unwrap();
        let stationary = m.belief().unwrap();
        assert_eq!(next.belief().unwrap(), stationary);
        assert!(filter_update(&CaptureModel::poisson(1.0, 1.0, 1.0).unwrap(), 1).is_err());
    }

    #[test]
    fn test_round_budget() {
        assert_eq!(round_budget(0.0, 0, BudgetRounding::Ceil), 0);
        assert_eq!(round_budget(1.0 + 1e-12, 0, BudgetRounding::Ceil), 1);
        assert_eq!(round_budget(1.2, 0, BudgetRounding::Ceil), 2);
        let mean: f64 =
            (0..100_000).map(|k| round_budget(1.37, k, BudgetRounding::Dither) as f64).sum::<f64>() / 1e5;
        assert!((mean - 1.37).abs() < 1e-3);
        for k in 0..50 {
            assert_eq!(round_budget(3.0, k, BudgetRounding::Dither), 3);
        }
    }

    fn sample_trace() -> Trace {
        let a = OnOffSource { sensor_id: 1, tau: 30.0, rate: 1.0 / 15.0, radix: 3 };
        let b = OnOffSource { sensor_id: 2, tau: 50.0, rate: 0.1, radix: 3 };
        merge_traces(&[simulate_onoff(&a, 2e4, 1).unwrap(), simulate_onoff(&b, 2e4, 2).unwrap()]).unwrap()
    }

    fn section_model() -> SuperposedMmpp {
        superpose(&[
            TwoStateMmpp::on_off(30.0, 1.0 / 15.0).unwrap(),
            TwoStateMmpp::on_off(50.0, 0.1).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn test_capture_partitions_trace() {
        let trace = sample_trace();
        let out = run_capture(&trace, CaptureModel::mmpp(section_model(), 5.0, 2.0).unwrap()).unwrap();
        assert_eq!(out.captured.len() + out.missed.len(), trace.len());
        assert!(out.captured.is_sorted() && out.missed.is_sorted());
        let mut all = out.captured.events().to_vec();
        all.extend_from_slice(out.missed.events());
        let rebuilt = Trace::new(all, trace.horizon()).unwrap();
        assert_eq!(rebuilt, trace);
        assert!((out.ratio - out.captured.len() as f64 / trace.len() as f64).abs() < 1e-15);
        assert_eq!(out.slots.len(), 4000);
    }

    #[test]
    fn test_capture_large_budget_and_empty_model() {
        let trace = sample_trace();
        let out = run_capture(&trace, CaptureModel::poisson(1.0, 5.0, 100.0).unwrap()).unwrap();
        assert_eq!(out.ratio, 1.0);
        let out = run_capture(&trace, CaptureModel::poisson(0.0, 5.0, 2.0).unwrap()).unwrap();
        assert_eq!(out.ratio, 0.0);
        let empty = run_capture(&Trace::empty(50.0), CaptureModel::poisson(0.0, 5.0, 2.0).unwrap()).unwrap();
        assert_eq!(empty.ratio, 1.0);
    }

    #[test]
    fn test_capture_monotone_in_budget_factor() {
        let trace = sample_trace();
        for rounding in [BudgetRounding::Ceil, BudgetRounding::Dither] {
            let mut last_mmpp = 0.0;
            let mut last_poisson = 0.0;
            for c in [0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0] {
                let m = CaptureModel::mmpp(section_model(), 5.0, c).unwrap().with_rounding(rounding);
                let r = run_capture(&trace, m).unwrap().ratio;
                assert!(r >= last_mmpp);
                last_mmpp = r;
                let p = CaptureModel::poisson(1.0 / 12.0, 5.0, c).unwrap().with_rounding(rounding);
                let r = run_capture(&trace, p).unwrap().ratio;
                assert!(r >= last_poisson);
                last_poisson = r;
            }
        }
    }

    #[test]
    fn test_homogeneous_source_kinds_agree() {
        let src = OnOffSource { sensor_id: 0, tau: 1e12, rate: 0.4, radix: 2 };
        let trace = simulate_onoff(&src, 5e3, 3).unwrap();
        // a single flat component degenerates to the mean-rate model
        let flat = superpose(&[TwoStateMmpp::new(0.1, 0.1, 0.4, 0.4).unwrap()]).unwrap();
        let a = run_capture(&trace, CaptureModel::mmpp(flat, 5.0, 1.5).unwrap()).unwrap();
        let b = run_capture(&trace, CaptureModel::poisson(0.4, 5.0, 1.5).unwrap()).unwrap();
        assert!((a.ratio - b.ratio).abs() < 1e-12);
    }

    #[test]
    fn test_belief_stays_normalized() {
        let trace = sample_trace();
        let mut m = CaptureModel::mmpp(section_model(), 5.0, 2.0).unwrap();
        for c in trace.slot_counts(5.0).unwrap().counts {
            m.update(c);
            let b = m.belief().unwrap();
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(b.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn test_report_csv() {
        let trace = sample_trace();
        let out = run_capture(&trace, CaptureModel::mmpp(section_model(), 5.0, 2.0).unwrap()).unwrap();
        let csv = out.report_csv();
        assert!(csv.starts_with("slot,budget,arrivals,captured,belief_top_state\n0,"));
        assert!(csv.lines().last().unwrap().starts_with("# summary captured="));
    }
}
