//! Multi-valued local decisions and log-likelihood decision fusion.
//!
//! Hypothesis `H_i` emits `levels[i]` plus zero-mean Gaussian noise. A
//! sensor quantizes its observation with the MAP rule; the fusion center
//! combines the received decisions through per-sensor confusion matrices
//! `C(i, v) = P(decision v | H_i)` and log-likelihood ratios against the
//! last hypothesis `H_{g-1}`, assuming conditional independence.
//!
//! Ties are broken toward the lowest index everywhere. Log-domain scores
//! closer than [`TIE_TOL`] count as ties.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use log::debug;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub type SensorId = u32;

/// Floor applied to conditional probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Log-domain tolerance under which two scores are considered tied.
pub const TIE_TOL: f64 = 1e-9;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Priors, signal levels and noise of the observation model.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisModel {
    priors: Vec<f64>,
    levels: Vec<f64>,
    sigma: f64,
}

impl HypothesisModel {
    pub fn new(priors: Vec<f64>, levels: Vec<f64>, sigma: f64) -> Result<Self> {
        if priors.len() < 2 || priors.len() != levels.len() {
            return Err(Error::InvalidParameter(format!(
                "need g >= 2 priors and levels of equal length, got {} and {}",
                priors.len(),
                levels.len()
            )));
        }
        if priors.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidParameter("priors must be positive".into()));
        }
        if (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter("priors must sum to 1".into()));
        }
        if levels.iter().any(|l| !l.is_finite()) || levels.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("levels must be finite and strictly increasing".into()));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(Self {
            priors,
            levels,
            sigma,
        })
    }

    /// Uniform priors over `g` hypotheses at levels `0, 1, .., g-1`.
    pub fn uniform(g: usize, sigma: f64) -> Result<Self> {
        Self::new(vec![1.0 / g as f64; g], (0..g).map(|i| i as f64).collect(), sigma)
    }

    /// Uniform model with noise set from an observation SNR in dB.
    pub fn uniform_osnr(g: usize, osnr_db: f64) -> Result<Self> {
        let priors = vec![1.0 / g as f64; g];
        let levels: Vec<f64> = (0..g).map(|i| i as f64).collect();
        let sigma = sigma_from_osnr(osnr_db, &levels, &priors);
        Self::new(priors, levels, sigma)
    }

    pub fn g(&self) -> usize {
        self.priors.len()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Decision region `(lo, hi]` of each hypothesis under the MAP rule.
    /// Regions may be empty (`lo >= hi`) when a prior is small.
    pub fn decision_regions(&self) -> Vec<(f64, f64)> {
        let s2 = self.sigma * self.sigma;
        // x above this value favours the higher of the two levels
        let crossover = |lo: usize, hi: usize| {
            let (a, b) = (self.levels[lo], self.levels[hi]);
            ((b * b - a * a) / 2.0 - s2 * (self.priors[hi].ln() - self.priors[lo].ln())) / (b - a)
        };
        (0..self.g())
            .map(|i| {
                let lo = (0..i).map(|j| crossover(j, i)).fold(f64::NEG_INFINITY, f64::max);
                let hi = (i + 1..self.g()).map(|j| crossover(i, j)).fold(f64::INFINITY, f64::min);
                (lo, hi)
            })
            .collect()
    }
}

/// Noise level giving `osnr_db` relative to the mean signal power
/// `sum_i priors_i * levels_i^2`.
pub fn sigma_from_osnr(osnr_db: f64, levels: &[f64], priors: &[f64]) -> f64 {
    let power: f64 = priors.iter().zip(levels).map(|(p, l)| p * l * l).sum();
    (power / 10f64.powf(osnr_db / 10.0)).sqrt()
}

/// Row-stochastic matrix of `P(decision j | hypothesis i)`. Rows are
/// hypotheses, columns are reported decision values; the two counts differ
/// when a coarser quantizer reports on a finer hypothesis set.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    hypotheses: usize,
    values: usize,
    data: Vec<f64>,
}

impl ConfusionMatrix {
    pub fn new(hypotheses: usize, values: usize, data: Vec<f64>) -> Result<Self> {
        if hypotheses == 0 || values == 0 || data.len() != hypotheses * values {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: hypotheses * values,
            });
        }
        if data.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("confusion entries must lie in [0, 1]".into()));
        }
        for row in data.chunks(values) {
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter("confusion rows must sum to 1".into()));
            }
        }
        Ok(Self {
            hypotheses,
            values,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let values = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != values) {
            return Err(Error::InvalidParameter("ragged confusion rows".into()));
        }
        Self::new(rows.len(), values, rows.concat())
    }

    pub fn identity(g: usize) -> Self {
        let mut data = vec![0.0; g * g];
        for i in 0..g {
            data[i * g + i] = 1.0;
        }
        Self {
            hypotheses: g,
            values: g,
            data,
        }
    }

    pub fn hypotheses(&self) -> usize {
        self.hypotheses
    }

    pub fn values(&self) -> usize {
        self.values
    }

    pub fn get(&self, hypothesis: usize, value: usize) -> f64 {
        self.data[hypothesis * self.values + value]
    }

    pub fn row(&self, hypothesis: usize) -> &[f64] {
        &self.data[hypothesis * self.values..(hypothesis + 1) * self.values]
    }
}

/// Confusion of a sensor whose observations follow `truth` levels with
/// noise `sigma` and which quantizes with the MAP regions of `quantizer`.
pub fn confusion_between(truth_levels: &[f64], sigma: f64, quantizer: &HypothesisModel) -> ConfusionMatrix {
    let regions = quantizer.decision_regions();
    let values = regions.len();
    let mut data = Vec::with_capacity(truth_levels.len() * values);
    for &level in truth_levels {
        let row: Vec<f64> = regions
            .iter()
            .map(|&(lo, hi)| {
                if lo >= hi {
                    0.0
                } else {
                    let upper = std_normal_cdf((hi - level) / sigma);
                    let lower = std_normal_cdf((lo - level) / sigma);
                    (upper - lower).max(0.0)
                }
            })
            .collect();
        // absorb cdf rounding so each row is exactly stochastic
        let total: f64 = row.iter().sum();
        data.extend(row.iter().map(|p| p / total));
    }
    ConfusionMatrix {
        hypotheses: truth_levels.len(),
        values,
        data,
    }
}

pub fn confusion_matrix(m: &HypothesisModel) -> ConfusionMatrix {
    confusion_between(m.levels(), m.sigma(), m)
}

/// MAP local decision: `argmax_i priors_i * N(c; levels_i, sigma)`.
pub fn local_decide(c: f64, m: &HypothesisModel) -> Result<u32> {
    if !c.is_finite() {
        return Err(Error::NonFiniteObservation(c));
    }
    let s2 = 2.0 * m.sigma * m.sigma;
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (i, (p, l)) in m.priors.iter().zip(&m.levels).enumerate() {
        let score = p.ln() - (c - l) * (c - l) / s2;
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    Ok(best as u32)
}

/// One received local decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Decision {
    pub sensor: SensorId,
    pub value: u32,
}

/// Per-sensor confusion matrices known to the fusion center.
pub trait ConfusionSource {
    fn confusion(&self, sensor: SensorId) -> Option<&ConfusionMatrix>;
}

impl ConfusionSource for [ConfusionMatrix] {
    fn confusion(&self, sensor: SensorId) -> Option<&ConfusionMatrix> {
        self.get(sensor as usize)
    }
}

impl ConfusionSource for Vec<ConfusionMatrix> {
    fn confusion(&self, sensor: SensorId) -> Option<&ConfusionMatrix> {
        self.get(sensor as usize)
    }
}

impl ConfusionSource for HashMap<SensorId, ConfusionMatrix> {
    fn confusion(&self, sensor: SensorId) -> Option<&ConfusionMatrix> {
        self.get(&sensor)
    }
}

impl ConfusionSource for BTreeMap<SensorId, ConfusionMatrix> {
    fn confusion(&self, sensor: SensorId) -> Option<&ConfusionMatrix> {
        self.get(&sensor)
    }
}

/// Every sensor shares one confusion matrix.
#[derive(Debug, Clone)]
pub struct SharedConfusion(pub ConfusionMatrix);

impl ConfusionSource for SharedConfusion {
    fn confusion(&self, _sensor: SensorId) -> Option<&ConfusionMatrix> {
        Some(&self.0)
    }
}

fn floored_ln(p: f64) -> f64 {
    if p < PROB_FLOOR {
        debug!("conditional probability {p:e} floored to {PROB_FLOOR:e}");
        PROB_FLOOR.ln()
    } else {
        p.ln()
    }
}

/// `L_i` for every hypothesis; the last entry is identically 0.
pub fn log_likelihoods<C: ConfusionSource + ?Sized>(
    decisions: &[Decision],
    confusions: &C,
    priors: &[f64],
) -> Result<Vec<f64>> {
    let g = priors.len();
    if g < 2 {
        return Err(Error::InvalidParameter("need at least two hypotheses".into()));
    }
    let last = g - 1;
    let mut l: Vec<f64> = priors[..last].iter().map(|p| (p / priors[last]).ln()).collect();
    for d in decisions {
        let c = confusions
            .confusion(d.sensor)
            .ok_or(Error::MissingConfusion(d.sensor))?;
        if c.hypotheses() != g || d.value as usize >= c.values() {
            return Err(Error::InvalidParameter(format!(
                "decision {} of sensor {} does not fit its {}x{} confusion matrix",
                d.value,
                d.sensor,
                c.hypotheses(),
                c.values()
            )));
        }
        let v = d.value as usize;
        let denom = floored_ln(c.get(last, v));
        for (i, li) in l.iter_mut().enumerate() {
            *li += floored_ln(c.get(i, v)) - denom;
        }
    }
    l.push(0.0);
    Ok(l)
}

pub fn log_likelihood<C: ConfusionSource + ?Sized>(
    decisions: &[Decision],
    confusions: &C,
    priors: &[f64],
    i: usize,
) -> Result<f64> {
    if i >= priors.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            max: priors.len().saturating_sub(1),
        });
    }
    Ok(log_likelihoods(decisions, confusions, priors)?[i])
}

/// Fusion rule on log-likelihood ratios `L_0..L_{g-1}` (with `L_{g-1} = 0`):
/// the last hypothesis wins only if every other ratio is negative.
pub fn decide_from_llr(l: &[f64]) -> u32 {
    let last = l.len() - 1;
    if l[..last].iter().all(|&x| x < -TIE_TOL) {
        return last as u32;
    }
    let mut best = 0;
    for i in 1..last {
        if l[i] > l[best] + TIE_TOL {
            best = i;
        }
    }
    best as u32
}

pub fn global_fuse<C: ConfusionSource + ?Sized>(
    decisions: &[Decision],
    confusions: &C,
    priors: &[f64],
) -> Result<u32> {
    Ok(decide_from_llr(&log_likelihoods(decisions, confusions, priors)?))
}

/// Index of the largest prior, lowest index on ties.
pub fn prior_argmax(priors: &[f64]) -> u32 {
    let mut best = 0;
    for (i, p) in priors.iter().enumerate() {
        if *p > priors[best] * (1.0 + TIE_TOL) {
            best = i;
        }
    }
    best as u32
}

/// [`global_fuse`] over the decisions of sensors that are not flagged.
pub fn fuse_fault_tolerant<C: ConfusionSource + ?Sized>(
    decisions: &[Decision],
    flagged: &BTreeSet<SensorId>,
    confusions: &C,
    priors: &[f64],
) -> Result<u32> {
    let kept: Vec<Decision> = decisions
        .iter()
        .filter(|d| !flagged.contains(&d.sensor))
        .copied()
        .collect();
    let reporting: BTreeSet<SensorId> = decisions.iter().map(|d| d.sensor).collect();
    if !reporting.is_empty() && reporting.is_subset(flagged) {
        return Ok(prior_argmax(priors));
    }
    global_fuse(&kept, confusions, priors)
}

/// Runtime state of one sensor as seen by the fusion center.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorState {
    pub sensor_id: SensorId,
    pub fault_flag: bool,
    /// Injected stuck value (experiment ground truth, not used by detection).
    pub injected_fault: Option<u32>,
    /// Most recent `(epoch, decision)` pairs, oldest first.
    pub history: VecDeque<(usize, u32)>,
    window: usize,
}

impl SensorState {
    pub fn new(sensor_id: SensorId, window: usize) -> Self {
        Self {
            sensor_id,
            fault_flag: false,
            injected_fault: None,
            history: VecDeque::with_capacity(window),
            window,
        }
    }

    pub fn record(&mut self, epoch: usize, value: u32) {
        if self.window == 0 {
            return;
        }
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back((epoch, value));
    }

    /// Epochs of the last `w` decisions when they are all equal.
    fn constant_window(&self, w: usize) -> Option<Vec<usize>> {
        if self.history.len() < w {
            return None;
        }
        let tail: Vec<(usize, u32)> = self.history.iter().skip(self.history.len() - w).copied().collect();
        if tail.iter().any(|&(_, v)| v != tail[0].1) {
            return None;
        }
        let mut epochs: Vec<usize> = tail.iter().map(|&(e, _)| e).collect();
        epochs.dedup();
        Some(epochs)
    }
}

/// Number of changes between consecutive known majorities of `epochs`.
fn majority_changes(majority: &[Option<u32>], epochs: &[usize]) -> usize {
    let known: Vec<u32> = epochs.iter().filter_map(|&e| majority.get(e).copied().flatten()).collect();
    known.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Flags sensors whose last `w` decisions are identical while the per-epoch
/// majority (`majority[epoch]`) changed at least `v` times across the epochs
/// in which those decisions were made. Epochs where the sensor was silent do
/// not count, so a healthy sensor that only reports while the hypothesis is
/// unchanged is never flagged. Flags are sticky. Returns newly flagged
/// sensors.
pub fn detect_stuck(
    states: &mut [SensorState],
    majority: &[Option<u32>],
    w: usize,
    v: usize,
) -> Result<Vec<SensorId>> {
    if w < 2 || v < 1 {
        return Err(Error::InvalidParameter(format!("need W >= 2 and V >= 1, got W={w}, V={v}")));
    }
    let mut newly = Vec::new();
    for s in states.iter_mut().filter(|s| !s.fault_flag) {
        if let Some(epochs) = s.constant_window(w) {
            if majority_changes(majority, &epochs) >= v {
                s.fault_flag = true;
                newly.push(s.sensor_id);
            }
        }
    }
    Ok(newly)
}

/// Plurality value among `values`, lowest value on ties.
pub fn plurality(values: impl IntoIterator<Item = u32>) -> Option<u32> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut best: Option<(u32, usize)> = None;
    for (v, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((v, c));
        }
    }
    best.map(|(v, _)| v)
}

/// Online stuck-sensor detector fed one epoch of decisions at a time.
#[derive(Debug, Clone)]
pub struct StuckDetector {
    states: Vec<SensorState>,
    majority: Vec<Option<u32>>,
    window: usize,
    min_variation: usize,
}

impl StuckDetector {
    pub fn new(sensors: usize, window: usize, min_variation: usize) -> Result<Self> {
        if window < 2 || min_variation < 1 {
            return Err(Error::InvalidParameter(format!(
                "need W >= 2 and V >= 1, got W={window}, V={min_variation}"
            )));
        }
        Ok(Self {
            states: (0..sensors as SensorId).map(|id| SensorState::new(id, window)).collect(),
            majority: Vec::new(),
            window,
            min_variation,
        })
    }

    pub fn states(&self) -> &[SensorState] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [SensorState] {
        &mut self.states
    }

    /// Records one epoch of decisions and runs detection.
    pub fn observe_epoch(&mut self, decisions: &[Decision]) -> Result<Vec<SensorId>> {
        let epoch = self.majority.len();
        let majority = plurality(
            decisions
                .iter()
                .filter(|d| self.states.get(d.sensor as usize).is_some_and(|s| !s.fault_flag))
                .map(|d| d.value),
        );
        self.majority.push(majority);
        for d in decisions {
            if let Some(s) = self.states.get_mut(d.sensor as usize) {
                s.record(epoch, d.value);
            }
        }
        detect_stuck(&mut self.states, &self.majority, self.window, self.min_variation)
    }

    pub fn flagged(&self) -> BTreeSet<SensorId> {
        self.states
            .iter()
            .filter(|s| s.fault_flag)
            .map(|s| s.sensor_id)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dec(sensor: SensorId, value: u32) -> Decision {
        Decision { sensor, value }
    }

    #[test]
    fn test_sigma_from_osnr() {
        assert!((sigma_from_osnr(0.0, &[1.0], &[1.0]) - 1.0).abs() < 1e-15);
        let p = [1.0 / 3.0; 3];
        let s = sigma_from_osnr(2.0, &[0.0, 1.0, 2.0], &p);
        let expected = ((5.0 / 3.0) / 10f64.powf(0.2)).sqrt();
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 1.0255).abs() < 1e-4);
        assert!(sigma_from_osnr(400.0, &[0.0, 1.0, 2.0], &p) < 1e-19);
        let mut last = f64::INFINITY;
        for db in -10..30 {
            let s = sigma_from_osnr(db as f64, &[0.0, 1.0, 2.0], &p);
            assert!(s < last);
            last = s;
        }
    }

    #[test]
    fn test_model_validation() {
        assert!(HypothesisModel::new(vec![0.5, 0.5], vec![1.0, 0.0], 1.0).is_err());
        assert!(HypothesisModel::new(vec![0.6, 0.5], vec![0.0, 1.0], 1.0).is_err());
        assert!(HypothesisModel::new(vec![0.5, 0.5], vec![0.0, 1.0], 0.0).is_err());
        assert!(HypothesisModel::new(vec![1.0], vec![0.0], 1.0).is_err());
    }

    #[test]
    fn test_confusion_limits() {
        let m = HypothesisModel::uniform(3, 1e-9).unwrap();
        let c = confusion_matrix(&m);
        assert_eq!(c, ConfusionMatrix::identity(3));

        let sigma = 0.7;
        let c = confusion_matrix(&HypothesisModel::uniform(2, sigma).unwrap());
        let oracle = std_normal_cdf(-0.5 / sigma);
        assert!((c.get(0, 1) - oracle).abs() < 1e-12);
        assert!((c.get(1, 0) - oracle).abs() < 1e-12);
    }

    #[test]
    fn test_confusion_matches_numerical_integration() {
        let m = HypothesisModel::new(vec![0.2, 0.5, 0.3], vec![-0.5, 0.8, 2.0], 0.9).unwrap();
        let c = confusion_matrix(&m);
        // Simpson integration of the density over the points local_decide maps to j
        let (a, b, steps) = (-12.0, 14.0, 200_000);
        let h = (b - a) / steps as f64;
        for (i, &level) in m.levels().iter().enumerate() {
            let mut mass = [0.0; 3];
            for k in 0..=steps {
                let x = a + k as f64 * h;
                let w = if k == 0 || k == steps { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                let z = (x - level) / m.sigma();
                let pdf = (-0.5 * z * z).exp() / (m.sigma() * (2.0 * std::f64::consts::PI).sqrt());
                mass[local_decide(x, &m).unwrap() as usize] += w * pdf * h / 3.0;
            }
            for (j, mj) in mass.iter().enumerate() {
                assert!((c.get(i, j) - mj).abs() < 1e-3, "({i},{j}) {} vs {mj}", c.get(i, j));
            }
            assert!((c.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn test_local_decide_examples() {
        let m = HypothesisModel::uniform(3, 1.0).unwrap();
        for k in 0..3 {
            assert_eq!(local_decide(k as f64, &m).unwrap(), k);
        }
        assert_eq!(local_decide(0.5, &m).unwrap(), 0);
        let sharp = HypothesisModel::uniform(3, 1e-6).unwrap();
        assert_eq!(local_decide(2.2, &sharp).unwrap(), 2);
        assert!(matches!(local_decide(f64::NAN, &m), Err(Error::NonFiniteObservation(_))));
    }

    #[test]
    fn test_local_decide_is_midpoint_quantizer() {
        let m = HypothesisModel::uniform(4, 0.8).unwrap();
        for k in -4000..8000 {
            let x = k as f64 / 1000.0;
            let mid = ((x - 0.5).ceil()).clamp(0.0, 3.0) as u32;
            assert_eq!(local_decide(x, &m).unwrap(), mid, "x = {x}");
        }
    }

    #[test]
    fn test_log_likelihood_examples() {
        let c = SharedConfusion(ConfusionMatrix::from_rows(&[vec![0.8, 0.2], vec![0.3, 0.7]]).unwrap());
        let uniform = [0.5, 0.5];
        assert_eq!(log_likelihoods(&[], &c, &uniform).unwrap(), vec![0.0, 0.0]);
        assert_eq!(log_likelihood(&[dec(0, 1)], &c, &uniform, 1).unwrap(), 0.0);
        let l0 = log_likelihood(&[dec(0, 1)], &c, &[0.4, 0.6], 0).unwrap();
        assert!((l0 - ((0.4f64 / 0.6).ln() + (0.2f64 / 0.7).ln())).abs() < 1e-12);
        assert!(log_likelihood(&[], &c, &uniform, 2).is_err());
    }

    #[test]
    fn test_log_likelihood_floor() {
        let c = SharedConfusion(ConfusionMatrix::identity(2));
        let l = log_likelihoods(&[dec(0, 1)], &c, &[0.5, 0.5]).unwrap();
        assert!((l[0] - PROB_FLOOR.ln()).abs() < 1e-9);
        assert!(l[0].is_finite());
    }

    #[test]
    fn test_missing_confusion() {
        let table = vec![ConfusionMatrix::identity(2)];
        assert!(matches!(
            global_fuse(&[dec(3, 0)], table.as_slice(), &[0.5, 0.5]),
            Err(Error::MissingConfusion(3))
        ));
    }

    #[test]
    fn test_global_fuse_single_sensor_is_map() {
        let c = ConfusionMatrix::from_rows(&[
            vec![0.6, 0.3, 0.1],
            vec![0.25, 0.5, 0.25],
            vec![0.05, 0.35, 0.6],
        ])
        .unwrap();
        let priors = [0.2, 0.3, 0.5];
        let shared = SharedConfusion(c.clone());
        for v in 0..3u32 {
            let post: Vec<f64> = (0..3).map(|i| priors[i] * c.get(i, v as usize)).collect();
            let map = (0..3).fold(0, |b, i| if post[i] > post[b] { i } else { b });
            assert_eq!(global_fuse(&[dec(0, v)], &shared, &priors).unwrap(), map as u32);
        }
    }

    #[test]
    fn test_global_fuse_unanimous() {
        let c = SharedConfusion(confusion_matrix(&HypothesisModel::uniform(3, 0.6).unwrap()));
        for k in 0..3 {
            let d: Vec<Decision> = (0..7).map(|s| dec(s, k)).collect();
            assert_eq!(global_fuse(&d, &c, &[1.0 / 3.0; 3]).unwrap(), k);
        }
    }

    #[test]
    fn test_uninformative_ties_go_low() {
        let c = SharedConfusion(ConfusionMatrix::from_rows(&vec![vec![0.5, 0.5]; 3]).unwrap());
        let d = [dec(0, 1), dec(1, 0), dec(2, 1)];
        assert_eq!(global_fuse(&d, &c, &[1.0 / 3.0; 3]).unwrap(), 0);
        assert_eq!(prior_argmax(&[0.25, 0.5, 0.25]), 1);
        assert_eq!(prior_argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn test_fault_tolerant_examples() {
        let c = SharedConfusion(confusion_matrix(&HypothesisModel::uniform(3, 0.9).unwrap()));
        let p = [1.0 / 3.0; 3];
        let d = [dec(0, 2), dec(1, 2), dec(2, 1), dec(3, 0)];
        let none = BTreeSet::new();
        assert_eq!(
            fuse_fault_tolerant(&d, &none, &c, &p).unwrap(),
            global_fuse(&d, &c, &p).unwrap()
        );
        let all: BTreeSet<SensorId> = (0..4).collect();
        assert_eq!(fuse_fault_tolerant(&d, &all, &c, &p).unwrap(), 0);
        let some: BTreeSet<SensorId> = [0, 1].into_iter().collect();
        assert_eq!(
            fuse_fault_tolerant(&d, &some, &c, &p).unwrap(),
            global_fuse(&d[2..], &c, &p).unwrap()
        );
    }

    #[test]
    fn test_fault_tolerant_subset_equality() {
        let m = HypothesisModel::uniform_osnr(3, 2.0).unwrap();
        let c = SharedConfusion(confusion_matrix(&m));
        let mut decisions = Vec::new();
        for s in 0..20u32 {
            let v = if s < 5 { 2 } else { (s * 7 + 3) % 3 };
            decisions.push(dec(s, v));
        }
        let flagged: BTreeSet<SensorId> = (0..5).collect();
        let healthy: Vec<Decision> = decisions.iter().filter(|d| d.sensor >= 5).copied().collect();
        assert_eq!(
            fuse_fault_tolerant(&decisions, &flagged, &c, m.priors()).unwrap(),
            global_fuse(&healthy, &c, m.priors()).unwrap()
        );
    }

    fn feed(det: &mut StuckDetector, epochs: usize, sensor_value: impl Fn(usize, u32) -> u32) {
        for e in 0..epochs {
            let d: Vec<Decision> = (0..det.states().len() as u32)
                .map(|s| dec(s, sensor_value(e, s)))
                .collect();
            det.observe_epoch(&d).unwrap();
        }
    }

    #[test]
    fn test_detect_stuck_flags_constant_sensor() {
        let mut det = StuckDetector::new(7, 50, 5).unwrap();
        // majority alternates every 5 epochs; sensor 6 is stuck at 1
        feed(&mut det, 50, |e, s| if s == 6 { 1 } else { ((e / 5) % 3) as u32 });
        assert_eq!(det.flagged(), [6].into_iter().collect());
    }

    #[test]
    fn test_detect_stuck_requires_ensemble_variation() {
        let mut det = StuckDetector::new(5, 10, 1).unwrap();
        feed(&mut det, 30, |_, _| 2);
        assert!(det.flagged().is_empty());
    }

    #[test]
    fn test_detect_stuck_ignores_varying_sensor() {
        let mut det = StuckDetector::new(4, 6, 2).unwrap();
        feed(&mut det, 40, |e, s| ((e + s as usize) % 3) as u32);
        assert!(det.flagged().is_empty());
    }

    #[test]
    fn test_detect_stuck_flags_are_sticky() {
        let mut states = vec![SensorState::new(0, 3)];
        for e in 0..3 {
            states[0].record(e, 1);
        }
        let majority = [Some(0), Some(2), Some(0)];
        assert_eq!(detect_stuck(&mut states, &majority, 3, 2).unwrap(), vec![0]);
        states[0].record(3, 2);
        assert!(detect_stuck(&mut states, &majority, 3, 2).unwrap().is_empty());
        assert!(states[0].fault_flag);
        assert!(detect_stuck(&mut states, &majority, 1, 2).is_err());
    }

    #[test]
    fn test_detect_stuck_ignores_changes_while_silent() {
        let mut states = vec![SensorState::new(0, 2)];
        // the sensor reports 1 in epochs 0 and 3 only, both with majority 1
        states[0].record(0, 1);
        states[0].record(3, 1);
        let majority = [Some(1), Some(0), Some(2), Some(1)];
        assert!(detect_stuck(&mut states, &majority, 2, 1).unwrap().is_empty());
        let majority = [Some(1), Some(0), Some(2), Some(0)];
        assert_eq!(detect_stuck(&mut states, &majority, 2, 1).unwrap(), vec![0]);
    }

    #[test]
    fn test_plurality() {
        assert_eq!(plurality([2, 1, 2, 1]), Some(1));
        assert_eq!(plurality([0, 2, 2]), Some(2));
        assert_eq!(plurality([]), None);
    }

    fn stochastic_rows(g: usize, values: usize) -> impl Strategy<Value = ConfusionMatrix> {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, values), g).prop_map(|rows| {
            let rows: Vec<Vec<f64>> = rows
                .into_iter()
                .map(|r| {
                    let t: f64 = r.iter().sum();
                    r.into_iter().map(|x| x / t).collect()
                })
                .collect();
            ConfusionMatrix::from_rows(&rows).unwrap()
        })
    }

    proptest! {
        #[test]
        fn prop_confusion_rows_stochastic(
            sigma in 0.05f64..5.0,
            raw in prop::collection::vec(0.05f64..1.0, 2..6),
            gaps in prop::collection::vec(0.1f64..3.0, 6),
        ) {
            let t: f64 = raw.iter().sum();
            let priors: Vec<f64> = raw.iter().map(|p| p / t).collect();
            let mut levels = vec![0.0];
            for gap in gaps.iter().take(priors.len() - 1) {
                levels.push(levels.last().unwrap() + gap);
            }
            let m = HypothesisModel::new(priors, levels, sigma).unwrap();
            let c = confusion_matrix(&m);
            for i in 0..m.g() {
                prop_assert!((c.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn prop_scaling_invariance(
            c in stochastic_rows(3, 3),
            values in prop::collection::vec(0u32..3, 1..6),
            scale in 0.1f64..10.0,
        ) {
            let priors = [0.3, 0.3, 0.4];
            let d: Vec<Decision> = values.iter().enumerate().map(|(s, &v)| dec(s as u32, v)).collect();
            let base = global_fuse(&d, &SharedConfusion(c.clone()), &priors).unwrap();
            let scaled: Vec<f64> = priors.iter().map(|p| p * scale).collect();
            let total: f64 = scaled.iter().sum();
            let renorm: Vec<f64> = scaled.iter().map(|p| p / total).collect();
            prop_assert_eq!(global_fuse(&d, &SharedConfusion(c), &renorm).unwrap(), base);
        }

        #[test]
        fn prop_uninformative_sensor_never_matters(
            c in stochastic_rows(3, 3),
            values in prop::collection::vec(0u32..3, 0..5),
            noise_value in 0u32..3,
            row in prop::collection::vec(0.05f64..1.0, 3),
        ) {
            let t: f64 = row.iter().sum();
            let flat: Vec<f64> = row.iter().map(|x| x / t).collect();
            let mut table = vec![c; values.len()];
            table.push(ConfusionMatrix::from_rows(&[flat.clone(), flat.clone(), flat]).unwrap());
            let priors = [0.25, 0.35, 0.4];
            let d: Vec<Decision> = values.iter().enumerate().map(|(s, &v)| dec(s as u32, v)).collect();
            let mut with_extra = d.clone();
            with_extra.push(dec(values.len() as u32, noise_value));
            prop_assert_eq!(
                global_fuse(&with_extra, &table, &priors).unwrap(),
                global_fuse(&d, &table, &priors).unwrap()
            );
        }
    }
}
