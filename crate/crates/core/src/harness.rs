//! Monte Carlo experiments: the two-sensor capture demonstration and the
//! error-probability comparison of three fusion pipelines over network size.
//!
//! A fusion trial runs `epochs` consecutive epochs of length
//! `epoch_length`. Each epoch carries its own hypothesis, drawn from uniform
//! priors; the hypothesis of the last epoch is the one the trial is scored
//! on, the earlier ones feed stuck-sensor detection. Sensors are split
//! round-robin over traffic clusters. All sensors of a cluster share one
//! on/off chain and report at the cluster rate while it is on, so the
//! fusion-center traffic is a superposed MMPP with one component per
//! cluster. Every report is a fresh noisy observation of the current
//! hypothesis, quantized by the sensor; stuck sensors report a fixed value.
//!
//! The random world of a trial (hypotheses, on/off chains, report times,
//! noise, stuck values) depends only on the master seed, the trial index and
//! the sensor index, never on the case or the network size, so the three
//! cases and all swept sizes are evaluated on matched draws.

use std::fmt::{self, Write as _};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::{run_capture, BudgetRounding, CaptureModel, CaptureOutcome};
use crate::error::{Error, Result};
use crate::fusion::{
    confusion_between, confusion_matrix, fuse_fault_tolerant, global_fuse, local_decide,
    Decision, HypothesisModel, SensorId, SharedConfusion, StuckDetector,
};
use crate::mmpp::{superpose, SuperposedMmpp, TwoStateMmpp};
use crate::rng::{derive_path, derive_seed, stream};
use crate::traffic::{merge_traces, on_intervals, poisson_times, simulate_onoff, DecisionEvent, OnOffSource, Trace};

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

const LABEL_HYPOTHESIS: u64 = 0;
const LABEL_CLUSTER: u64 = 1;
const LABEL_SENSOR: u64 = 2;
const LABEL_STUCK: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    BinaryBaseline,
    MultivaluedFt,
    MultivaluedFtCapture,
}

impl Case {
    pub const ALL: [Case; 3] = [Case::BinaryBaseline, Case::MultivaluedFt, Case::MultivaluedFtCapture];

    pub fn name(self) -> &'static str {
        match self {
            Case::BinaryBaseline => "binary_baseline",
            Case::MultivaluedFt => "multivalued_ft",
            Case::MultivaluedFtCapture => "multivalued_ft_capture",
        }
    }

    pub fn id(self) -> u32 {
        match self {
            Case::BinaryBaseline => 1,
            Case::MultivaluedFt => 2,
            Case::MultivaluedFtCapture => 3,
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureParams {
    pub slot_width: f64,
    pub budget_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionParams {
    /// Identical consecutive decisions needed before a sensor is suspect.
    pub window: usize,
    /// Majority changes required over the suspect window.
    pub min_variation: usize,
}

/// Sensors sharing one on/off chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficCluster {
    /// Mean on and off duration.
    pub tau: f64,
    /// Per-sensor report rate while on.
    pub rate: f64,
}

fn default_case() -> Case {
    Case::MultivaluedFtCapture
}

fn default_g() -> usize {
    3
}

fn default_clusters() -> Vec<TrafficCluster> {
    vec![
        TrafficCluster { tau: 30.0, rate: 1.0 / 15.0 },
        TrafficCluster { tau: 50.0, rate: 0.1 },
    ]
}

fn default_epochs() -> usize {
    8
}

fn default_epoch_length() -> f64 {
    50.0
}

fn default_binary_threshold() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_case")]
    pub case: Case,
    /// Number of hypotheses; observation levels are `0, 1, .., g-1`.
    #[serde(default = "default_g")]
    pub g: usize,
    pub n_sensors: usize,
    pub n_faulty: usize,
    pub osnr_db: f64,
    pub trials: u64,
    pub seed: u64,
    /// `None` receives every report.
    #[serde(default)]
    pub capture: Option<CaptureParams>,
    /// `None` disables stuck-sensor detection.
    #[serde(default)]
    pub detection: Option<DetectionParams>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_epoch_length")]
    pub epoch_length: f64,
    #[serde(default = "default_clusters")]
    pub clusters: Vec<TrafficCluster>,
    /// Common stuck value; drawn uniformly per faulty sensor when absent.
    #[serde(default)]
    pub stuck_value: Option<u32>,
    /// Observation threshold of the two-valued quantizer of the binary
    /// baseline, which reports 0 below it and 1 above it.
    #[serde(default = "default_binary_threshold")]
    pub binary_threshold: f64,
}

impl ScenarioConfig {
    /// Defaults of the fusion experiment for a given case and size.
    pub fn standard(case: Case, n_sensors: usize) -> Self {
        Self {
            case,
            g: 3,
            n_sensors,
            n_faulty: 5.min(n_sensors),
            osnr_db: 2.0,
            trials: 10_000,
            seed: 2024,
            capture: Some(CaptureParams { slot_width: 0.5, budget_factor: 1.5 }),
            detection: Some(DetectionParams { window: 8, min_variation: 2 }),
            epochs: default_epochs(),
            epoch_length: default_epoch_length(),
            clusters: default_clusters(),
            stuck_value: None,
            binary_threshold: default_binary_threshold(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.g < 2 {
            return bad(format!("g must be >= 2, got {}", self.g));
        }
        if self.n_faulty > self.n_sensors {
            return bad(format!("n_faulty {} exceeds n_sensors {}", self.n_faulty, self.n_sensors));
        }
        if self.trials < 1 {
            return bad("trials must be >= 1".into());
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.epoch_length > 0.0) || !self.epoch_length.is_finite() {
            return bad(format!("epoch_length must be > 0, got {}", self.epoch_length));
        }
        if self.osnr_db.is_nan() {
            return bad("osnr_db must be a number".into());
        }
        if self.clusters.is_empty() {
            return bad("at least one traffic cluster is required".into());
        }
        for c in &self.clusters {
            TwoStateMmpp::on_off(c.tau, c.rate)?;
        }
        if let Some(v) = self.stuck_value {
            if v as usize >= self.g {
                return bad(format!("stuck_value {v} outside 0..{}", self.g));
            }
        }
        if let Some(d) = self.detection {
            if d.window < 2 || d.min_variation < 1 {
                return bad(format!("need window >= 2 and min_variation >= 1, got {d:?}"));
            }
        }
        if let Some(c) = self.capture {
            CaptureModel::poisson(0.0, c.slot_width, c.budget_factor)?;
        }
        if !self.binary_threshold.is_finite() {
            return bad("binary_threshold must be finite".into());
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.epochs as f64 * self.epoch_length
    }

    fn cluster_sizes(&self) -> Vec<usize> {
        let k = self.clusters.len();
        (0..k).map(|c| (self.n_sensors + k - 1 - c) / k).collect()
    }

    /// Aggregate report process seen by the fusion center.
    pub fn aggregate_model(&self) -> Result<SuperposedMmpp> {
        let comps: Vec<TwoStateMmpp> = self
            .clusters
            .iter()
            .zip(self.cluster_sizes())
            .filter(|(_, m)| *m > 0)
            .map(|(c, m)| TwoStateMmpp::on_off(c.tau, c.rate * m as f64))
            .collect::<Result<_>>()?;
        if comps.is_empty() {
            // no sensors: a silent process keeps the model well formed
            return superpose(&[TwoStateMmpp::new(1.0, 1.0, 0.0, 0.0)?]);
        }
        superpose(&comps)
    }
}

/// Everything a trial needs that does not depend on the trial seed.
struct Prepared {
    cfg: ScenarioConfig,
    observation: HypothesisModel,
    quantizer: HypothesisModel,
    confusion: SharedConfusion,
    capture: Option<CaptureModel>,
}

impl Prepared {
    fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let observation = HypothesisModel::uniform_osnr(cfg.g, cfg.osnr_db)?;
        let sigma = observation.sigma();
        let (quantizer, confusion) = match cfg.case {
            Case::BinaryBaseline => {
                // levels placed symmetrically about the threshold put the
                // equal-prior MAP boundary exactly on it
                let t = cfg.binary_threshold;
                let q = HypothesisModel::new(vec![0.5, 0.5], vec![t - 1.0, t + 1.0], sigma)?;
                let c = confusion_between(observation.levels(), sigma, &q);
                (q, c)
            }
            _ => (observation.clone(), confusion_matrix(&observation)),
        };
        let capture = match cfg.capture {
            None => None,
            Some(p) => {
                let model = cfg.aggregate_model()?;
                Some(match cfg.case {
                    Case::MultivaluedFtCapture => CaptureModel::mmpp(model, p.slot_width, p.budget_factor)?,
                    _ => CaptureModel::poisson(model.mean_rate()?, p.slot_width, p.budget_factor)?,
                })
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            observation,
            quantizer,
            confusion: SharedConfusion(confusion),
            capture,
        })
    }

    fn uses_detection(&self) -> bool {
        self.cfg.case != Case::BinaryBaseline
    }
}

#[derive(Debug, Clone, Copy)]
struct WorldEvent {
    time: f64,
    sensor: u32,
    observation: f64,
}

/// Case-independent random draws of one trial.
struct World {
    hypotheses: Vec<u32>,
    events: Vec<WorldEvent>,
    stuck: Vec<Option<u32>>,
}

fn draw_world(cfg: &ScenarioConfig, sigma: f64, trial_seed: u64) -> World {
    let horizon = cfg.horizon();
    let mut hyp_rng = stream(derive_seed(trial_seed, LABEL_HYPOTHESIS));
    let hypotheses: Vec<u32> = (0..cfg.epochs).map(|_| hyp_rng.random_range(0..cfg.g as u32)).collect();
    let intervals: Vec<Vec<(f64, f64)>> = cfg
        .clusters
        .iter()
        .enumerate()
        .map(|(k, c)| on_intervals(c.tau, horizon, &mut stream(derive_path(trial_seed, &[LABEL_CLUSTER, k as u64]))))
        .collect();
    let mut events = Vec::new();
    let mut stuck = Vec::with_capacity(cfg.n_sensors);
    for j in 0..cfg.n_sensors {
        let k = j % cfg.clusters.len();
        let mut rng: ChaCha8Rng = stream(derive_path(trial_seed, &[LABEL_SENSOR, j as u64]));
        for time in poisson_times(&intervals[k], cfg.clusters[k].rate, &mut rng) {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let epoch = epoch_of(time, cfg);
            events.push(WorldEvent {
                time,
                sensor: j as u32,
                observation: hypotheses[epoch] as f64 + sigma * noise,
            });
        }
        stuck.push(if j < cfg.n_faulty {
            Some(cfg.stuck_value.unwrap_or_else(|| {
                stream(derive_path(trial_seed, &[LABEL_STUCK, j as u64])).random_range(0..cfg.g as u32)
            }))
        } else {
            None
        });
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.sensor.cmp(&b.sensor)));
    World { hypotheses, events, stuck }
}

fn epoch_of(time: f64, cfg: &ScenarioConfig) -> usize {
    ((time / cfg.epoch_length) as usize).min(cfg.epochs - 1)
}

/// Result of fusing one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochOutcome {
    pub epoch: usize,
    pub truth: u32,
    pub fused: u32,
    /// Decisions the fusion center received in the epoch.
    pub received: usize,
    pub flagged: Vec<SensorId>,
}

/// Per-trial artifacts: the reported trace and its capture.
#[derive(Debug, Clone)]
pub struct TrialRun {
    pub epochs: Vec<EpochOutcome>,
    pub reported: Trace,
    pub capture: Option<CaptureOutcome>,
}

impl TrialRun {
    pub fn correct(&self) -> bool {
        self.epochs.last().is_some_and(|e| e.fused == e.truth)
    }
}

fn simulate(p: &Prepared, trial_seed: u64) -> Result<TrialRun> {
    let cfg = &p.cfg;
    let world = draw_world(cfg, p.observation.sigma(), trial_seed);
    let levels = p.observation.levels();
    let mut reports = Vec::with_capacity(world.events.len());
    for e in &world.events {
        let value = match world.stuck[e.sensor as usize] {
            // a stuck sensor behaves as if it always observed its stuck level
            Some(v) => local_decide(levels[v as usize], &p.quantizer)?,
            None => local_decide(e.observation, &p.quantizer)?,
        };
        reports.push(DecisionEvent { time: e.time, sensor_id: e.sensor, value });
    }
    let reported = Trace::new(reports, cfg.horizon())?;
    let (received, capture) = match &p.capture {
        Some(model) => {
            let out = run_capture(&reported, model.clone())?;
            (out.captured.events().to_vec(), Some(out))
        }
        None => (reported.events().to_vec(), None),
    };

    let mut per_epoch: Vec<Vec<Decision>> = vec![Vec::new(); cfg.epochs];
    for e in &received {
        per_epoch[epoch_of(e.time, cfg)].push(Decision { sensor: e.sensor_id, value: e.value });
    }
    let mut detector = match (cfg.detection, p.uses_detection()) {
        (Some(d), true) => Some(StuckDetector::new(cfg.n_sensors, d.window, d.min_variation)?),
        _ => None,
    };
    let priors = p.observation.priors();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for (epoch, decisions) in per_epoch.iter().enumerate() {
        let (fused, flagged) = match detector.as_mut() {
            Some(det) => {
                det.observe_epoch(decisions)?;
                let flagged = det.flagged();
                (fuse_fault_tolerant(decisions, &flagged, &p.confusion, priors)?, flagged.into_iter().collect())
            }
            None => (global_fuse(decisions, &p.confusion, priors)?, Vec::new()),
        };
        epochs.push(EpochOutcome {
            epoch,
            truth: world.hypotheses[epoch],
            fused,
            received: decisions.len(),
            flagged,
        });
    }
    Ok(TrialRun { epochs, reported, capture })
}

/// Seed of trial `trial_index`. The case is deliberately not mixed in so
/// that cases see identical draws.
pub fn trial_seed(master: u64, trial_index: u64) -> u64 {
    derive_seed(master, trial_index)
}

/// Full per-epoch record of one trial.
pub fn run_trial_detailed(cfg: &ScenarioConfig, trial_seed: u64) -> Result<TrialRun> {
    simulate(&Prepared::new(cfg)?, trial_seed)
}

/// Whether the fused decision of the final epoch equals its hypothesis.
pub fn run_trial(cfg: &ScenarioConfig, trial_seed: u64) -> Result<bool> {
    Ok(run_trial_detailed(cfg, trial_seed)?.correct())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub p_e: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: u64,
}

impl ErrorEstimate {
    pub fn ci_width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// Error fraction with a 95% Wilson score interval.
pub fn wilson(errors: u64, trials: u64) -> ErrorEstimate {
    assert!(trials > 0 && errors <= trials, "need 0 <= errors <= trials, trials > 0");
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ErrorEstimate {
        p_e: p,
        ci_low: (center - half).clamp(0.0, p),
        ci_high: (center + half).clamp(p, 1.0),
        trials,
    }
}

/// Counts failures of `referee` over `trials` seeded trials in parallel.
pub fn estimate_with<F>(seed: u64, trials: u64, referee: F) -> Result<ErrorEstimate>
where
    F: Fn(u64) -> Result<bool> + Sync,
{
    if trials < 1 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let errors = (0..trials)
        .into_par_iter()
        .map(|t| referee(trial_seed(seed, t)).map(|ok| u64::from(!ok)))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(wilson(errors, trials))
}

pub fn estimate_error(cfg: &ScenarioConfig) -> Result<ErrorEstimate> {
    let p = Prepared::new(cfg)?;
    estimate_with(cfg.seed, cfg.trials, |s| simulate(&p, s).map(|r| r.correct()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub case: Case,
    pub estimate: ErrorEstimate,
    pub seed: u64,
}

/// Error estimates for every `(size, case)` pair, sizes outermost.
pub fn sweep_network_size(base: &ScenarioConfig, sizes: &[usize], cases: &[Case]) -> Result<Vec<SweepRow>> {
    if sizes.is_empty() || cases.is_empty() {
        return Err(Error::InvalidParameter("sizes and cases must be nonempty".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len() * cases.len());
    for &n in sizes {
        for &case in cases {
            let cfg = ScenarioConfig { case, n_sensors: n, ..base.clone() };
            rows.push(SweepRow { n, case, estimate: estimate_error(&cfg)?, seed: cfg.seed });
        }
    }
    Ok(rows)
}

pub fn results_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("n,case,p_e,ci_low,ci_high,trials,seed\n");
    for r in rows {
        let e = r.estimate;
        let _ = writeln!(
            out,
            "{},{},{:.9},{:.9},{:.9},{},{}",
            r.n, r.case, e.p_e, e.ci_low, e.ci_high, e.trials, r.seed
        );
    }
    out
}

/// CSV `epoch,true_hyp,fused,errors_so_far,flagged_sensors` of one run.
pub fn fuse_report_csv(epochs: &[EpochOutcome]) -> String {
    let mut out = String::from("epoch,true_hyp,fused,errors_so_far,flagged_sensors\n");
    let mut errors = 0;
    for e in epochs {
        errors += usize::from(e.fused != e.truth);
        let flagged: Vec<String> = e.flagged.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "{},{},{},{},{}", e.epoch, e.truth, e.fused, errors, flagged.join(";"));
    }
    out
}

fn default_capture_sources() -> Vec<OnOffSource> {
    vec![
        OnOffSource { sensor_id: 1, tau: 30.0, rate: 1.0 / 15.0, radix: 3 },
        OnOffSource { sensor_id: 2, tau: 50.0, rate: 0.1, radix: 3 },
    ]
}

fn default_slot_width() -> f64 {
    5.0
}

fn default_budget_factor() -> f64 {
    2.0
}

fn default_capture_horizon() -> f64 {
    1e5
}

/// Capture demonstration: independent on/off sensors reporting to one
/// fusion center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureExperiment {
    #[serde(default = "default_capture_sources")]
    pub sources: Vec<OnOffSource>,
    #[serde(default = "default_slot_width")]
    pub slot_width: f64,
    #[serde(default = "default_budget_factor")]
    pub budget_factor: f64,
    #[serde(default = "default_capture_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CaptureExperiment {
    fn default() -> Self {
        Self {
            sources: default_capture_sources(),
            slot_width: default_slot_width(),
            budget_factor: default_budget_factor(),
            horizon: default_capture_horizon(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaptureDemo {
    pub sensor_traces: Vec<Trace>,
    pub merged: Trace,
    pub mmpp: CaptureOutcome,
    /// Mean-rate policy with the same average budget as `mmpp`.
    pub poisson: CaptureOutcome,
}

impl CaptureExperiment {
    pub fn model(&self) -> Result<SuperposedMmpp> {
        let comps: Vec<TwoStateMmpp> = self
            .sources
            .iter()
            .map(|s| TwoStateMmpp::on_off(s.tau, s.rate))
            .collect::<Result<_>>()?;
        superpose(&comps)
    }

    pub fn run(&self) -> Result<CaptureDemo> {
        if self.sources.is_empty() {
            return Err(Error::EmptyComponents);
        }
        let sensor_traces: Vec<Trace> = self
            .sources
            .iter()
            .map(|s| simulate_onoff(s, self.horizon, derive_seed(self.seed, u64::from(s.sensor_id))))
            .collect::<Result<_>>()?;
        let merged = merge_traces(&sensor_traces)?;
        let model = self.model()?;
        let mean_rate = model.mean_rate()?;
        let mmpp = run_capture(&merged, CaptureModel::mmpp(model, self.slot_width, self.budget_factor)?)?;
        let poisson = equal_budget_baseline(&merged, mean_rate, self.slot_width, mmpp.mean_budget())?;
        Ok(CaptureDemo { sensor_traces, merged, mmpp, poisson })
    }
}

/// Mean-rate capture whose dithered budget averages to `mean_budget`.
pub fn equal_budget_baseline(trace: &Trace, mean_rate: f64, slot_width: f64, mean_budget: f64) -> Result<CaptureOutcome> {
    if !(mean_rate > 0.0) || !(mean_budget > 0.0) {
        return run_capture(trace, CaptureModel::poisson(0.0, slot_width, 1.0)?);
    }
    let c = mean_budget / (mean_rate * slot_width);
    run_capture(
        trace,
        CaptureModel::poisson(mean_rate, slot_width, c)?.with_rounding(BudgetRounding::Dither),
    )
}
