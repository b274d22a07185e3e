//! Step policies: the adaptive-reuse controller and the baseline
//! criteria it is compared against.
//!
//! A policy only decides; the engine applies the cached-vector
//! approximation and refreshes [`CacheState`], so every variant shares one
//! tested implementation of the update rule.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::tensor::{l1_mean, NormStat, Tensor1D};

/// Norms below this count as zero when dividing.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    FullCompute,
    Reuse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reason {
    /// Mandatory full computation during the initial warm-up steps.
    WarmUp,
    /// Mandatory full computation at the last step.
    FinalStep,
    /// The policy's accumulated criterion demanded a refresh.
    ThresholdExceeded,
    /// The process looks locally stable; reuse the cached vector.
    Stable,
}

/// Per-step verdict plus the diagnostics that justified it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecision {
    pub action: Action,
    pub reason: Reason,
    /// Estimated percent output change at this step; 0 at step 0 and
    /// during forced-compute bookkeeping.
    pub epsilon: f64,
    /// Accumulated deviation after this step's bookkeeping.
    pub e_after: f64,
}

impl StepDecision {
    fn full(reason: Reason, epsilon: f64) -> Self {
        StepDecision { action: Action::FullCompute, reason, epsilon, e_after: 0.0 }
    }

    fn reuse(epsilon: f64, e_after: f64) -> Self {
        StepDecision { action: Action::Reuse, reason: Reason::Stable, epsilon, e_after }
    }
}

/// Runtime-observable inputs to a decision, computed before it.
#[derive(Debug, Clone, Copy)]
pub struct StepProbe {
    /// `l1_mean(x_t - x_{t-1})`; absent at step 0.
    pub dx_norm: Option<NormStat>,
    /// `l1_mean(v_{t-1})` of the most recent output, approximated or not;
    /// absent at step 0.
    pub v_prev_norm: Option<NormStat>,
}

/// The controller's memory, owned and refreshed by the engine.
#[derive(Debug, Clone, Default)]
pub struct CacheState {
    /// Cached transformation vector `v_i - x_i` from the reference step.
    pub delta: Option<Tensor1D>,
    /// Reference step `i` of the cached vector.
    pub ref_step: Option<usize>,
    /// Relative transformation rate held by the controller.
    pub k: f64,
    /// Accumulated deviation since the last full computation.
    pub e_accum: f64,
    /// Previous input `x_{t-1}`.
    pub prev_x: Option<Tensor1D>,
    /// Previous output `v_{t-1}`, possibly an approximation.
    pub prev_v: Option<Tensor1D>,
    /// Whether `prev_v` came from reuse rather than the oracle.
    pub prev_v_approx: bool,
    /// Input/output at the most recent full computation.
    pub last_full: Option<(Tensor1D, Tensor1D)>,
    /// Input/output at the full computation before that.
    pub second_last_full: Option<(Tensor1D, Tensor1D)>,
    /// Exponential-moving-average state for the EMA update strategy.
    pub k_ema: f64,
    /// Sum and count of every rate sample since warm-up began; the
    /// history-average strategy deliberately retains the violent early
    /// samples, which is what makes it the most conservative updater.
    pub k_history_sum: f64,
    pub k_history_count: usize,
}

impl CacheState {
    pub fn new() -> Self {
        CacheState::default()
    }
}

/// Relative transformation rate between two consecutive evaluations:
/// `l1_mean(v_a - v_b) / l1_mean(x_a - x_b)`.
///
/// On a stationary input (denominator below [`DEGENERATE_NORM`]) the rate
/// is undefined and the previously held value is returned unchanged.
pub fn transform_rate(
    v_a: &Tensor1D,
    v_b: &Tensor1D,
    x_a: &Tensor1D,
    x_b: &Tensor1D,
    held: f64,
) -> Result<f64> {
    let dv = l1_mean(&v_a.sub(v_b)?).value();
    let dx = l1_mean(&x_a.sub(x_b)?).value();
    if dx < DEGENERATE_NORM {
        return Ok(held);
    }
    Ok(dv / dx)
}

/// Estimated percent output change at the current step:
/// `100 * k * |dx| / |v_prev|`.
pub fn local_stability_indicator(k: f64, dx_norm: NormStat, v_prev_norm: NormStat) -> f64 {
    100.0 * k * dx_norm.value() / v_prev_norm.value()
}

/// Running-sum update of the accumulated deviation.
pub fn accumulate(e: f64, epsilon: f64) -> f64 {
    e + epsilon
}

/// Which rate sample feeds the controller at each refresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KUpdate {
    /// Latest consecutive-step sample.
    #[default]
    Local,
    /// `k <- 0.9 k + 0.1 sample`.
    Ema,
    /// Arithmetic mean of all samples taken at refreshes past warm-up.
    #[serde(alias = "average", alias = "history-average")]
    Avg,
}

/// The adaptive-reuse decision: full computation during warm-up, at the
/// final step, or when the accumulated deviation would reach `tau`;
/// otherwise reuse. Degenerate norms fail safe to a full computation.
pub fn easycache_decide(
    t: usize,
    total: usize,
    tau: f64,
    warmup: usize,
    cache: &CacheState,
    probe: &StepProbe,
) -> StepDecision {
    if t < warmup {
        return StepDecision::full(Reason::WarmUp, 0.0);
    }
    if t + 1 == total {
        return StepDecision::full(Reason::FinalStep, 0.0);
    }
    let (dx, vp) = match (probe.dx_norm, probe.v_prev_norm) {
        (Some(dx), Some(vp)) => (dx, vp),
        _ => return StepDecision::full(Reason::ThresholdExceeded, 0.0),
    };
    if cache.delta.is_none() || vp.value() < DEGENERATE_NORM {
        return StepDecision::full(Reason::ThresholdExceeded, 0.0);
    }
    let epsilon = local_stability_indicator(cache.k, dx, vp);
    let candidate = accumulate(cache.e_accum, epsilon);
    if candidate >= tau {
        StepDecision::full(Reason::ThresholdExceeded, epsilon)
    } else {
        StepDecision::reuse(epsilon, candidate)
    }
}

/// Refreshes the held rate after a full computation at step `t`. The
/// sample spans the most recent fully computed interval, so both
/// endpoints are true oracle outputs and reuse error never inflates the
/// rate; during warm-up consecutive steps are all fully computed and the
/// interval is a single step. All strategies track the latest sample
/// through warm-up so the rate is defined before the first reuse
/// decision; the configured strategy applies from step `warmup` on.
pub fn update_k(
    k_update: KUpdate,
    warmup: usize,
    t: usize,
    cache: &mut CacheState,
    x: &Tensor1D,
    v: &Tensor1D,
) -> Result<f64> {
    let (ref_x, ref_v) = match &cache.last_full {
        Some((fx, fv)) => (fx, fv),
        None => return Ok(cache.k), // first full computation: rate keeps its initialization
    };
    let sample = transform_rate(v, ref_v, x, ref_x, cache.k)?;
    cache.k_history_sum += sample;
    cache.k_history_count += 1;
    if t < warmup {
        cache.k = sample;
        cache.k_ema = sample;
        return Ok(cache.k);
    }
    match k_update {
        KUpdate::Local => {
            cache.k = sample;
            cache.k_ema = sample;
        }
        KUpdate::Ema => {
            cache.k_ema = 0.9 * cache.k_ema + 0.1 * sample;
            cache.k = cache.k_ema;
        }
        KUpdate::Avg => {
            cache.k = cache.k_history_sum / cache.k_history_count as f64;
        }
    }
    Ok(cache.k)
}

/// Offline replay of the accumulate-and-threshold criterion on a frozen
/// indicator trace; returns the set of steps the criterion would reuse.
pub fn replay_skip_set(epsilon_trace: &[f64], tau: f64, warmup: usize) -> BTreeSet<usize> {
    let total = epsilon_trace.len();
    let mut skip = BTreeSet::new();
    let mut e = 0.0;
    for (t, &eps) in epsilon_trace.iter().enumerate() {
        if t < warmup || t + 1 == total {
            e = 0.0;
            continue;
        }
        let candidate = e + eps;
        if candidate >= tau {
            e = 0.0;
        } else {
            e = candidate;
            skip.insert(t);
        }
    }
    skip
}

// ---------------------------------------------------------------------------
// Policy configuration
// ---------------------------------------------------------------------------

/// Serializable policy selection, e.g.
/// `{"variant":"easycache","tau":5.0,"R":10,"k_update":"local"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", deny_unknown_fields)]
pub enum PolicyConfig {
    #[serde(rename = "easycache")]
    EasyCache {
        tau: f64,
        #[serde(rename = "R")]
        warmup: usize,
        #[serde(default)]
        k_update: KUpdate,
    },
    #[serde(rename = "static")]
    Static {
        interval: usize,
        #[serde(rename = "R", default = "default_warmup_one")]
        warmup: usize,
    },
    #[serde(rename = "probabilistic")]
    Probabilistic {
        p: f64,
        #[serde(default)]
        seed: u64,
        #[serde(rename = "R", default = "default_warmup_one")]
        warmup: usize,
    },
    #[serde(rename = "output-relative")]
    OutputRelative {
        tau: f64,
        #[serde(rename = "R", default = "default_warmup_one")]
        warmup: usize,
    },
    #[serde(rename = "no-recompute")]
    NoRecompute {
        #[serde(default = "default_no_recompute_warm")]
        warm: usize,
    },
    #[serde(rename = "step-reduction")]
    StepReduction { fraction: f64 },
}

fn default_warmup_one() -> usize {
    1
}

fn default_no_recompute_warm() -> usize {
    20
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PolicyConfig::EasyCache { tau, warmup, .. } => {
                if !tau.is_finite() || tau < 0.0 {
                    return Err(Error::config(format!("tau {tau} must be finite and >= 0")));
                }
                if warmup < 1 {
                    return Err(Error::config("warm-up step count must be >= 1"));
                }
            }
            PolicyConfig::Static { interval, warmup } => {
                if interval < 1 {
                    return Err(Error::config("static interval must be >= 1"));
                }
                if warmup < 1 {
                    return Err(Error::config("warm-up step count must be >= 1"));
                }
            }
            PolicyConfig::Probabilistic { p, warmup, .. } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::config(format!("reuse probability {p} outside [0, 1]")));
                }
                if warmup < 1 {
                    return Err(Error::config("warm-up step count must be >= 1"));
                }
            }
            PolicyConfig::OutputRelative { tau, warmup } => {
                if !tau.is_finite() || tau < 0.0 {
                    return Err(Error::config(format!("tau {tau} must be finite and >= 0")));
                }
                if warmup < 1 {
                    return Err(Error::config("warm-up step count must be >= 1"));
                }
            }
            PolicyConfig::NoRecompute { warm } => {
                if warm < 1 {
                    return Err(Error::config("no-recompute warm prefix must be >= 1"));
                }
            }
            PolicyConfig::StepReduction { fraction } => {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(Error::config(format!(
                        "step fraction {fraction} outside (0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Warm-up length for variants that define one.
    pub fn warmup(&self) -> Option<usize> {
        match *self {
            PolicyConfig::EasyCache { warmup, .. }
            | PolicyConfig::Static { warmup, .. }
            | PolicyConfig::Probabilistic { warmup, .. }
            | PolicyConfig::OutputRelative { warmup, .. } => Some(warmup),
            PolicyConfig::NoRecompute { warm } => Some(warm),
            PolicyConfig::StepReduction { .. } => None,
        }
    }

    pub fn k_update(&self) -> KUpdate {
        match *self {
            PolicyConfig::EasyCache { k_update, .. } => k_update,
            _ => KUpdate::Local,
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            PolicyConfig::EasyCache { .. } => "easycache",
            PolicyConfig::Static { .. } => "static",
            PolicyConfig::Probabilistic { .. } => "probabilistic",
            PolicyConfig::OutputRelative { .. } => "output-relative",
            PolicyConfig::NoRecompute { .. } => "no-recompute",
            PolicyConfig::StepReduction { .. } => "step-reduction",
        }
    }

    /// Instantiates the runtime policy. Step-reduction has no per-step
    /// policy; the engine runs a shortened schedule instead.
    pub fn build(&self) -> Result<Box<dyn StepPolicy>> {
        self.validate()?;
        Ok(match *self {
            PolicyConfig::EasyCache { tau, warmup, .. } => {
                Box::new(EasyCachePolicy { tau, warmup })
            }
            PolicyConfig::Static { interval, warmup } => {
                Box::new(StaticPolicy { interval, warmup })
            }
            PolicyConfig::Probabilistic { p, seed, warmup } => Box::new(ProbabilisticPolicy {
                p,
                warmup,
                rng: DetRng::seed_from_u64(seed),
            }),
            PolicyConfig::OutputRelative { tau, warmup } => Box::new(OutputRelativePolicy {
                tau,
                warmup,
                accum: 0.0,
                last_v: None,
                latest_change: None,
                pending: 0.0,
            }),
            PolicyConfig::NoRecompute { warm } => Box::new(NoRecomputePolicy { warm }),
            PolicyConfig::StepReduction { .. } => {
                return Err(Error::config(
                    "step-reduction runs as a schedule mode, not a step policy",
                ))
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Runtime policies
// ---------------------------------------------------------------------------

/// Per-step decision maker. One instance drives one run.
pub trait StepPolicy {
    fn decide(
        &mut self,
        t: usize,
        total: usize,
        cache: &CacheState,
        probe: &StepProbe,
    ) -> StepDecision;

    /// Notification after the engine performed a full computation.
    fn on_full_compute(&mut self, _t: usize, _x: &Tensor1D, _v: &Tensor1D) {}

    /// Notification after the engine reused the cached vector.
    fn on_reuse(&mut self, _t: usize, _x: &Tensor1D, _v_hat: &Tensor1D) {}
}

pub struct EasyCachePolicy {
    pub tau: f64,
    pub warmup: usize,
}

impl StepPolicy for EasyCachePolicy {
    fn decide(
        &mut self,
        t: usize,
        total: usize,
        cache: &CacheState,
        probe: &StepProbe,
    ) -> StepDecision {
        easycache_decide(t, total, self.tau, self.warmup, cache, probe)
    }
}

/// Full computation at a fixed interval, plus warm-up and final forcing.
pub struct StaticPolicy {
    pub interval: usize,
    pub warmup: usize,
}

impl StepPolicy for StaticPolicy {
    fn decide(
        &mut self,
        t: usize,
        total: usize,
        _cache: &CacheState,
        _probe: &StepProbe,
    ) -> StepDecision {
        if t < self.warmup {
            StepDecision::full(Reason::WarmUp, 0.0)
        } else if t + 1 == total {
            StepDecision::full(Reason::FinalStep, 0.0)
        } else if t % self.interval == 0 {
            StepDecision::full(Reason::ThresholdExceeded, 0.0)
        } else {
            StepDecision::reuse(0.0, 0.0)
        }
    }
}

/// Reuse with fixed probability outside warm-up and the final step.
pub struct ProbabilisticPolicy {
    pub p: f64,
    pub warmup: usize,
    rng: DetRng,
}

impl StepPolicy for ProbabilisticPolicy {
    fn decide(
        &mut self,
        t: usize,
        total: usize,
        _cache: &CacheState,
        _probe: &StepProbe,
    ) -> StepDecision {
        if t < self.warmup {
            StepDecision::full(Reason::WarmUp, 0.0)
        } else if t + 1 == total {
            StepDecision::full(Reason::FinalStep, 0.0)
        } else if self.rng.uniform() < self.p {
            StepDecision::reuse(0.0, 0.0)
        } else {
            StepDecision::full(Reason::ThresholdExceeded, 0.0)
        }
    }
}

/// Accumulates the measured relative output change
/// `100 * l1_mean(v_{t-1} - v_{t-2}) / l1_mean(v_{t-1})` since the last
/// refresh and recomputes once the sum reaches `tau`.
pub struct OutputRelativePolicy {
    pub tau: f64,
    pub warmup: usize,
    accum: f64,
    last_v: Option<Tensor1D>,
    latest_change: Option<f64>,
    pending: f64,
}

impl OutputRelativePolicy {
    fn observe(&mut self, v: &Tensor1D) {
        if let Some(last) = &self.last_v {
            let denom = l1_mean(v).value();
            let change = match v.sub(last) {
                Ok(diff) if denom >= DEGENERATE_NORM => {
                    100.0 * l1_mean(&diff).value() / denom
                }
                // Degenerate output: force a refresh at the next decision.
                _ => 1e12,
            };
            self.latest_change = Some(change);
        }
        self.last_v = Some(v.clone());
    }
}

impl StepPolicy for OutputRelativePolicy {
    fn decide(
        &mut self,
        t: usize,
        total: usize,
        _cache: &CacheState,
        _probe: &StepProbe,
    ) -> StepDecision {
        if t < self.warmup {
            return StepDecision::full(Reason::WarmUp, 0.0);
        }
        if t + 1 == total {
            return StepDecision::full(Reason::FinalStep, 0.0);
        }
        let change = self.latest_change.unwrap_or(0.0);
        let candidate = self.accum + change;
        if candidate >= self.tau {
            self.pending = 0.0;
            StepDecision::full(Reason::ThresholdExceeded, change)
        } else {
            self.pending = candidate;
            StepDecision::reuse(change, candidate)
        }
    }

    fn on_full_compute(&mut self, _t: usize, _x: &Tensor1D, v: &Tensor1D) {
        self.accum = 0.0;
        self.observe(v);
    }

    fn on_reuse(&mut self, _t: usize, _x: &Tensor1D, v_hat: &Tensor1D) {
        self.accum = self.pending;
        self.observe(v_hat);
    }
}

/// Full computation for the warm prefix, then unconditional reuse except
/// at the final step.
pub struct NoRecomputePolicy {
    pub warm: usize,
}

impl StepPolicy for NoRecomputePolicy {
    fn decide(
        &mut self,
        t: usize,
        total: usize,
        _cache: &CacheState,
        _probe: &StepProbe,
    ) -> StepDecision {
        if t < self.warm {
            StepDecision::full(Reason::WarmUp, 0.0)
        } else if t + 1 == total {
            StepDecision::full(Reason::FinalStep, 0.0)
        } else {
            StepDecision::reuse(0.0, 0.0)
        }
    }
}
