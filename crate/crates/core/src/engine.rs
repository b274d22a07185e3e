//! The sampling loop: integrates the ODE over a schedule, routes each
//! step through a policy, applies the cached-vector approximation on
//! reuse, and records a complete trace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{sample_initial, MixtureOracle, VelocityOracle};
use crate::policy::{
    update_k, Action, CacheState, PolicyConfig, Reason, StepPolicy, StepProbe,
};
use crate::presets::{field_grid, load_anchor_set, preset, PRESET_NAMES};
use crate::schedule::{euler_step, LatentState, Schedule, DEFAULT_DELTA_END};
use crate::tensor::{l1_mean, Tensor1D};

/// Why a trace row was computed or reused. Extends the policy reasons
/// with `Scheduled` for runs that have no per-step policy (full runs and
/// step-reduction runs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceReason {
    WarmUp,
    FinalStep,
    Threshold,
    Stable,
    Scheduled,
}

impl From<Reason> for TraceReason {
    fn from(r: Reason) -> Self {
        match r {
            Reason::WarmUp => TraceReason::WarmUp,
            Reason::FinalStep => TraceReason::FinalStep,
            Reason::ThresholdExceeded => TraceReason::Threshold,
            Reason::Stable => TraceReason::Stable,
        }
    }
}

impl TraceReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceReason::WarmUp => "warmup",
            TraceReason::FinalStep => "final",
            TraceReason::Threshold => "threshold",
            TraceReason::Stable => "stable",
            TraceReason::Scheduled => "scheduled",
        }
    }
}

/// One step of a recorded trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub s: f64,
    pub action: Action,
    pub reason: TraceReason,
    pub x_norm: f64,
    pub v_norm: f64,
    /// Rate held by the controller after this step; undefined at step 0.
    pub k: Option<f64>,
    pub epsilon: f64,
    pub e_accum: f64,
    pub approx: bool,
}

/// Full record of one run.
#[derive(Debug, Clone)]
pub struct TrajectoryTrace {
    pub rows: Vec<TraceRow>,
    pub final_x: Tensor1D,
    pub eval_count: u64,
    /// Step count of the requested configuration; differs from
    /// `rows.len()` only for step-reduction runs.
    pub base_steps: usize,
    /// Full computations immediately following a reused step. The rate
    /// sample always spans true oracle outputs; this counts how often the
    /// consecutive-pair alternative would have used an approximation.
    pub refreshes_after_reuse: usize,
}

impl TrajectoryTrace {
    pub fn full_compute_steps(&self) -> usize {
        self.rows.iter().filter(|r| r.action == Action::FullCompute).count()
    }
}

/// Steps per oracle evaluation; 1.0 when nothing was reused.
pub fn step_speedup(trace: &TrajectoryTrace) -> f64 {
    trace.base_steps as f64 / trace.eval_count as f64
}

/// A fully reproducible run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Preset name or path to an anchor-set JSON file.
    pub field: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(default = "default_delta_end")]
    pub delta_end: f64,
    pub seed: u64,
    pub policy: PolicyConfig,
}

fn default_delta_end() -> f64 {
    DEFAULT_DELTA_END
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.steps < 2 {
            return Err(Error::config(format!("T = {} must be >= 2", self.steps)));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::uniform(self.steps, self.delta_end)
    }

    /// Resolves the field spec: a known preset name first, otherwise a
    /// path to an anchor-set JSON file.
    pub fn resolve_oracle(&self) -> Result<MixtureOracle> {
        let field = if PRESET_NAMES.contains(&self.field.as_str()) {
            preset(&self.field)?
        } else if std::path::Path::new(&self.field).is_file() {
            load_anchor_set(std::path::Path::new(&self.field))?
        } else {
            return Err(Error::config(format!(
                "unknown preset: {} (not a preset name or readable file)",
                self.field
            )));
        };
        if let Some(dim) = self.dim {
            if dim != field.dim() {
                return Err(Error::config(format!(
                    "requested dim {dim} but field has dim {}",
                    field.dim()
                )));
            }
        }
        Ok(MixtureOracle::new(field))
    }

    /// Seeded standard-normal start, carrying the field's grid shape.
    pub fn initial_sample(&self, oracle: &MixtureOracle) -> Result<Tensor1D> {
        let x0 = sample_initial(oracle.dim(), self.seed)?;
        match field_grid(oracle.field()) {
            Some((w, h)) => Tensor1D::new_grid(x0.values().to_vec(), w, h),
            None => Ok(x0),
        }
    }
}

/// Core integration loop shared by every run mode. With no policy, every
/// step is a full computation tagged `Scheduled`; with a policy the
/// engine owns the cache refresh and the reuse approximation
/// `v_hat = x + delta`.
pub fn integrate(
    oracle: &dyn VelocityOracle,
    schedule: &Schedule,
    x0: Tensor1D,
    mut policy: Option<&mut dyn StepPolicy>,
    k_update: crate::policy::KUpdate,
    warmup: usize,
    base_steps: usize,
) -> Result<(Tensor1D, TrajectoryTrace)> {
    let total = schedule.steps();
    let evals_before = oracle.eval_count();
    let mut cache = CacheState::new();
    let mut state = LatentState::initial(x0);
    let mut rows = Vec::with_capacity(total);
    let mut refreshes_after_reuse = 0usize;

    for t in 0..total {
        let s = schedule.time(t);
        let dx_norm = match &cache.prev_x {
            Some(px) => Some(l1_mean(&state.x.sub(px)?)),
            None => None,
        };
        let probe = StepProbe { dx_norm, v_prev_norm: cache.prev_v.as_ref().map(l1_mean) };

        let (decision, reason) = match policy.as_deref_mut() {
            Some(p) => {
                let d = p.decide(t, total, &cache, &probe);
                let r = d.reason.into();
                (d, r)
            }
            None => (
                crate::policy::StepDecision {
                    action: Action::FullCompute,
                    reason: Reason::ThresholdExceeded,
                    epsilon: 0.0,
                    e_after: 0.0,
                },
                TraceReason::Scheduled,
            ),
        };

        let v = match decision.action {
            Action::FullCompute => {
                let v = oracle.evaluate(&state.x, s)?;
                if !v.is_finite() {
                    return Err(Error::non_finite(format!("oracle output at step {t}")));
                }
                if cache.prev_v_approx {
                    refreshes_after_reuse += 1;
                }
                update_k(k_update, warmup, t, &mut cache, &state.x, &v)?;
                cache.delta = Some(v.sub(&state.x)?);
                cache.ref_step = Some(t);
                cache.e_accum = 0.0;
                cache.second_last_full = cache.last_full.take();
                cache.last_full = Some((state.x.clone(), v.clone()));
                v
            }
            Action::Reuse => {
                let delta = cache
                    .delta
                    .as_ref()
                    .ok_or_else(|| Error::contract(format!("reuse at step {t} with no cache")))?;
                cache.e_accum = decision.e_after;
                state.x.add(delta)?
            }
        };

        rows.push(TraceRow {
            t,
            s,
            action: decision.action,
            reason,
            x_norm: l1_mean(&state.x).value(),
            v_norm: l1_mean(&v).value(),
            k: if t >= 1 { Some(cache.k) } else { None },
            epsilon: decision.epsilon,
            e_accum: cache.e_accum,
            approx: decision.action == Action::Reuse,
        });

        if let Some(p) = policy.as_deref_mut() {
            match decision.action {
                Action::FullCompute => p.on_full_compute(t, &state.x, &v),
                Action::Reuse => p.on_reuse(t, &state.x, &v),
            }
        }

        cache.prev_x = Some(state.x.clone());
        cache.prev_v = Some(v.clone());
        cache.prev_v_approx = decision.action == Action::Reuse;

        state = euler_step(&state, &v, schedule)?;
        if !state.x.is_finite() {
            return Err(Error::non_finite(format!("state after step {t}")));
        }
    }

    let trace = TrajectoryTrace {
        rows,
        final_x: state.x.clone(),
        eval_count: oracle.eval_count() - evals_before,
        base_steps,
        refreshes_after_reuse,
    };
    Ok((state.x, trace))
}

/// Evaluates the oracle at every step; the trusted reference run.
pub fn run_full(config: &RunConfig) -> Result<(Tensor1D, TrajectoryTrace)> {
    config.validate()?;
    let oracle = config.resolve_oracle()?;
    let schedule = config.schedule()?;
    let x0 = config.initial_sample(&oracle)?;
    integrate(
        &oracle,
        &schedule,
        x0,
        None,
        crate::policy::KUpdate::Local,
        1,
        config.steps,
    )
}

/// Runs the configured policy. Step-reduction builds a shortened uniform
/// schedule over the same span and computes every step of it; all other
/// variants run the full schedule with per-step decisions.
pub fn run_cached(config: &RunConfig) -> Result<(Tensor1D, TrajectoryTrace)> {
    config.validate()?;
    let oracle = config.resolve_oracle()?;
    let x0 = config.initial_sample(&oracle)?;

    if let PolicyConfig::StepReduction { fraction } = config.policy {
        let raw = fraction * config.steps as f64;
        let reduced = ceil_with_tolerance(raw);
        if reduced < 2 {
            return Err(Error::config(format!(
                "step fraction {fraction} leaves fewer than 2 of {} steps",
                config.steps
            )));
        }
        let schedule = Schedule::uniform(reduced, config.delta_end)?;
        return integrate(
            &oracle,
            &schedule,
            x0,
            None,
            crate::policy::KUpdate::Local,
            1,
            config.steps,
        );
    }

    let schedule = config.schedule()?;
    let mut policy = config.policy.build()?;
    let warmup = config.policy.warmup().unwrap_or(1);
    integrate(
        &oracle,
        &schedule,
        x0,
        Some(policy.as_mut()),
        config.policy.k_update(),
        warmup,
        config.steps,
    )
}

/// Ceiling that forgives float round-off just above an integer.
fn ceil_with_tolerance(raw: f64) -> usize {
    let nearest = raw.round();
    if (raw - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        raw.ceil() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AffineField, AffineOracle};
    use crate::policy::KUpdate;

    fn t(v: &[f64]) -> Tensor1D {
        Tensor1D::new(v.to_vec()).unwrap()
    }

    fn easy(tau: f64, warmup: usize) -> PolicyConfig {
        PolicyConfig::EasyCache { tau, warmup, k_update: KUpdate::Local }
    }

    fn cfg(field: &str, steps: usize, seed: u64, policy: PolicyConfig) -> RunConfig {
        RunConfig {
            field: field.into(),
            dim: None,
            steps,
            delta_end: DEFAULT_DELTA_END,
            seed,
            policy,
        }
    }

    #[test]
    fn constant_field_hand_rollout() {
        // v = 1 everywhere, two steps of width 0.49: 0 -> 0.49 -> 0.98.
        let oracle = AffineOracle::new(AffineField::new(0.0, t(&[1.0])));
        let schedule = Schedule::uniform(2, 0.02).unwrap();
        let (x, trace) =
            integrate(&oracle, &schedule, t(&[0.0]), None, KUpdate::Local, 1, 2).unwrap();
        assert!((x.values()[0] - 0.98).abs() < 1e-15);
        assert_eq!(trace.eval_count, 2);
        assert_eq!(trace.rows[0].x_norm, 0.0);
        assert!((trace.rows[1].x_norm - 0.49).abs() < 1e-15);
    }

    #[test]
    fn full_run_evaluates_every_step() {
        for field in ["two-point-1d", "gauss-grid-2d", "digits-16x16"] {
            let c = cfg(field, 20, 3, easy(5.0, 4));
            let (_, trace) = run_full(&c).unwrap();
            assert_eq!(trace.eval_count, 20);
            assert_eq!(trace.full_compute_steps(), 20);
            assert_eq!(step_speedup(&trace), 1.0);
        }
    }

    #[test]
    fn single_anchor_rollout_matches_analytic_form() {
        // For one anchor the velocity is constant along the exact path, so
        // Euler reproduces x_T = (1 - s_T) x0 + s_T y up to round-off.
        use crate::fields::{MixtureFlowField, MixtureOracle};
        let y = t(&[1.5, -2.0, 0.25]);
        let field = MixtureFlowField::new(vec![y.clone()], vec![1.0]).unwrap();
        let oracle = MixtureOracle::new(field);
        let schedule = Schedule::uniform(50, 0.02).unwrap();
        let x0 = sample_initial(3, 9).unwrap();
        let (x, _) =
            integrate(&oracle, &schedule, x0.clone(), None, KUpdate::Local, 1, 50).unwrap();
        let s_t = schedule.time(50);
        for i in 0..3 {
            let expect = (1.0 - s_t) * x0.values()[i] + s_t * y.values()[i];
            assert!(
                (x.values()[i] - expect).abs() <= 1e-9,
                "component {i}: {} vs {expect}",
                x.values()[i]
            );
        }
    }

    #[test]
    fn zero_tau_matches_full_run_bitwise() {
        let base = cfg("two-point-1d", 30, 0, easy(0.0, 2));
        let (x_full, tr_full) = run_full(&base).unwrap();
        let (x_cached, tr_cached) = run_cached(&base).unwrap();
        assert_eq!(x_full.values(), x_cached.values());
        assert_eq!(tr_cached.eval_count, 30);
        assert_eq!(step_speedup(&tr_cached), 1.0);
        assert_eq!(tr_full.eval_count, tr_cached.eval_count);
    }

    #[test]
    fn full_warmup_matches_full_run_bitwise() {
        let base = cfg("gauss-grid-2d", 25, 1, easy(5.0, 25));
        let (x_full, _) = run_full(&base).unwrap();
        let (x_cached, trace) = run_cached(&base).unwrap();
        assert_eq!(x_full.values(), x_cached.values());
        assert_eq!(trace.eval_count, 25);
    }

    #[test]
    fn reuse_applies_cached_vector_exactly() {
        // Replicate the loop by hand, applying v_hat = x + delta with the
        // delta recorded at the preceding full computation, and demand the
        // engine's trace matches bitwise on every step.
        let c = cfg("digits-16x16", 40, 2, easy(5.0, 10));
        let (x_engine, trace) = run_cached(&c).unwrap();
        assert!(trace.eval_count < 40, "expected some reuse");

        let oracle = c.resolve_oracle().unwrap();
        let schedule = c.schedule().unwrap();
        let mut policy = c.policy.build().unwrap();
        let x0 = c.initial_sample(&oracle).unwrap();
        let warmup = c.policy.warmup().unwrap();
        let mut cache = CacheState::new();
        let mut state = LatentState::initial(x0);
        for t in 0..40 {
            let s = schedule.time(t);
            let dx_norm = cache.prev_x.as_ref().map(|px| l1_mean(&state.x.sub(px).unwrap()));
            let probe = StepProbe { dx_norm, v_prev_norm: cache.prev_v.as_ref().map(l1_mean) };
            let d = policy.decide(t, 40, &cache, &probe);
            assert_eq!(d.action, trace.rows[t].action, "step {t}");
            let v = match d.action {
                Action::FullCompute => {
                    let v = oracle.evaluate(&state.x, s).unwrap();
                    update_k(KUpdate::Local, warmup, t, &mut cache, &state.x, &v).unwrap();
                    cache.delta = Some(v.sub(&state.x).unwrap());
                    cache.e_accum = 0.0;
                    v
                }
                Action::Reuse => {
                    cache.e_accum = d.e_after;
                    state.x.add(cache.delta.as_ref().unwrap()).unwrap()
                }
            };
            assert_eq!(l1_mean(&v).value(), trace.rows[t].v_norm, "v_norm at step {t}");
            assert_eq!(cache.e_accum, trace.rows[t].e_accum, "E at step {t}");
            match d.action {
                Action::FullCompute => policy.on_full_compute(t, &state.x, &v),
                Action::Reuse => policy.on_reuse(t, &state.x, &v),
            }
            cache.prev_x = Some(state.x.clone());
            cache.prev_v = Some(v.clone());
            cache.prev_v_approx = d.action == Action::Reuse;
            state = euler_step(&state, &v, &schedule).unwrap();
        }
        assert_eq!(state.x.values(), x_engine.values());
    }

    #[test]
    fn trace_invariants_hold() {
        let c = cfg("digits-16x16", 50, 5, easy(5.0, 10));
        let (_, trace) = run_cached(&c).unwrap();
        assert_eq!(trace.full_compute_steps() as u64, trace.eval_count);
        assert_eq!(trace.rows.len(), 50);
        for row in &trace.rows {
            if row.action == Action::FullCompute {
                assert_eq!(row.e_accum, 0.0, "E must reset at step {}", row.t);
            }
            assert!(row.epsilon >= 0.0);
        }
        // decisions partition the steps
        let reused = trace.rows.iter().filter(|r| r.action == Action::Reuse).count();
        assert_eq!(reused + trace.full_compute_steps(), 50);
    }

    #[test]
    fn determinism_across_repeats() {
        let c = cfg("digits-16x16", 30, 7, easy(5.0, 5));
        let (x1, t1) = run_cached(&c).unwrap();
        let (x2, t2) = run_cached(&c).unwrap();
        assert_eq!(x1.values(), x2.values());
        assert_eq!(t1.rows, t2.rows);
    }

    #[test]
    fn step_reduction_runs_shortened_schedule() {
        let c = cfg("two-point-1d", 50, 0, PolicyConfig::StepReduction { fraction: 0.42 });
        let (_, trace) = run_cached(&c).unwrap();
        assert_eq!(trace.rows.len(), 21);
        assert_eq!(trace.eval_count, 21);
        assert_eq!(trace.base_steps, 50);
        assert!((step_speedup(&trace) - 50.0 / 21.0).abs() < 1e-12);
        // fraction 0.4 must give exactly 20 steps despite float round-off
        let c2 = cfg("two-point-1d", 50, 0, PolicyConfig::StepReduction { fraction: 0.4 });
        let (_, tr2) = run_cached(&c2).unwrap();
        assert_eq!(tr2.rows.len(), 20);
    }

    #[test]
    fn unknown_field_is_config_error() {
        let c = cfg("nope-not-real", 10, 0, easy(5.0, 2));
        match run_full(&c) {
            Err(Error::Config(msg)) => assert!(msg.contains("nope-not-real")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn speedup_counts() {
        let c = cfg("two-point-1d", 50, 0, PolicyConfig::NoRecompute { warm: 20 });
        let (_, trace) = run_cached(&c).unwrap();
        assert_eq!(trace.eval_count, 21);
        assert!((step_speedup(&trace) - 50.0 / 21.0).abs() < 1e-12);
    }
}
