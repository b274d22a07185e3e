//! Experiment orchestration: single runs with fidelity reports, parameter
//! sweeps, matched-speedup baseline comparison, and file export.
//!
//! Every file this module writes is UTF-8 with LF line endings and
//! `%.12g` numerics; repeated invocations are byte-identical except for
//! the wall-clock field in JSON reports.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{run_cached, run_full, step_speedup, RunConfig, TrajectoryTrace};
use crate::error::{Error, Result};
use crate::metrics::{fidelity, FidelityReport};
use crate::policy::{Action, KUpdate, PolicyConfig};

// ---------------------------------------------------------------------------
// %.12g formatting
// ---------------------------------------------------------------------------

/// Formats like C's `%.12g`: 12 significant digits, fixed or scientific
/// notation by exponent, trailing zeros stripped.
pub fn fmt_g(x: f64) -> String {
    const PREC: i32 = 12;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x < 0.0 { "-inf".into() } else { "inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    // Decimal exponent after rounding to PREC significant digits.
    let sci = format!("{:.*e}", (PREC - 1) as usize, x);
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if exp >= -4 && exp < PREC {
        let decimals = (PREC - 1 - exp).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        strip_trailing_zeros(&fixed)
    } else {
        let mantissa = strip_trailing_zeros(&sci[..sci.find('e').unwrap()]);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    }
}

fn strip_trailing_zeros(s: &str) -> String {
    if !s.contains('.') {
        return s.to_string();
    }
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    trimmed.to_string()
}

/// Rounds through the `%.12g` representation so JSON numbers match the
/// file-format convention.
pub fn round_g(x: f64) -> f64 {
    fmt_g(x).parse().unwrap_or(x)
}

// ---------------------------------------------------------------------------
// Run reports
// ---------------------------------------------------------------------------

/// One run's outcome: efficiency, fidelity against the matched full run,
/// and bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub config: RunConfig,
    pub step_speedup: f64,
    pub eval_count: u64,
    pub fidelity: FidelityReport,
    /// Full computations immediately following a reused step.
    pub refreshes_after_reuse: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
    /// Informational only; never used by any comparison.
    pub wall_clock_ms: f64,
}

fn run_id(config: &RunConfig) -> String {
    let field = config
        .field
        .rsplit('/')
        .next()
        .unwrap_or(&config.field)
        .trim_end_matches(".json");
    format!(
        "{}-T{}-seed{}-{}",
        field,
        config.steps,
        config.seed,
        config.policy.variant_name()
    )
}

/// Executes the cached run and a fresh matched full run, then scores the
/// cached output against the full one. The full run is always recomputed;
/// it is cheap at this scale and the only trusted reference.
pub fn execute_run(config: &RunConfig) -> Result<(RunReport, TrajectoryTrace)> {
    config.validate()?;
    let started = Instant::now();
    let (x_cached, trace) = run_cached(config)?;
    let (x_full, _) = run_full(config)?;
    let fid = fidelity(&x_full, &x_cached)?;
    let report = RunReport {
        run_id: run_id(config),
        config: config.clone(),
        step_speedup: round_g(step_speedup(&trace)),
        eval_count: trace.eval_count,
        fidelity: FidelityReport {
            psnr_db: round_g(fid.psnr_db),
            ssim: fid.ssim.map(round_g),
            mae: round_g(fid.mae),
            dynamic_range: round_g(fid.dynamic_range),
        },
        refreshes_after_reuse: trace.refreshes_after_reuse,
        trace_path: None,
        wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok((report, trace))
}

/// Serializes a trace as CSV: one row per step, `%.12g` numerics, empty
/// cell where the rate is not yet defined.
pub fn trace_to_csv(trace: &TrajectoryTrace) -> String {
    let mut out = String::from("t,s,decision,reason,x_norm,v_norm,k,epsilon,E,approx\n");
    for row in &trace.rows {
        let decision = match row.action {
            Action::FullCompute => "full",
            Action::Reuse => "reuse",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.t,
            fmt_g(row.s),
            decision,
            row.reason.as_str(),
            fmt_g(row.x_norm),
            fmt_g(row.v_norm),
            row.k.map(fmt_g).unwrap_or_default(),
            fmt_g(row.epsilon),
            fmt_g(row.e_accum),
            u8::from(row.approx),
        );
    }
    out
}

pub fn report_to_json(report: &RunReport) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    Ok(text)
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// The swept dimension; exactly one axis per sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Tau(Vec<f64>),
    Warmup(Vec<usize>),
    Variant(Vec<String>),
    KUpdate(Vec<KUpdate>),
}

#[derive(Debug, Serialize, Deserialize)]
struct AxisSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<Vec<f64>>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    warmup: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variant: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k_update: Option<Vec<KUpdate>>,
}

/// Sweep description: a base run, one axis, and the seed list.
#[derive(Debug, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: RunConfig,
    axis: AxisSpec,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn new(base: RunConfig, axis: SweepAxis, seeds: Vec<u64>) -> Self {
        let spec = match axis {
            SweepAxis::Tau(v) => AxisSpec { tau: Some(v), warmup: None, variant: None, k_update: None },
            SweepAxis::Warmup(v) => AxisSpec { tau: None, warmup: Some(v), variant: None, k_update: None },
            SweepAxis::Variant(v) => AxisSpec { tau: None, warmup: None, variant: Some(v), k_update: None },
            SweepAxis::KUpdate(v) => AxisSpec { tau: None, warmup: None, variant: None, k_update: Some(v) },
        };
        SweepSpec { base, axis: spec, seeds }
    }

    pub fn axis(&self) -> Result<SweepAxis> {
        let axes = [
            self.axis.tau.is_some(),
            self.axis.warmup.is_some(),
            self.axis.variant.is_some(),
            self.axis.k_update.is_some(),
        ];
        if axes.iter().filter(|b| **b).count() != 1 {
            return Err(Error::config("sweep axis must set exactly one of tau, R, variant, k_update"));
        }
        Ok(if let Some(v) = &self.axis.tau {
            SweepAxis::Tau(v.clone())
        } else if let Some(v) = &self.axis.warmup {
            SweepAxis::Warmup(v.clone())
        } else if let Some(v) = &self.axis.variant {
            SweepAxis::Variant(v.clone())
        } else {
            SweepAxis::KUpdate(self.axis.k_update.clone().unwrap())
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("sweep needs at least one seed"));
        }
        self.axis()?;
        Ok(())
    }
}

fn easycache_parts(policy: &PolicyConfig) -> Result<(f64, usize, KUpdate)> {
    match *policy {
        PolicyConfig::EasyCache { tau, warmup, k_update } => Ok((tau, warmup, k_update)),
        _ => Err(Error::config("this sweep axis requires an easycache base policy")),
    }
}

/// Short human-readable knob summary for table rows.
fn policy_params(policy: &PolicyConfig) -> String {
    match policy {
        PolicyConfig::EasyCache { tau, warmup, k_update } => {
            let k = match k_update {
                KUpdate::Local => "local",
                KUpdate::Ema => "ema",
                KUpdate::Avg => "avg",
            };
            format!("tau={} R={warmup} k={k}", fmt_g(*tau))
        }
        PolicyConfig::Static { interval, warmup } => format!("interval={interval} R={warmup}"),
        PolicyConfig::Probabilistic { p, warmup, .. } => {
            format!("p={} R={warmup}", fmt_g(*p))
        }
        PolicyConfig::OutputRelative { tau, warmup } => {
            format!("tau={} R={warmup}", fmt_g(*tau))
        }
        PolicyConfig::NoRecompute { warm } => format!("warm={warm}"),
        PolicyConfig::StepReduction { fraction } => format!("fraction={}", fmt_g(*fraction)),
    }
}

/// One sweep table entry; `seed` is `None` on per-configuration mean rows.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub axis_value: String,
    pub params: String,
    pub seed: Option<u64>,
    pub eval_count: f64,
    pub step_speedup: f64,
    pub psnr_db: f64,
    pub ssim: Option<f64>,
    pub mae: f64,
    pub error: Option<String>,
}

/// Mean step speedup of a configuration across seeds.
pub fn mean_speedup(config: &RunConfig, seeds: &[u64]) -> Result<f64> {
    let mut total = 0.0;
    for &seed in seeds {
        let mut c = config.clone();
        c.seed = seed;
        set_policy_seed(&mut c);
        let (_, trace) = run_cached(&c)?;
        total += step_speedup(&trace);
    }
    Ok(total / seeds.len() as f64)
}

/// Mean PSNR of a configuration across seeds, against matched full runs.
pub fn mean_psnr(config: &RunConfig, seeds: &[u64]) -> Result<f64> {
    let mut total = 0.0;
    for &seed in seeds {
        let mut c = config.clone();
        c.seed = seed;
        set_policy_seed(&mut c);
        let (report, _) = execute_run(&c)?;
        total += report.fidelity.psnr_db;
    }
    Ok(total / seeds.len() as f64)
}

/// The probabilistic baseline draws from its own stream; the harness keys
/// it to the run seed so sweep cells vary independently.
fn set_policy_seed(config: &mut RunConfig) {
    if let PolicyConfig::Probabilistic { seed, .. } = &mut config.policy {
        *seed = config.seed;
    }
}

/// Tunes a baseline's knob until its mean speedup over `seeds` matches
/// `target` as closely as the knob's granularity allows; continuous knobs
/// are bisected, integer knobs scanned around the analytic solution.
pub fn matched_baseline_config(
    base: &RunConfig,
    variant: &str,
    target: f64,
    seeds: &[u64],
) -> Result<RunConfig> {
    let steps = base.steps;
    let (tau, warmup, k_update) = easycache_parts(&base.policy)?;
    let mut config = base.clone();
    match variant {
        "easycache" => {
            config.policy = PolicyConfig::EasyCache { tau, warmup, k_update };
            Ok(config)
        }
        "static" => {
            let mut best: Option<(f64, usize)> = None;
            for interval in 1..=steps {
                let mut c = base.clone();
                c.policy = PolicyConfig::Static { interval, warmup };
                let s = mean_speedup(&c, seeds)?;
                let gap = (s - target).abs();
                if best.map_or(true, |(g, _)| gap < g) {
                    best = Some((gap, interval));
                }
            }
            let (_, interval) = best.unwrap();
            config.policy = PolicyConfig::Static { interval, warmup };
            Ok(config)
        }
        "probabilistic" => {
            let eval = |p: f64| -> Result<f64> {
                let mut c = base.clone();
                c.policy = PolicyConfig::Probabilistic { p, seed: 0, warmup };
                mean_speedup(&c, seeds)
            };
            let p = bisect_increasing(&eval, 0.0, 1.0, target, 48)?;
            config.policy = PolicyConfig::Probabilistic { p, seed: 0, warmup };
            Ok(config)
        }
        "output-relative" => {
            let eval = |tau_or: f64| -> Result<f64> {
                let mut c = base.clone();
                c.policy = PolicyConfig::OutputRelative { tau: tau_or, warmup };
                mean_speedup(&c, seeds)
            };
            let tau_or = bisect_increasing(&eval, 1e-3, 400.0, target, 48)?;
            config.policy = PolicyConfig::OutputRelative { tau: tau_or, warmup };
            Ok(config)
        }
        "no-recompute" => {
            // speedup = T / (warm + 1) exactly
            let ideal = (steps as f64 / target - 1.0).round() as i64;
            let mut best: Option<(f64, usize)> = None;
            for warm in [ideal - 1, ideal, ideal + 1] {
                if warm < 1 || warm as usize >= steps {
                    continue;
                }
                let s = steps as f64 / (warm as f64 + 1.0);
                let gap = (s - target).abs();
                if best.map_or(true, |(g, _)| gap < g) {
                    best = Some((gap, warm as usize));
                }
            }
            let (_, warm) = best.ok_or_else(|| {
                Error::config(format!("cannot match speedup {target} with no-recompute"))
            })?;
            config.policy = PolicyConfig::NoRecompute { warm };
            Ok(config)
        }
        "step-reduction" => {
            let reduced = ((steps as f64 / target).round() as usize).clamp(2, steps);
            config.policy = PolicyConfig::StepReduction { fraction: reduced as f64 / steps as f64 };
            Ok(config)
        }
        other => Err(Error::config(format!("unknown policy variant: {other}"))),
    }
}

/// Bisection on a nondecreasing map from knob to mean speedup.
fn bisect_increasing(
    eval: &dyn Fn(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    target: f64,
    iterations: usize,
) -> Result<f64> {
    if eval(hi)? <= target {
        return Ok(hi);
    }
    if eval(lo)? >= target {
        return Ok(lo);
    }
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Enumerates the sweep's cell configurations in deterministic order.
pub fn sweep_cells(spec: &SweepSpec) -> Result<Vec<(String, RunConfig)>> {
    spec.validate()?;
    let (tau, warmup, k_update) = easycache_parts(&spec.base.policy)?;
    let mut cells = Vec::new();
    match spec.axis()? {
        SweepAxis::Tau(values) => {
            for &v in &values {
                let mut c = spec.base.clone();
                c.policy = PolicyConfig::EasyCache { tau: v, warmup, k_update };
                cells.push((fmt_g(v), c));
            }
        }
        SweepAxis::Warmup(values) => {
            for &v in &values {
                let mut c = spec.base.clone();
                c.policy = PolicyConfig::EasyCache { tau, warmup: v, k_update };
                cells.push((v.to_string(), c));
            }
        }
        SweepAxis::KUpdate(values) => {
            for &v in &values {
                let mut c = spec.base.clone();
                c.policy = PolicyConfig::EasyCache { tau, warmup, k_update: v };
                let label = match v {
                    KUpdate::Local => "local",
                    KUpdate::Ema => "ema",
                    KUpdate::Avg => "avg",
                };
                cells.push((label.to_string(), c));
            }
        }
        SweepAxis::Variant(variants) => {
            let target = mean_speedup(&spec.base, &spec.seeds)?;
            for name in &variants {
                let c = matched_baseline_config(&spec.base, name, target, &spec.seeds)?;
                cells.push((name.clone(), c));
            }
        }
    }
    Ok(cells)
}

/// Runs the sweep: every (cell, seed) pair plus one mean row per cell.
/// Cells run concurrently up to `jobs`; output order is by cell index.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<Vec<SweepRow>> {
    let cells = sweep_cells(spec)?;
    let mut tasks: Vec<(usize, String, RunConfig)> = Vec::new();
    for (ci, (label, config)) in cells.iter().enumerate() {
        for &seed in &spec.seeds {
            let mut c = config.clone();
            c.seed = seed;
            set_policy_seed(&mut c);
            tasks.push((ci, label.clone(), c));
        }
    }

    let jobs = jobs.max(1);
    let results: Mutex<Vec<Option<std::result::Result<(RunReport, TrajectoryTrace), String>>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let outcome = execute_run(&tasks[i].2).map_err(|e| e.to_string());
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    let results = results.into_inner().unwrap();

    let mut rows = Vec::new();
    let per_cell = spec.seeds.len();
    for (ci, (label, config)) in cells.iter().enumerate() {
        let mut speedups = Vec::new();
        let mut evals = Vec::new();
        let mut psnrs = Vec::new();
        let mut ssims = Vec::new();
        let mut maes = Vec::new();
        for (si, &seed) in spec.seeds.iter().enumerate() {
            let idx = ci * per_cell + si;
            match results[idx].as_ref().expect("sweep cell not executed") {
                Ok((report, _)) => {
                    speedups.push(report.step_speedup);
                    evals.push(report.eval_count as f64);
                    psnrs.push(report.fidelity.psnr_db);
                    if let Some(s) = report.fidelity.ssim {
                        ssims.push(s);
                    }
                    maes.push(report.fidelity.mae);
                    rows.push(SweepRow {
                        axis_value: label.clone(),
                        params: policy_params(&report.config.policy),
                        seed: Some(seed),
                        eval_count: report.eval_count as f64,
                        step_speedup: report.step_speedup,
                        psnr_db: report.fidelity.psnr_db,
                        ssim: report.fidelity.ssim,
                        mae: report.fidelity.mae,
                        error: None,
                    });
                }
                Err(msg) => {
                    // A failing cell is recorded; the sweep continues.
                    rows.push(SweepRow {
                        axis_value: label.clone(),
                        params: policy_params(&config.policy),
                        seed: Some(seed),
                        eval_count: f64::NAN,
                        step_speedup: f64::NAN,
                        psnr_db: f64::NAN,
                        ssim: None,
                        mae: f64::NAN,
                        error: Some(msg.clone()),
                    });
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        rows.push(SweepRow {
            axis_value: label.clone(),
            params: policy_params(&config.policy),
            seed: None,
            eval_count: mean(&evals),
            step_speedup: mean(&speedups),
            psnr_db: mean(&psnrs),
            ssim: if ssims.len() == per_cell { Some(mean(&ssims)) } else { None },
            mae: mean(&maes),
            error: None,
        });
    }
    Ok(rows)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("axis_value,params,seed,eval_count,speedup,psnr_db,ssim,mae,error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.axis_value,
            r.params,
            r.seed.map(|s| s.to_string()).unwrap_or_else(|| "mean".into()),
            fmt_g(r.eval_count),
            fmt_g(r.step_speedup),
            fmt_g(r.psnr_db),
            r.ssim.map(fmt_g).unwrap_or_default(),
            fmt_g(r.mae),
            r.error.clone().unwrap_or_default(),
        );
    }
    out
}

pub fn sweep_to_json(rows: &[SweepRow]) -> String {
    let items: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "axis_value": r.axis_value,
                "params": r.params,
                "seed": r.seed,
                "eval_count": round_g(r.eval_count),
                "speedup": round_g(r.step_speedup),
                "psnr_db": round_g(r.psnr_db),
                "ssim": r.ssim.map(round_g),
                "mae": round_g(r.mae),
                "error": r.error,
            })
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&items).unwrap();
    text.push('\n');
    text
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text.as_bytes())?;
    Ok(())
}
