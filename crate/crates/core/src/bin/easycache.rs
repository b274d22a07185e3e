//! Benchmark CLI: single runs, parameter sweeps, trace export, and
//! preset listing.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use easycache::engine::{run_full, RunConfig};
use easycache::error::Error;
use easycache::harness::{
    execute_run, fmt_g, report_to_json, run_sweep, sweep_to_csv, sweep_to_json, trace_to_csv,
    write_text, SweepSpec,
};
use easycache::policy::{KUpdate, PolicyConfig};
use easycache::presets::{preset, PRESET_NAMES};
use easycache::schedule::DEFAULT_DELTA_END;

#[derive(Parser)]
#[command(
    name = "easycache",
    version,
    about = "Adaptive feature-cache benchmark harness for ODE samplers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one cached run, score it against the matched full run,
    /// and write report.json plus trace.csv.
    Run(RunArgs),
    /// Execute a sweep described by a JSON spec file.
    Sweep(SweepArgs),
    /// Export the per-step trace of a full (uncached) run.
    Trace(RunArgs),
    /// List the built-in anchor presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// JSON file with a complete run configuration; flags override fields.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Built-in anchor preset name.
    #[arg(long)]
    preset: Option<String>,

    /// Anchor set loaded from a JSON file.
    #[arg(long, conflicts_with = "preset")]
    field_json: Option<PathBuf>,

    /// Expected sample dimension (validated against the field).
    #[arg(long)]
    dim: Option<usize>,

    /// Number of integration steps.
    #[arg(long = "T")]
    steps: Option<usize>,

    /// Terminal time clamp; the schedule ends at 1 - delta_end.
    #[arg(long)]
    delta_end: Option<f64>,

    /// Seed for the initial sample.
    #[arg(long)]
    seed: Option<u64>,

    /// Policy variant.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,

    /// Tolerance threshold in percent (easycache, output-relative).
    #[arg(long)]
    tau: Option<f64>,

    /// Warm-up steps with mandatory full computation.
    #[arg(long = "R")]
    warmup: Option<usize>,

    /// Rate update strategy (easycache).
    #[arg(long, value_enum)]
    k_update: Option<KUpdateArg>,

    /// Full-compute interval (static).
    #[arg(long)]
    interval: Option<usize>,

    /// Reuse probability (probabilistic).
    #[arg(long)]
    p: Option<f64>,

    /// Warm prefix length (no-recompute).
    #[arg(long)]
    warm: Option<usize>,

    /// Retained step fraction (step-reduction).
    #[arg(long)]
    fraction: Option<f64>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,

    /// Table format for sweep output; reports stay JSON, traces CSV.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec JSON: {"base": <run config>, "axis": {...}, "seeds": [...]}.
    spec: PathBuf,

    /// Concurrent cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    #[arg(long, default_value = "out")]
    out_dir: PathBuf,

    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Easycache,
    Static,
    Probabilistic,
    OutputRelative,
    NoRecompute,
    StepReduction,
}

#[derive(Clone, Copy, ValueEnum)]
enum KUpdateArg {
    Local,
    Ema,
    Avg,
}

impl From<KUpdateArg> for KUpdate {
    fn from(k: KUpdateArg) -> Self {
        match k {
            KUpdateArg::Local => KUpdate::Local,
            KUpdateArg::Ema => KUpdate::Ema,
            KUpdateArg::Avg => KUpdate::Avg,
        }
    }
}

fn build_run_config(args: &RunArgs) -> Result<RunConfig, Error> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::config(format!("cannot read config {}: {e}", path.display()))
            })?;
            serde_json::from_str::<RunConfig>(&text)?
        }
        None => RunConfig {
            field: String::new(),
            dim: None,
            steps: 50,
            delta_end: DEFAULT_DELTA_END,
            seed: 0,
            policy: PolicyConfig::EasyCache { tau: 5.0, warmup: 10, k_update: KUpdate::Local },
        },
    };

    if let Some(name) = &args.preset {
        config.field = name.clone();
    } else if let Some(path) = &args.field_json {
        config.field = path.display().to_string();
    }
    if config.field.is_empty() {
        return Err(Error::config(
            "no field given: use --preset, --field-json, or --config",
        ));
    }
    if let Some(dim) = args.dim {
        config.dim = Some(dim);
    }
    if let Some(steps) = args.steps {
        config.steps = steps;
    }
    if let Some(delta_end) = args.delta_end {
        config.delta_end = delta_end;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }

    // Start from the config-file policy; --variant replaces it, the knob
    // flags then override individual fields.
    let (cur_tau, cur_warmup, cur_k) = match config.policy {
        PolicyConfig::EasyCache { tau, warmup, k_update } => (tau, warmup, k_update),
        _ => (5.0, 10, KUpdate::Local),
    };
    let tau = args.tau.unwrap_or(cur_tau);
    let warmup = args.warmup.unwrap_or(cur_warmup);
    let k_update = args.k_update.map(KUpdate::from).unwrap_or(cur_k);

    if let Some(variant) = args.variant {
        config.policy = match variant {
            VariantArg::Easycache => PolicyConfig::EasyCache { tau, warmup, k_update },
            VariantArg::Static => PolicyConfig::Static {
                interval: args.interval.unwrap_or(3),
                warmup,
            },
            VariantArg::Probabilistic => PolicyConfig::Probabilistic {
                p: args.p.unwrap_or(0.5),
                seed: config.seed,
                warmup,
            },
            VariantArg::OutputRelative => PolicyConfig::OutputRelative { tau, warmup },
            VariantArg::NoRecompute => PolicyConfig::NoRecompute {
                warm: args.warm.unwrap_or(20),
            },
            VariantArg::StepReduction => PolicyConfig::StepReduction {
                fraction: args.fraction.unwrap_or(0.5),
            },
        };
    } else if args.tau.is_some() || args.warmup.is_some() || args.k_update.is_some() {
        if let PolicyConfig::EasyCache { .. } = config.policy {
            config.policy = PolicyConfig::EasyCache { tau, warmup, k_update };
        } else if let PolicyConfig::OutputRelative { .. } = config.policy {
            config.policy = PolicyConfig::OutputRelative { tau, warmup };
        }
    }
    Ok(config)
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    let config = build_run_config(args)?;
    let (mut report, trace) = execute_run(&config)?;
    let trace_path = args.out_dir.join("trace.csv");
    write_text(&trace_path, &trace_to_csv(&trace))?;
    report.trace_path = Some(trace_path.display().to_string());
    let report_path = args.out_dir.join("report.json");
    write_text(&report_path, &report_to_json(&report)?)?;
    println!(
        "run {}: T={} evals={} speedup={} psnr={} ssim={} mae={} -> {}",
        report.run_id,
        config.steps,
        report.eval_count,
        fmt_g(report.step_speedup),
        fmt_g(report.fidelity.psnr_db),
        report.fidelity.ssim.map(fmt_g).unwrap_or_else(|| "-".into()),
        fmt_g(report.fidelity.mae),
        report_path.display(),
    );
    Ok(())
}

fn cmd_trace(args: &RunArgs) -> Result<(), Error> {
    let config = build_run_config(args)?;
    let (_, trace) = run_full(&config)?;
    let trace_path = args.out_dir.join("trace.csv");
    write_text(&trace_path, &trace_to_csv(&trace))?;
    println!(
        "trace {}-T{}-seed{}: {} steps -> {}",
        config.field,
        config.steps,
        config.seed,
        trace.rows.len(),
        trace_path.display(),
    );
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.spec).map_err(|e| {
        Error::config(format!("cannot read sweep spec {}: {e}", args.spec.display()))
    })?;
    let spec: SweepSpec = serde_json::from_str(&text)?;
    let rows = run_sweep(&spec, args.jobs)?;
    let (path, body) = match args.format {
        FormatArg::Csv => (args.out_dir.join("sweep.csv"), sweep_to_csv(&rows)),
        FormatArg::Json => (args.out_dir.join("sweep.json"), sweep_to_json(&rows)),
    };
    write_text(&path, &body)?;
    for row in rows.iter().filter(|r| r.seed.is_none()) {
        println!(
            "sweep {}: mean speedup={} psnr={}",
            row.axis_value,
            fmt_g(row.step_speedup),
            fmt_g(row.psnr_db),
        );
    }
    println!("table -> {}", path.display());
    Ok(())
}

fn cmd_presets() -> Result<(), Error> {
    for name in PRESET_NAMES {
        let field = preset(name)?;
        let grid = field.anchors()[0]
            .grid()
            .map(|(w, h)| format!("{w}x{h} grid"))
            .unwrap_or_else(|| "flat".into());
        println!(
            "{name}: K={} anchors, dim={} ({grid})",
            field.anchors().len(),
            field.dim(),
        );
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Contract(_) | Error::Domain(_) | Error::Json(_) => 2,
        Error::NonFinite(_) => 3,
        Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Trace(args) => cmd_trace(args),
        Command::Presets => cmd_presets(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
