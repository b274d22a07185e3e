//! Runtime-adaptive feature caching for iterative ODE-based samplers.
//!
//! An iterative sampler spends almost all of its time evaluating an
//! expensive velocity model once per step. This crate implements a
//! controller that monitors the relative transformation rate between
//! consecutive steps, estimates the percent output change each step would
//! introduce, accumulates those estimates, and reuses a cached
//! transformation vector (`v_hat = x + delta`) whenever the accumulated
//! deviation stays below a tolerance. Warm-up steps and the final step
//! are always fully computed.
//!
//! The crate ships exact closed-form velocity fields (a rectified-flow
//! mixture field and affine fields) as stand-ins for the expensive model,
//! baseline reuse policies for comparison, PSNR/SSIM/MAE fidelity
//! metrics, and a benchmark harness with a CLI (`run`, `sweep`, `trace`,
//! `presets`).
//!
//! Randomness is fully deterministic: ChaCha8 keyed by the user seed,
//! uniforms from the top 53 bits, normals by Box-Muller (see [`rng`]).

pub mod engine;
pub mod error;
pub mod fields;
pub mod harness;
pub mod metrics;
pub mod policy;
pub mod presets;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use engine::{run_cached, run_full, step_speedup, RunConfig, TrajectoryTrace};
pub use error::{Error, Result};
pub use fields::{sample_initial, AffineField, MixtureFlowField, VelocityOracle};
pub use harness::{execute_run, RunReport, SweepSpec};
pub use metrics::{fidelity, mae, psnr, ssim, FidelityReport};
pub use policy::{
    accumulate, easycache_decide, local_stability_indicator, replay_skip_set, transform_rate,
    CacheState, KUpdate, PolicyConfig, StepDecision, StepPolicy,
};
pub use schedule::{euler_step, LatentState, Schedule};
pub use tensor::{l1_mean, NormStat, Tensor1D};
