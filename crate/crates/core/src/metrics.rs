//! Fidelity metrics between cached and full outputs, plus trace summaries.

use serde::{Deserialize, Serialize};

use crate::engine::{TraceRow, TrajectoryTrace};
use crate::error::{Error, Result};
use crate::policy::Action;
use crate::tensor::{l1_mean, Tensor1D};

/// PSNR is capped here when the error vanishes, keeping reports numeric.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Default side length of the uniform SSIM window.
pub const SSIM_WINDOW: usize = 8;

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Fidelity of a test output against a reference output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub psnr_db: f64,
    /// Absent for runs without grid shape; never faked on a 1 x d reshape.
    pub ssim: Option<f64>,
    pub mae: f64,
    /// max(ref) - min(ref), the MAX used by the PSNR formula.
    pub dynamic_range: f64,
}

fn check_same_len(reference: &Tensor1D, test: &Tensor1D) -> Result<()> {
    if reference.len() != test.len() {
        return Err(Error::contract(format!(
            "length mismatch: {} vs {}",
            reference.len(),
            test.len()
        )));
    }
    Ok(())
}

fn dynamic_range(reference: &Tensor1D) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in reference.values() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    hi - lo
}

/// Peak signal-to-noise ratio in dB with MAX taken from the reference:
/// `10 log10(MAX^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &Tensor1D, test: &Tensor1D) -> Result<f64> {
    check_same_len(reference, test)?;
    let n = reference.len() as f64;
    let mse: f64 = reference
        .values()
        .iter()
        .zip(test.values())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    let max = dynamic_range(reference);
    if max <= 0.0 {
        return Err(Error::contract(
            "constant reference with nonzero error has no PSNR",
        ));
    }
    Ok((10.0 * (max * max / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean absolute error.
pub fn mae(reference: &Tensor1D, test: &Tensor1D) -> Result<f64> {
    Ok(l1_mean(&reference.sub(test)?).value())
}

/// Mean local structural similarity over uniform `window x window`
/// patches at stride 1, with K1 = 0.01, K2 = 0.03, and L the dynamic
/// range of the reference. Moments use the unbiased (n - 1) estimator.
pub fn ssim_windowed(reference: &Tensor1D, test: &Tensor1D, window: usize) -> Result<f64> {
    check_same_len(reference, test)?;
    let (w, h) = reference
        .grid()
        .ok_or_else(|| Error::config("SSIM needs grid-shaped tensors"))?;
    if test.grid() != Some((w, h)) {
        return Err(Error::contract("test grid shape differs from reference"));
    }
    if window < 2 {
        return Err(Error::config("SSIM window must be at least 2"));
    }
    if w < window || h < window {
        return Err(Error::config(format!(
            "grid {w}x{h} smaller than {window}x{window} window"
        )));
    }
    let l = dynamic_range(reference);
    if l <= 0.0 {
        return Err(Error::contract("constant reference has no dynamic range"));
    }
    let c1 = (SSIM_K1 * l) * (SSIM_K1 * l);
    let c2 = (SSIM_K2 * l) * (SSIM_K2 * l);

    // Summed-area tables over x, y, x^2, y^2, xy.
    let sat = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut table = vec![0.0; (w + 1) * (h + 1)];
        for row in 0..h {
            let mut acc = 0.0;
            for col in 0..w {
                acc += f(row * w + col);
                table[(row + 1) * (w + 1) + col + 1] = table[row * (w + 1) + col + 1] + acc;
            }
        }
        table
    };
    let xs = reference.values();
    let ys = test.values();
    let sx = sat(&|i| xs[i]);
    let sy = sat(&|i| ys[i]);
    let sxx = sat(&|i| xs[i] * xs[i]);
    let syy = sat(&|i| ys[i] * ys[i]);
    let sxy = sat(&|i| xs[i] * ys[i]);
    let box_sum = |t: &[f64], r0: usize, c0: usize| -> f64 {
        let (r1, c1) = (r0 + window, c0 + window);
        t[r1 * (w + 1) + c1] - t[r0 * (w + 1) + c1] - t[r1 * (w + 1) + c0] + t[r0 * (w + 1) + c0]
    };

    let n = (window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=(h - window) {
        for c0 in 0..=(w - window) {
            let mx = box_sum(&sx, r0, c0) / n;
            let my = box_sum(&sy, r0, c0) / n;
            let vx = (box_sum(&sxx, r0, c0) - n * mx * mx) / (n - 1.0);
            let vy = (box_sum(&syy, r0, c0) - n * my * my) / (n - 1.0);
            let cov = (box_sum(&sxy, r0, c0) - n * mx * my) / (n - 1.0);
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM with the default window.
pub fn ssim(reference: &Tensor1D, test: &Tensor1D) -> Result<f64> {
    ssim_windowed(reference, test, SSIM_WINDOW)
}

/// Builds the full fidelity record; SSIM is reported only when the
/// tensors carry a grid shape large enough for the window.
///
/// A reference with zero dynamic range (single-element or constant) has
/// no MAX for the PSNR formula; reports fall back to the reference's mean
/// absolute value as the scale so scalar runs stay numeric.
pub fn fidelity(reference: &Tensor1D, test: &Tensor1D) -> Result<FidelityReport> {
    let psnr_db = match psnr(reference, test) {
        Ok(db) => db,
        Err(Error::Contract(_)) if dynamic_range(reference) <= 0.0 => {
            let scale = l1_mean(reference).value();
            if scale > 0.0 {
                let n = reference.len() as f64;
                let mse: f64 = reference
                    .values()
                    .iter()
                    .zip(test.values())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / n;
                (10.0 * (scale * scale / mse).log10()).min(PSNR_CAP_DB)
            } else {
                0.0
            }
        }
        Err(e) => return Err(e),
    };
    let mae = mae(reference, test)?;
    let ssim = match reference.grid() {
        Some((w, h)) if w >= SSIM_WINDOW && h >= SSIM_WINDOW => {
            Some(ssim_windowed(reference, test, SSIM_WINDOW)?)
        }
        _ => None,
    };
    Ok(FidelityReport { psnr_db, ssim, mae, dynamic_range: dynamic_range(reference) })
}

/// Phase summaries of a recorded trace: rate mean and coefficient of
/// variation over the first fifth and the last half of the run, an
/// indicator histogram, and the lengths of consecutive-reuse runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub k_mean_first_fifth: f64,
    pub k_cv_first_fifth: f64,
    pub k_mean_last_half: f64,
    pub k_cv_last_half: f64,
    pub epsilon_histogram: Vec<usize>,
    pub reuse_run_lengths: Vec<usize>,
}

fn mean_and_cv(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let cv = if mean.abs() > 0.0 {
        std / mean.abs()
    } else if std > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    (mean, cv)
}

fn k_values(rows: &[TraceRow]) -> Vec<f64> {
    rows.iter().filter_map(|r| r.k).collect()
}

pub fn trace_stats(trace: &TrajectoryTrace) -> TraceStats {
    let rows = &trace.rows;
    let total = rows.len();
    let first = &rows[..total.div_ceil(5)];
    let last = &rows[total / 2..];
    let (k_mean_first_fifth, k_cv_first_fifth) = mean_and_cv(&k_values(first));
    let (k_mean_last_half, k_cv_last_half) = mean_and_cv(&k_values(last));

    let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let max_eps = eps.iter().cloned().fold(0.0f64, f64::max);
    let mut epsilon_histogram = vec![0usize; 10];
    for &e in &eps {
        let bin = if max_eps > 0.0 {
            (((e / max_eps) * 10.0) as usize).min(9)
        } else {
            0
        };
        epsilon_histogram[bin] += 1;
    }

    let mut reuse_run_lengths = Vec::new();
    let mut run = 0usize;
    for row in rows {
        match row.action {
            Action::Reuse => run += 1,
            Action::FullCompute => {
                if run > 0 {
                    reuse_run_lengths.push(run);
                    run = 0;
                }
            }
        }
    }
    if run > 0 {
        reuse_run_lengths.push(run);
    }

    TraceStats {
        k_mean_first_fifth,
        k_cv_first_fifth,
        k_mean_last_half,
        k_cv_last_half,
        epsilon_histogram,
        reuse_run_lengths,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor1D {
        Tensor1D::new(v.to_vec()).unwrap()
    }

    #[test]
    fn psnr_identical_caps() {
        let a = t(&[0.0, 1.0, 2.0]);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
    }

    #[test]
    fn psnr_unit_shift_on_unit_range() {
        // ref in {0, 1}, test = ref + 1: MAX = 1, MSE = 1 -> 0 dB.
        let reference = t(&[0.0, 1.0, 0.0, 1.0]);
        let test = t(&[1.0, 2.0, 1.0, 2.0]);
        assert!((psnr(&reference, &test).unwrap() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_hand_arithmetic() {
        // MAX = 2, MSE = 0.5 -> 10 log10(8) ~ 9.0309 dB.
        let reference = t(&[0.0, 2.0]);
        let test = t(&[0.0, 1.0]);
        let got = psnr(&reference, &test).unwrap();
        assert!((got - 10.0 * 8.0f64.log10()).abs() < 1e-12);
        assert!((got - 9.030899869919).abs() < 1e-6);
    }

    #[test]
    fn psnr_constant_reference_rejected() {
        let reference = t(&[1.0, 1.0]);
        let test = t(&[1.0, 2.0]);
        assert!(psnr(&reference, &test).is_err());
        // ...but a constant reference with zero error still caps.
        assert_eq!(psnr(&reference, &reference).unwrap(), 99.0);
    }

    fn noise_grid(side: usize, seed: u64, scale: f64) -> Tensor1D {
        let mut rng = DetRng::seed_from_u64(seed);
        let v: Vec<f64> = (0..side * side).map(|_| scale * rng.standard_normal()).collect();
        Tensor1D::new_grid(v, side, side).unwrap()
    }

    #[test]
    fn ssim_self_is_one() {
        let g = noise_grid(16, 3, 1.0);
        assert!((ssim(&g, &g).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_anticorrelated_checkerboard_nonpositive() {
        // Checkerboard has exactly zero mean in every 8x8 window, so the
        // negated image flips the covariance term and SSIM lands <= 0.
        let side = 16;
        let v: Vec<f64> = (0..side * side)
            .map(|i| {
                let (r, c) = (i / side, i % side);
                if (r + c) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        let reference = Tensor1D::new_grid(v.clone(), side, side).unwrap();
        let negated =
            Tensor1D::new_grid(v.iter().map(|x| -x + 0.25).collect(), side, side).unwrap();
        let got = ssim(&reference, &negated).unwrap();
        assert!(got <= 0.0, "ssim = {got}");
    }

    #[test]
    fn ssim_requires_grid_and_size() {
        let flat = t(&[0.0; 64]);
        assert!(matches!(ssim(&flat, &flat), Err(Error::Config(_))));
        let small = Tensor1D::new_grid(vec![0.5, 1.0, 0.25, 0.0], 2, 2).unwrap();
        assert!(matches!(ssim(&small, &small), Err(Error::Config(_))));
    }

    /// Direct per-window evaluation of the SSIM definition; the slow
    /// second route the fast implementation is checked against.
    fn ssim_direct(reference: &Tensor1D, test: &Tensor1D, window: usize) -> f64 {
        let (w, h) = reference.grid().unwrap();
        let l = {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in reference.values() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            hi - lo
        };
        let c1 = (0.01 * l) * (0.01 * l);
        let c2 = (0.03 * l) * (0.03 * l);
        let n = (window * window) as f64;
        let mut total = 0.0;
        let mut count = 0;
        for r0 in 0..=(h - window) {
            for c0 in 0..=(w - window) {
                let mut sx = 0.0;
                let mut sy = 0.0;
                for r in r0..r0 + window {
                    for c in c0..c0 + window {
                        sx += reference.values()[r * w + c];
                        sy += test.values()[r * w + c];
                    }
                }
                let mx = sx / n;
                let my = sy / n;
                let mut vx = 0.0;
                let mut vy = 0.0;
                let mut cov = 0.0;
                for r in r0..r0 + window {
                    for c in c0..c0 + window {
                        let dx = reference.values()[r * w + c] - mx;
                        let dy = test.values()[r * w + c] - my;
                        vx += dx * dx;
                        vy += dy * dy;
                        cov += dx * dy;
                    }
                }
                vx /= n - 1.0;
                vy /= n - 1.0;
                cov /= n - 1.0;
                total += (2.0 * mx * my + c1) * (2.0 * cov + c2)
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_direct_summation() {
        for seed in 0..20u64 {
            let reference = noise_grid(16, 1000 + seed, 1.0);
            let noise = noise_grid(16, 2000 + seed, 0.1);
            let test = reference.add(&noise).unwrap();
            let fast = ssim(&reference, &test).unwrap();
            let slow = ssim_direct(&reference, &test, SSIM_WINDOW);
            assert!((fast - slow).abs() <= 1e-9, "seed {seed}: {fast} vs {slow}");
        }
    }

    #[test]
    fn mae_basics() {
        let a = t(&[0.0, 1.0]);
        let b = t(&[1.0, 3.0]);
        assert_eq!(mae(&a, &b).unwrap(), 1.5);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn fidelity_report_identity() {
        let g = noise_grid(16, 5, 1.0);
        let rep = fidelity(&g, &g).unwrap();
        assert_eq!(rep.psnr_db, 99.0);
        assert_eq!(rep.ssim, Some(1.0));
        assert_eq!(rep.mae, 0.0);
        // non-grid input: SSIM absent
        let flat = t(&[1.0, 2.0, 3.0]);
        let rep = fidelity(&flat, &flat).unwrap();
        assert!(rep.ssim.is_none());
    }

    proptest! {
        // |SSIM| <= 1 on random pairs.
        #[test]
        fn ssim_bounded(seed_a in 0u64..200, seed_b in 200u64..400, scale in 0.1f64..4.0) {
            let a = noise_grid(12, seed_a, 1.0);
            let b = noise_grid(12, seed_b, scale);
            let s = ssim(&a, &b).unwrap();
            prop_assert!(s.abs() <= 1.0 + 1e-12, "ssim = {s}");
        }

        // mae triangle inequality on random triples.
        #[test]
        fn mae_triangle(
            av in proptest::collection::vec(-5.0f64..5.0, 1..32),
            bv in proptest::collection::vec(-5.0f64..5.0, 32),
            cv in proptest::collection::vec(-5.0f64..5.0, 32),
        ) {
            let n = av.len();
            let a = Tensor1D::new(av).unwrap();
            let b = Tensor1D::new(bv[..n].to_vec()).unwrap();
            let c = Tensor1D::new(cv[..n].to_vec()).unwrap();
            let ac = mae(&a, &c).unwrap();
            let ab = mae(&a, &b).unwrap();
            let bc = mae(&b, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        // PSNR symmetry in the error but not in MAX: swapping arguments
        // changes only the dynamic range factor.
        #[test]
        fn psnr_uses_reference_range(
            seed in 0u64..100,
        ) {
            let a = noise_grid(8, seed, 1.0);
            let b = noise_grid(8, seed + 1000, 2.0);
            let pa = psnr(&a, &b).unwrap();
            let pb = psnr(&b, &a).unwrap();
            let ra = {
                let mut lo = f64::INFINITY; let mut hi = f64::NEG_INFINITY;
                for &v in a.values() { lo = lo.min(v); hi = hi.max(v); }
                hi - lo
            };
            let rb = {
                let mut lo = f64::INFINITY; let mut hi = f64::NEG_INFINITY;
                for &v in b.values() { lo = lo.min(v); hi = hi.max(v); }
                hi - lo
            };
            let expect = pa - 20.0 * (ra / rb).log10();
            prop_assert!((pb - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn trace_stats_shapes() {
        use crate::engine::{run_cached, run_full, RunConfig};
        use crate::policy::{KUpdate, PolicyConfig};
        let full_cfg = RunConfig {
            field: "two-point-1d".into(),
            dim: None,
            steps: 50,
            delta_end: 0.02,
            seed: 0,
            policy: PolicyConfig::EasyCache { tau: 5.0, warmup: 10, k_update: KUpdate::Local },
        };
        let (_, full) = run_full(&full_cfg).unwrap();
        let stats = trace_stats(&full);
        assert!(stats.reuse_run_lengths.is_empty(), "full run has no reuse runs");
        assert_eq!(stats.epsilon_histogram.iter().sum::<usize>(), 50);

        let (_, cached) = run_cached(&full_cfg).unwrap();
        let stats = trace_stats(&cached);
        let reused: usize = stats.reuse_run_lengths.iter().sum();
        assert_eq!(reused, 50 - cached.eval_count as usize);
    }

    #[test]
    fn constant_k_trace_has_zero_cv() {
        let rows: Vec<TraceRow> = (0..10)
            .map(|t| TraceRow {
                t,
                s: t as f64 / 10.0,
                action: Action::FullCompute,
                reason: crate::engine::TraceReason::Scheduled,
                x_norm: 1.0,
                v_norm: 1.0,
                k: if t >= 1 { Some(1.0) } else { None },
                epsilon: 0.0,
                e_accum: 0.0,
                approx: false,
            })
            .collect();
        let trace = TrajectoryTrace {
            rows,
            final_x: Tensor1D::new(vec![0.0]).unwrap(),
            eval_count: 10,
            base_steps: 10,
            refreshes_after_reuse: 0,
        };
        let stats = trace_stats(&trace);
        assert_eq!(stats.k_cv_last_half, 0.0);
        assert_eq!(stats.k_mean_last_half, 1.0);
    }
}
