//! Velocity-field oracles standing in for the expensive model.
//!
//! Every oracle is deterministic in `(x, s)` and counts its full
//! evaluations; the sampler's speedup is measured against that counter.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::tensor::Tensor1D;

/// The expensive model: maps a sample and a time to a velocity.
///
/// `evaluate` must be a pure function of `(x, s)`; the only mutation is
/// the evaluation counter, which is safe under concurrent increments.
pub trait VelocityOracle: Send + Sync {
    fn evaluate(&self, x: &Tensor1D, s: f64) -> Result<Tensor1D>;
    fn eval_count(&self) -> u64;
    fn dim(&self) -> usize;
}

/// Exact marginal velocity of a rectified-flow path toward a finite
/// anchor set: `v(x, s) = (ybar(x, s) - x) / (1 - s)` where `ybar` is the
/// posterior mean anchor under Gaussian likelihoods of scale `1 - s`.
#[derive(Debug, Clone)]
pub struct MixtureFlowField {
    anchors: Vec<Tensor1D>,
    priors: Vec<f64>,
}

pub struct MixtureOracle {
    field: MixtureFlowField,
    evals: AtomicU64,
}

impl MixtureFlowField {
    pub fn new(anchors: Vec<Tensor1D>, priors: Vec<f64>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::config("anchor set must not be empty"));
        }
        let dim = anchors[0].len();
        if anchors.iter().any(|a| a.len() != dim) {
            return Err(Error::config("anchors must share one length"));
        }
        if priors.len() != anchors.len() {
            return Err(Error::config("one prior weight per anchor required"));
        }
        if priors.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::config("prior weights must be finite and nonnegative"));
        }
        let total: f64 = priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("prior weights sum to {total}, expected 1")));
        }
        if !priors.iter().any(|p| *p > 0.0) {
            return Err(Error::config("at least one prior weight must be positive"));
        }
        Ok(MixtureFlowField { anchors, priors })
    }

    pub fn dim(&self) -> usize {
        self.anchors[0].len()
    }

    pub fn anchors(&self) -> &[Tensor1D] {
        &self.anchors
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    /// Posterior anchor weights at `(x, s)`: nonnegative, summing to 1.
    ///
    /// Computed in the log domain with max subtraction; as `s -> 1` the
    /// weights collapse to one-hot, which is the correct limit.
    pub fn posterior_weights(&self, x: &Tensor1D, s: f64) -> Result<Vec<f64>> {
        if !(0.0..1.0).contains(&s) {
            return Err(Error::domain(format!("time {s} outside [0, 1)")));
        }
        if x.len() != self.dim() {
            return Err(Error::contract(format!(
                "query length {} vs anchor length {}",
                x.len(),
                self.dim()
            )));
        }
        let scale = 2.0 * (1.0 - s) * (1.0 - s);
        let mut logw: Vec<f64> = Vec::with_capacity(self.anchors.len());
        for (anchor, &prior) in self.anchors.iter().zip(&self.priors) {
            let mut sq = 0.0;
            for (&xi, &yi) in x.values().iter().zip(anchor.values()) {
                let d = xi - s * yi;
                sq += d * d;
            }
            let lp = if prior > 0.0 { prior.ln() } else { f64::NEG_INFINITY };
            logw.push(lp - sq / scale);
        }
        let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = w.iter().sum();
        for wi in &mut w {
            *wi /= z;
        }
        Ok(w)
    }

    pub fn velocity(&self, x: &Tensor1D, s: f64) -> Result<Tensor1D> {
        let w = self.posterior_weights(x, s)?;
        let dim = self.dim();
        let mut ybar = vec![0.0; dim];
        for (anchor, wi) in self.anchors.iter().zip(&w) {
            for (acc, &yi) in ybar.iter_mut().zip(anchor.values()) {
                *acc += wi * yi;
            }
        }
        let inv = 1.0 / (1.0 - s);
        let v: Vec<f64> = ybar
            .iter()
            .zip(x.values())
            .map(|(&yb, &xi)| (yb - xi) * inv)
            .collect();
        Tensor1D::new(v)
    }
}

impl MixtureOracle {
    pub fn new(field: MixtureFlowField) -> Self {
        MixtureOracle { field, evals: AtomicU64::new(0) }
    }

    pub fn field(&self) -> &MixtureFlowField {
        &self.field
    }
}

impl VelocityOracle for MixtureOracle {
    fn evaluate(&self, x: &Tensor1D, s: f64) -> Result<Tensor1D> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.field.velocity(x, s)
    }

    fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    fn dim(&self) -> usize {
        self.field.dim()
    }
}

/// Time-independent affine field `v(x, s) = gain * x + bias`.
///
/// With `gain = 1` the transformation vector `v - x` is the constant
/// bias, which makes cached reuse exact; the degenerate case used to
/// separate controller error from approximation error.
#[derive(Debug, Clone)]
pub struct AffineField {
    pub gain: f64,
    pub bias: Tensor1D,
}

pub struct AffineOracle {
    field: AffineField,
    evals: AtomicU64,
}

impl AffineField {
    pub fn new(gain: f64, bias: Tensor1D) -> Self {
        AffineField { gain, bias }
    }

    pub fn velocity(&self, x: &Tensor1D, _s: f64) -> Result<Tensor1D> {
        if x.len() != self.bias.len() {
            return Err(Error::contract(format!(
                "query length {} vs bias length {}",
                x.len(),
                self.bias.len()
            )));
        }
        let v = x
            .values()
            .iter()
            .zip(self.bias.values())
            .map(|(&xi, &bi)| self.gain * xi + bi)
            .collect();
        Tensor1D::new(v)
    }
}

impl AffineOracle {
    pub fn new(field: AffineField) -> Self {
        AffineOracle { field, evals: AtomicU64::new(0) }
    }
}

impl VelocityOracle for AffineOracle {
    fn evaluate(&self, x: &Tensor1D, s: f64) -> Result<Tensor1D> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.field.velocity(x, s)
    }

    fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    fn dim(&self) -> usize {
        self.field.bias.len()
    }
}

/// Standard-normal initial sample from the seeded generator in [`crate::rng`].
pub fn sample_initial(dim: usize, seed: u64) -> Result<Tensor1D> {
    if dim < 1 {
        return Err(Error::config("sample dimension must be >= 1"));
    }
    let mut rng = DetRng::seed_from_u64(seed);
    Tensor1D::new(rng.fill_standard_normal(dim))
}

/// Same as [`sample_initial`] but tagged with a grid shape.
pub fn sample_initial_grid(width: usize, height: usize, seed: u64) -> Result<Tensor1D> {
    if width < 1 || height < 1 {
        return Err(Error::config("grid sides must be >= 1"));
    }
    let mut rng = DetRng::seed_from_u64(seed);
    Tensor1D::new_grid(rng.fill_standard_normal(width * height), width, height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor1D {
        Tensor1D::new(v.to_vec()).unwrap()
    }

    fn two_anchor(y: f64) -> MixtureFlowField {
        MixtureFlowField::new(vec![t(&[y]), t(&[-y])], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn single_anchor_closed_form() {
        let f = MixtureFlowField::new(vec![t(&[1.0])], vec![1.0]).unwrap();
        let v = f.velocity(&t(&[0.0]), 0.5).unwrap();
        assert!((v.values()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_anchors_cancel_at_origin() {
        let f = two_anchor(1.0);
        for s in [0.0, 0.3, 0.9, 0.99] {
            let v = f.velocity(&t(&[0.0]), s).unwrap();
            assert_eq!(v.values()[0], 0.0, "s = {s}");
        }
    }

    #[test]
    fn two_anchor_matches_direct_summation() {
        // Direct (non-log-domain) evaluation of both Gaussian weights.
        let f = two_anchor(1.0);
        let (x, s): (f64, f64) = (0.3, 0.9);
        let scale = 2.0 * (1.0 - s) * (1.0 - s);
        let g1 = 0.5 * (-(x - s).powi(2) / scale).exp();
        let g2 = 0.5 * (-(x + s).powi(2) / scale).exp();
        let ybar = (g1 * 1.0 + g2 * -1.0) / (g1 + g2);
        let expect = (ybar - x) / (1.0 - s);
        let got = f.velocity(&t(&[x]), s).unwrap().values()[0];
        assert!(
            (got - expect).abs() <= 1e-12 * expect.abs(),
            "got {got}, expect {expect}"
        );
    }

    #[test]
    fn time_domain_enforced() {
        let f = two_anchor(1.0);
        assert!(matches!(f.velocity(&t(&[0.0]), 1.0), Err(Error::Domain(_))));
        assert!(matches!(f.velocity(&t(&[0.0]), -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn length_mismatch_rejected() {
        let f = two_anchor(1.0);
        assert!(matches!(
            f.velocity(&t(&[0.0, 0.0]), 0.5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn posterior_collapses_to_dominant_anchor() {
        let f = two_anchor(1.0);
        // Very late, near the positive anchor: field ~ (1 - x)/(1 - s).
        let (x, s) = (0.9995, 0.9995);
        let got = f.velocity(&t(&[x]), s).unwrap().values()[0];
        let expect = (1.0 - x) / (1.0 - s);
        assert!((got - expect).abs() < 1e-9 * expect.abs().max(1.0));
        let w = f.posterior_weights(&t(&[x]), s).unwrap();
        assert!(w[0] > 1.0 - 1e-12 && w[1] < 1e-12);
    }

    #[test]
    fn affine_identity_plus_bias() {
        let f = AffineField::new(1.0, t(&[0.5]));
        let v = f.velocity(&t(&[2.0]), 0.3).unwrap();
        assert_eq!(v.values(), &[2.5]);
        // Delta = v - x is the bias for every x.
        for x in [-3.0, 0.0, 7.25] {
            let v = f.velocity(&t(&[x]), 0.1).unwrap();
            assert_eq!(v.values()[0] - x, 0.5);
        }
    }

    #[test]
    fn affine_constant_field() {
        let f = AffineField::new(0.0, t(&[4.25]));
        for x in [-1.0, 0.0, 9.0] {
            let v = f.velocity(&t(&[x]), 0.5).unwrap();
            assert_eq!(v.values(), &[4.25]);
        }
    }

    #[test]
    fn oracle_counts_every_evaluation() {
        let o = MixtureOracle::new(two_anchor(1.0));
        assert_eq!(o.eval_count(), 0);
        for i in 1..=5u64 {
            o.evaluate(&t(&[0.1]), 0.2).unwrap();
            assert_eq!(o.eval_count(), i);
        }
    }

    #[test]
    fn sample_initial_is_deterministic() {
        let a = sample_initial(4, 7).unwrap();
        let b = sample_initial(4, 7).unwrap();
        assert_eq!(a.values(), b.values());
        let c = sample_initial(4, 8).unwrap();
        assert_ne!(a.values(), c.values());
        assert!(matches!(sample_initial(0, 1), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn posterior_weights_form_a_distribution(
            xs in proptest::collection::vec(-5.0f64..5.0, 1..8),
            s in 0.0f64..0.999,
            k in 1usize..6,
            seed in 0u64..32,
        ) {
            let dim = xs.len();
            let mut rng = crate::rng::DetRng::seed_from_u64(seed);
            let anchors: Vec<Tensor1D> = (0..k)
                .map(|_| Tensor1D::new(rng.fill_standard_normal(dim)).unwrap())
                .collect();
            let priors = vec![1.0 / k as f64; k];
            let f = MixtureFlowField::new(anchors, priors).unwrap();
            let w = f.posterior_weights(&Tensor1D::new(xs).unwrap(), s).unwrap();
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().all(|wi| *wi >= 0.0));
        }

        // Single-anchor field equals (y - x)/(1 - s) exactly.
        #[test]
        fn single_anchor_exact(
            x in -10.0f64..10.0,
            y in -10.0f64..10.0,
            s in 0.0f64..0.999,
        ) {
            let f = MixtureFlowField::new(
                vec![Tensor1D::new(vec![y]).unwrap()],
                vec![1.0],
            ).unwrap();
            let got = f.velocity(&Tensor1D::new(vec![x]).unwrap(), s).unwrap().values()[0];
            let expect = (y - x) / (1.0 - s);
            let tol = 1e-12 * expect.abs().max(1.0);
            prop_assert!((got - expect).abs() <= tol);
        }
    }
}
