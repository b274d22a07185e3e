//! Integration time grid and the explicit Euler update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor1D;

/// Strictly increasing times `s_0 = 0 < s_1 < ... < s_T <= 1 - delta_end`.
///
/// The terminal clamp keeps the mixture field's `1/(1-s)` factor bounded;
/// clamping is the schedule's job so the velocity fields stay pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    times: Vec<f64>,
}

pub const DEFAULT_DELTA_END: f64 = 0.02;

impl Schedule {
    /// Uniform grid: `s_j = j * (1 - delta_end) / T` for `j = 0..=T`.
    pub fn uniform(steps: usize, delta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::config(format!("step count {steps} must be >= 2")));
        }
        if !(delta_end > 0.0 && delta_end < 0.5) {
            return Err(Error::config(format!(
                "delta_end {delta_end} must lie in (0, 0.5)"
            )));
        }
        let end = 1.0 - delta_end;
        let times = (0..=steps).map(|j| j as f64 * end / steps as f64).collect();
        Ok(Schedule { times })
    }

    /// Builds a schedule from explicit times; must start at 0, increase
    /// strictly, and stay at or below `1 - delta_end`.
    pub fn from_times(times: Vec<f64>, delta_end: f64) -> Result<Self> {
        if times.len() < 3 {
            return Err(Error::config("schedule needs at least two steps"));
        }
        if times[0] != 0.0 {
            return Err(Error::config("schedule must start at s_0 = 0"));
        }
        if !(delta_end > 0.0) {
            return Err(Error::config("delta_end must be positive"));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::config("schedule times must increase strictly"));
            }
        }
        if *times.last().unwrap() > 1.0 - delta_end {
            return Err(Error::config(format!(
                "final time {} exceeds 1 - delta_end = {}",
                times.last().unwrap(),
                1.0 - delta_end
            )));
        }
        Ok(Schedule { times })
    }

    /// Number of integration steps `T`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Time `s_j` for `j in 0..=T`.
    pub fn time(&self, j: usize) -> f64 {
        self.times[j]
    }

    /// Step width `ds_t = s_t - s_{t-1}` for `t in 1..=T`.
    pub fn dt(&self, t: usize) -> f64 {
        self.times[t] - self.times[t - 1]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

/// The evolving sample: position, step index, and continuous time.
#[derive(Debug, Clone)]
pub struct LatentState {
    pub x: Tensor1D,
    pub step: usize,
    pub time: f64,
}

impl LatentState {
    pub fn initial(x: Tensor1D) -> Self {
        LatentState { x, step: 0, time: 0.0 }
    }
}

/// One explicit Euler step: `x' = x + v * ds_{t+1}`, advancing `t` and `s`.
pub fn euler_step(state: &LatentState, v: &Tensor1D, schedule: &Schedule) -> Result<LatentState> {
    if state.step >= schedule.steps() {
        return Err(Error::contract(format!(
            "step {} is already at the end of a {}-step schedule",
            state.step,
            schedule.steps()
        )));
    }
    let next = state.step + 1;
    let x = state.x.add_scaled(v, schedule.dt(next))?;
    Ok(LatentState { x, step: next, time: schedule.time(next) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_two_steps() {
        let s = Schedule::uniform(2, 0.02).unwrap();
        assert_eq!(s.times(), &[0.0, 0.49, 0.98]);
    }

    #[test]
    fn uniform_fifty_steps_constant_width() {
        let s = Schedule::uniform(50, 0.02).unwrap();
        for t in 1..=50 {
            assert!((s.dt(t) - 0.0196).abs() < 1e-15, "dt({t}) = {}", s.dt(t));
        }
    }

    #[test]
    fn single_step_rejected() {
        assert!(matches!(Schedule::uniform(1, 0.02), Err(Error::Config(_))));
    }

    #[test]
    fn delta_end_range_enforced() {
        assert!(Schedule::uniform(10, 0.0).is_err());
        assert!(Schedule::uniform(10, 0.5).is_err());
        assert!(Schedule::uniform(10, 0.49).is_ok());
    }

    #[test]
    fn euler_direct_substitution() {
        let sched = Schedule::uniform(49, 0.02).unwrap();
        // dt(1) = 0.98/49 = 0.02
        let state = LatentState::initial(Tensor1D::new(vec![0.0]).unwrap());
        let v = Tensor1D::new(vec![1.0]).unwrap();
        let next = euler_step(&state, &v, &sched).unwrap();
        assert!((next.x.values()[0] - 0.02).abs() < 1e-16);
        assert_eq!(next.step, 1);
    }

    #[test]
    fn euler_zero_velocity_keeps_x() {
        let sched = Schedule::uniform(4, 0.02).unwrap();
        let state = LatentState::initial(Tensor1D::new(vec![1.5, -2.5]).unwrap());
        let v = Tensor1D::new(vec![0.0, 0.0]).unwrap();
        let next = euler_step(&state, &v, &sched).unwrap();
        assert_eq!(next.x.values(), state.x.values());
    }

    #[test]
    fn euler_exact_cancellation() {
        // ds = 1 exceeds any valid schedule span, so exercise the update
        // arithmetic directly: x + v with v = -x cancels exactly.
        let x = Tensor1D::new(vec![1.0, 2.0]).unwrap();
        let v = Tensor1D::new(vec![-1.0, -2.0]).unwrap();
        let got = x.add_scaled(&v, 1.0).unwrap();
        assert_eq!(got.values(), &[0.0, 0.0]);
    }

    #[test]
    fn from_times_rejects_non_monotone() {
        assert!(Schedule::from_times(vec![0.0, 0.5, 0.4], 0.02).is_err());
        assert!(Schedule::from_times(vec![0.1, 0.5, 0.9], 0.02).is_err());
        assert!(Schedule::from_times(vec![0.0, 0.5, 0.99], 0.02).is_err());
        assert!(Schedule::from_times(vec![0.0, 0.5, 0.98], 0.02).is_ok());
    }

    #[test]
    fn euler_length_mismatch() {
        let sched = Schedule::uniform(4, 0.02).unwrap();
        let state = LatentState::initial(Tensor1D::new(vec![0.0]).unwrap());
        let v = Tensor1D::new(vec![1.0, 1.0]).unwrap();
        assert!(matches!(euler_step(&state, &v, &sched), Err(Error::Contract(_))));
    }

    proptest! {
        // x' - x - v*ds vanishes to a few ULP per element.
        #[test]
        fn euler_is_exact_linear_update(
            xs in proptest::collection::vec(-1e3f64..1e3, 1..16),
            vs in proptest::collection::vec(-1e3f64..1e3, 16),
            steps in 2usize..64,
        ) {
            let sched = Schedule::uniform(steps, 0.02).unwrap();
            let n = xs.len();
            let x = Tensor1D::new(xs.clone()).unwrap();
            let v = Tensor1D::new(vs[..n].to_vec()).unwrap();
            let state = LatentState::initial(x);
            let next = euler_step(&state, &v, &sched).unwrap();
            let ds = sched.dt(1);
            for i in 0..n {
                let expect = xs[i] + vs[i] * ds;
                let ulp = (expect.abs().max(1e-300)) * f64::EPSILON * 4.0;
                prop_assert!((next.x.values()[i] - expect).abs() <= ulp);
            }
        }

        #[test]
        fn schedule_times_strictly_monotone(
            steps in 2usize..200,
            delta_end in 0.001f64..0.499,
        ) {
            let s = Schedule::uniform(steps, delta_end).unwrap();
            for t in 1..=steps {
                prop_assert!(s.time(t) > s.time(t - 1));
                prop_assert!(s.dt(t) > 0.0);
            }
            prop_assert!(s.time(steps) <= 1.0 - delta_end + 1e-15);
        }
    }
}
