//! Dense flat sample vectors and the mean-absolute-value norm.
//!
//! Samples and model outputs are plain `f64` vectors. A vector may carry
//! grid metadata (width x height, row-major) so windowed metrics know how
//! to reshape it; nothing else in the pipeline cares about the shape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A flat vector of finite reals, optionally tagged with a grid shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor1D {
    values: Vec<f64>,
    grid: Option<(usize, usize)>,
}

impl Tensor1D {
    /// Builds a tensor, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("tensor must not be empty"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("tensor entry {bad} is not finite")));
        }
        Ok(Tensor1D { values, grid: None })
    }

    /// Builds a row-major grid tensor of `width * height` entries.
    pub fn new_grid(values: Vec<f64>, width: usize, height: usize) -> Result<Self> {
        if width * height != values.len() {
            return Err(Error::contract(format!(
                "grid {width}x{height} does not match {} entries",
                values.len()
            )));
        }
        let mut t = Tensor1D::new(values)?;
        t.grid = Some((width, height));
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Grid shape as (width, height), when the tensor was built as a grid.
    pub fn grid(&self) -> Option<(usize, usize)> {
        self.grid
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self + scale * other`, preserving grid metadata.
    pub fn add_scaled(&self, other: &Tensor1D, scale: f64) -> Result<Tensor1D> {
        let mut out = self.zip_with(other, |a, b| a + scale * b)?;
        out.grid = self.grid;
        Ok(out)
    }

    pub fn sub(&self, other: &Tensor1D) -> Result<Tensor1D> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Tensor1D) -> Result<Tensor1D> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Tensor1D, f: impl Fn(f64, f64) -> f64) -> Result<Tensor1D> {
        if self.len() != other.len() {
            return Err(Error::contract(format!(
                "length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor1D { values, grid: self.grid })
    }
}

/// Mean absolute value of a tensor; the scalar all stability indicators
/// are built from. Nonnegative, zero iff the tensor is all zeros.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NormStat(pub f64);

impl NormStat {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Mean absolute value: `sum(|a_i|) / len`.
pub fn l1_mean(a: &Tensor1D) -> NormStat {
    let sum: f64 = a.values().iter().map(|v| v.abs()).sum();
    NormStat(sum / a.len() as f64)
}
