//! Built-in anchor sets and JSON loading for mixture fields.
//!
//! The presets are generated procedurally from the seeded generator so no
//! data files ship with the crate. Their geometry is fixed: changing it
//! changes every golden value downstream.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::MixtureFlowField;
use crate::rng::DetRng;
use crate::tensor::{l1_mean, Tensor1D};

/// Names of the shipped anchor presets, in display order.
pub const PRESET_NAMES: [&str; 3] = ["two-point-1d", "gauss-grid-2d", "digits-16x16"];

/// Internal seed for procedural preset content; independent of run seeds.
const DIGITS_SEED: u64 = 0x5EED_D161;

/// Two opposed scalar anchors. Scalar magnitude is chosen large relative
/// to unit noise so trajectories commit to one side early.
fn two_point_1d() -> MixtureFlowField {
    let a = 2.5;
    let anchors = vec![
        Tensor1D::new(vec![a]).unwrap(),
        Tensor1D::new(vec![-a]).unwrap(),
    ];
    MixtureFlowField::new(anchors, vec![0.5, 0.5]).unwrap()
}

/// Eight points on a circle of radius 3 in the plane.
fn gauss_grid_2d() -> MixtureFlowField {
    let k = 8;
    let radius = 3.0;
    let anchors = (0..k)
        .map(|j| {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
            Tensor1D::new(vec![radius * theta.cos(), radius * theta.sin()]).unwrap()
        })
        .collect();
    MixtureFlowField::new(anchors, vec![1.0 / k as f64; k]).unwrap()
}

/// Sixteen procedurally generated 16x16 grayscale grids: each is a sum of
/// four signed Gaussian blobs, rescaled to mean absolute value 2.
fn digits_16x16() -> MixtureFlowField {
    let (w, h, k) = (16usize, 16usize, 16usize);
    let mut rng = DetRng::seed_from_u64(DIGITS_SEED);
    let mut anchors = Vec::with_capacity(k);
    for _ in 0..k {
        let mut grid = vec![0.0f64; w * h];
        for blob in 0..4 {
            let cx = 2.0 + 12.0 * rng.uniform();
            let cy = 2.0 + 12.0 * rng.uniform();
            let sigma = 1.5 + 2.0 * rng.uniform();
            let amp = (0.5 + rng.uniform()) * if blob % 2 == 0 { 1.0 } else { -1.0 };
            for row in 0..h {
                for col in 0..w {
                    let dx = col as f64 - cx;
                    let dy = row as f64 - cy;
                    grid[row * w + col] += amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                }
            }
        }
        let t = Tensor1D::new_grid(grid, w, h).unwrap();
        let norm = l1_mean(&t).value();
        let scaled: Vec<f64> = t.values().iter().map(|v| v * 2.0 / norm).collect();
        anchors.push(Tensor1D::new_grid(scaled, w, h).unwrap());
    }
    MixtureFlowField::new(anchors, vec![1.0 / k as f64; k]).unwrap()
}

/// Looks up a built-in preset by name.
pub fn preset(name: &str) -> Result<MixtureFlowField> {
    match name {
        "two-point-1d" => Ok(two_point_1d()),
        "gauss-grid-2d" => Ok(gauss_grid_2d()),
        "digits-16x16" => Ok(digits_16x16()),
        other => Err(Error::config(format!("unknown preset: {other}"))),
    }
}

/// Grid shape of a field, taken from its first anchor.
pub fn field_grid(field: &MixtureFlowField) -> Option<(usize, usize)> {
    field.anchors()[0].grid()
}

/// On-disk anchor-set description.
#[derive(Debug, Serialize, Deserialize)]
pub struct AnchorSetFile {
    pub dim: usize,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub anchors: Vec<Vec<f64>>,
    pub priors: Vec<f64>,
}

impl AnchorSetFile {
    pub fn into_field(self) -> Result<MixtureFlowField> {
        let grid = match (self.width, self.height) {
            (Some(w), Some(h)) => {
                if w * h != self.dim {
                    return Err(Error::config(format!(
                        "width {w} x height {h} does not match dim {}",
                        self.dim
                    )));
                }
                Some((w, h))
            }
            (None, None) => None,
            _ => return Err(Error::config("width and height must be given together")),
        };
        let anchors = self
            .anchors
            .into_iter()
            .map(|values| {
                if values.len() != self.dim {
                    return Err(Error::config(format!(
                        "anchor length {} does not match dim {}",
                        values.len(),
                        self.dim
                    )));
                }
                match grid {
                    Some((w, h)) => Tensor1D::new_grid(values, w, h),
                    None => Tensor1D::new(values),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        MixtureFlowField::new(anchors, self.priors)
    }
}

/// Loads an anchor set from a JSON file.
pub fn load_anchor_set(path: &Path) -> Result<MixtureFlowField> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::config(format!("cannot read anchor file {}: {e}", path.display()))
    })?;
    let file: AnchorSetFile = serde_json::from_str(&text)?;
    file.into_field()
}
