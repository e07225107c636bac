//! Boundary feedback from gain data, and the forward/inverse Volterra transformations
//! between the plant state `(u, v)` and the target state `(u, beta)`.
//!
//! Every integral here uses the same trapezoid rule, so the transformed boundary value
//! `beta(1) = v(1) - U` is zero to rounding along a closed loop built from the same kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSet;
use crate::numerics::{interp_linear, trapezoid_product, IntervalGrid};
use crate::plant::PlantState;

/// Samples of `k1(1, xi)` and `k2(1, xi)` over a uniform `xi` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainVector {
    pub grid: IntervalGrid,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
}

impl GainVector {
    pub fn new(grid: IntervalGrid, g1: Vec<f64>, g2: Vec<f64>) -> Result<Self> {
        for g in [&g1, &g2] {
            if g.len() != grid.len() {
                return Err(Error::ShapeMismatch {
                    context: "gain vector",
                    expected: grid.len(),
                    actual: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("gain vector".into()));
            }
        }
        Ok(Self { grid, g1, g2 })
    }

    pub fn zeros(grid: IntervalGrid) -> Self {
        Self {
            grid,
            g1: vec![0.0; grid.len()],
            g2: vec![0.0; grid.len()],
        }
    }

    /// Linear interpolation onto `grid`.
    pub fn resample(&self, grid: IntervalGrid) -> Result<Self> {
        if grid == self.grid {
            return Ok(self.clone());
        }
        let pts = grid.points();
        let g1 = pts.iter().map(|&x| interp_linear(&self.g1, x)).collect::<Result<_>>()?;
        let g2 = pts.iter().map(|&x| interp_linear(&self.g2, x)).collect::<Result<_>>()?;
        Self::new(grid, g1, g2)
    }

    /// Largest absolute difference from another gain vector on the same grid.
    pub fn max_deviation(&self, other: &GainVector) -> Result<f64> {
        let other = other.resample(self.grid)?;
        Ok(self
            .g1
            .iter()
            .zip(&other.g1)
            .chain(self.g2.iter().zip(&other.g2))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }
}

fn check_grid(gains: &GainVector, grid: IntervalGrid) -> Result<()> {
    if gains.grid != grid {
        return Err(Error::ShapeMismatch {
            context: "gains vs state grid",
            expected: grid.len(),
            actual: gains.grid.len(),
        });
    }
    Ok(())
}

/// `U = int_0^1 g1 u + int_0^1 g2 v`.
pub fn control_value(gains: &GainVector, state: &PlantState) -> Result<f64> {
    check_grid(gains, state.grid)?;
    let h = state.grid.h();
    Ok(trapezoid_product(&gains.g1, &state.u, h) + trapezoid_product(&gains.g2, &state.v, h))
}

/// The control that is consistent with its own boundary value: solves
/// `U = int g1 u + int g2 v` where `v(1)` is replaced by `U`. The value already stored
/// at `v(1)` is ignored.
pub fn consistent_control(gains: &GainVector, state: &PlantState) -> Result<f64> {
    check_grid(gains, state.grid)?;
    let h = state.grid.h();
    let n = state.grid.cells();
    let g2_top = gains.g2[n];
    let explicit = trapezoid_product(&gains.g1, &state.u, h) + trapezoid_product(&gains.g2, &state.v, h)
        - 0.5 * h * g2_top * state.v[n];
    let pivot = 1.0 - 0.5 * h * g2_top;
    if pivot.abs() < crate::kernels::PIVOT_TOL {
        return Err(Error::SingularPivot {
            context: "boundary control",
            pivot,
        });
    }
    // `+ 0.0` maps -0.0 to 0.0 so zero gains reproduce the open loop bit for bit.
    Ok(explicit / pivot + 0.0)
}

fn check_kernels(state_grid: IntervalGrid, kernels: &KernelSet) -> Result<()> {
    if kernels.grid().n() != state_grid.cells() {
        return Err(Error::ShapeMismatch {
            context: "kernel grid vs state grid",
            expected: state_grid.cells(),
            actual: kernels.grid().n(),
        });
    }
    Ok(())
}

/// `beta(x) = v(x) - int_0^x k1(x,xi) u(xi) dxi - int_0^x k2(x,xi) v(xi) dxi`.
pub fn forward_transform(state: &PlantState, kernels: &KernelSet) -> Result<Vec<f64>> {
    check_kernels(state.grid, kernels)?;
    let h = state.grid.h();
    Ok((0..state.grid.len())
        .map(|i| {
            let r = 0..=i;
            state.v[i]
                - trapezoid_product(kernels.k1.row(i), &state.u[r.clone()], h)
                - trapezoid_product(kernels.k2.row(i), &state.v[r], h)
        })
        .collect())
}

/// `v(x) = beta(x) + int_0^x l1(x,xi) u(xi) dxi + int_0^x l2(x,xi) beta(xi) dxi`.
pub fn inverse_transform(u: &[f64], beta: &[f64], kernels: &KernelSet) -> Result<Vec<f64>> {
    let (l1, l2) = match (&kernels.l1, &kernels.l2) {
        (Some(l1), Some(l2)) => (l1, l2),
        _ => return Err(Error::Missing("inverse kernels l1, l2: run solve_inverse_kernels first")),
    };
    let n = kernels.grid().n();
    for a in [u, beta] {
        if a.len() != n + 1 {
            return Err(Error::ShapeMismatch {
                context: "inverse transform input",
                expected: n + 1,
                actual: a.len(),
            });
        }
    }
    let h = kernels.grid().h();
    Ok((0..=n)
        .map(|i| {
            beta[i] + trapezoid_product(l1.row(i), &u[..=i], h) + trapezoid_product(l2.row(i), &beta[..=i], h)
        })
        .collect())
}
