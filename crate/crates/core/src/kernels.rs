//! Gain kernels on the triangle `0 <= xi <= x <= 1`.
//!
//! `k1, k2` solve the coupled Goursat problem
//!
//! ```text
//! mu(x) k1_x - lambda(xi) k1_xi = (lambda'(xi) + sigma(xi)) k1 + theta(xi) k2
//! mu(x) k2_x + mu(xi) k2_xi     = -mu'(xi) k2 + omega(xi) k1
//! k1(x, x) = -theta(x) / (lambda(x) + mu(x)),   mu(0) k2(x, 0) = q lambda(0) k1(x, 0)
//! ```
//!
//! and are computed by first-order semi-Lagrangian marching in `x`. The target-system
//! couplings `kappa, c` and the inverse-transform kernels `l1, l2` follow from
//! Volterra equations of the second kind discretized with the trapezoid rule.

use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::controller::GainVector;
use crate::error::{Error, Result};
use crate::numerics::{interp_unchecked, tri_interp, tri_interp_unchecked, TriangularGrid};

/// Pivots below this magnitude abort the triangular solves.
pub const PIVOT_TOL: f64 = 1e-12;

/// A scalar field sampled at the nodes of a [`TriangularGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct KernelField {
    grid: TriangularGrid,
    values: Vec<f64>,
}

impl KernelField {
    pub fn new(grid: TriangularGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::ShapeMismatch {
                context: "kernel field",
                expected: grid.node_count(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel field".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TriangularGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.node_count()],
        }
    }

    /// Samples `f(x, xi)` at every node.
    pub fn from_fn(grid: TriangularGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().into_iter().map(|(x, xi)| f(x, xi)).collect())
    }

    pub fn grid(&self) -> TriangularGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// Row `i`: the values at `(x_i, xi_0..=xi_i)`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[self.grid.row_range(i)]
    }

    pub fn interp(&self, x: f64, xi: f64) -> Result<f64> {
        tri_interp(&self.grid, &self.values, x, xi)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `L2(T)` norm with iterated trapezoid weights.
    pub fn l2_norm(&self) -> f64 {
        let w = self.grid.quadrature_weights();
        w.iter().zip(&self.values).map(|(w, v)| w * v * v).sum::<f64>().sqrt()
    }

    /// Pointwise difference `self - other`.
    pub fn sub(&self, other: &KernelField) -> Result<KernelField> {
        if self.grid != other.grid {
            return Err(Error::ShapeMismatch {
                context: "kernel field difference",
                expected: self.grid.n(),
                actual: other.grid.n(),
            });
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(KernelField {
            grid: self.grid,
            values,
        })
    }

    /// Interpolates onto another triangular grid.
    pub fn resample(&self, grid: TriangularGrid) -> KernelField {
        if grid == self.grid {
            return self.clone();
        }
        let values = grid
            .nodes()
            .into_iter()
            .map(|(x, xi)| tri_interp_unchecked(&self.grid, &self.values, x, xi))
            .collect();
        KernelField { grid, values }
    }
}

/// How the `c` kernel's integral term is formed.
///
/// The plant derivation gives `c = omega k1 + int kappa(x,s) k1(s,xi) ds`, which equals
/// `omega(x) l1(x, xi)`. The self-referential variant
/// `c = omega k1 + int c(x,s) k1(s,xi) ds` is provided for comparison only; it does not
/// reproduce `omega l1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CIntegrand {
    #[default]
    Kappa,
    SelfReferential,
}

/// `k1, k2` plus the derived kernels, all on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSet {
    pub k1: KernelField,
    pub k2: KernelField,
    pub kappa: Option<KernelField>,
    pub c: Option<KernelField>,
    pub l1: Option<KernelField>,
    pub l2: Option<KernelField>,
}

impl KernelSet {
    pub fn new(k1: KernelField, k2: KernelField) -> Result<Self> {
        if k1.grid != k2.grid {
            return Err(Error::ShapeMismatch {
                context: "kernel set",
                expected: k1.grid.n(),
                actual: k2.grid.n(),
            });
        }
        Ok(Self {
            k1,
            k2,
            kappa: None,
            c: None,
            l1: None,
            l2: None,
        })
    }

    pub fn zeros(grid: TriangularGrid) -> Self {
        Self::new(KernelField::zeros(grid), KernelField::zeros(grid)).expect("same grid")
    }

    pub fn grid(&self) -> TriangularGrid {
        self.k1.grid
    }

    /// Resamples `k1, k2` (and whatever derived kernels are present) onto `grid`.
    pub fn resample(&self, grid: TriangularGrid) -> KernelSet {
        let map = |f: &Option<KernelField>| f.as_ref().map(|f| f.resample(grid));
        KernelSet {
            k1: self.k1.resample(grid),
            k2: self.k2.resample(grid),
            kappa: map(&self.kappa),
            c: map(&self.c),
            l1: map(&self.l1),
            l2: map(&self.l2),
        }
    }

    /// Largest violation of the two boundary identities, measured as
    /// `|(lambda + mu) k1(x,x) + theta|` and `|mu(0) k2(x,0) - q lambda(0) k1(x,0)|`.
    pub fn boundary_residuals(&self, coeffs: &CoefficientSet) -> Result<(f64, f64)> {
        let grid = self.grid();
        let c = coeffs.resample(grid.interval())?;
        let (lam, mu, th) = (c.lambda(), c.mu(), c.theta());
        let mut diag = 0.0f64;
        let mut bottom = 0.0f64;
        for i in 0..=grid.n() {
            diag = diag.max(((lam[i] + mu[i]) * self.k1.get(i, i) + th[i]).abs());
            bottom = bottom.max((mu[0] * self.k2.get(i, 0) - c.q() * lam[0] * self.k1.get(i, 0)).abs());
        }
        Ok((diag, bottom))
    }
}

/// Coefficients resampled onto the solver's `x` grid.
struct Nodal {
    lam: Vec<f64>,
    dlam: Vec<f64>,
    mu: Vec<f64>,
    dmu: Vec<f64>,
    sig: Vec<f64>,
    om: Vec<f64>,
    th: Vec<f64>,
    q: f64,
}

impl Nodal {
    fn new(coeffs: &CoefficientSet, grid: &TriangularGrid) -> Result<Self> {
        let c = coeffs.resample(grid.interval())?;
        Ok(Self {
            lam: c.lambda().to_vec(),
            dlam: c.dlambda().to_vec(),
            mu: c.mu().to_vec(),
            dmu: c.dmu().to_vec(),
            sig: c.sigma().to_vec(),
            om: c.omega().to_vec(),
            th: c.theta().to_vec(),
            q: c.q(),
        })
    }

    #[inline]
    fn at(a: &[f64], x: f64) -> f64 {
        interp_unchecked(a, x)
    }

    /// Diagonal data `-theta / (lambda + mu)` at an arbitrary `x`.
    #[inline]
    fn diagonal_value(&self, x: f64) -> f64 {
        -Self::at(&self.th, x) / (Self::at(&self.lam, x) + Self::at(&self.mu, x))
    }
}

/// Linear interpolation along a row stored at spacing `h` starting at `xi = 0`.
#[inline]
fn row_interp(row: &[f64], xi: f64, h: f64) -> f64 {
    let last = row.len() - 1;
    if last == 0 {
        return row[0];
    }
    let pos = (xi / h).clamp(0.0, last as f64);
    let mut k = pos.floor() as usize;
    if k >= last {
        k = last - 1;
    }
    let s = pos - k as f64;
    row[k] + s * (row[k + 1] - row[k])
}

/// Solves the Goursat system for `k1, k2` on `grid`.
///
/// Row `i` is computed from row `i - 1` only. For each node the `k1` characteristic
/// (`dxi/dx = -lambda(xi)/mu(x)`) and the `k2` characteristic (`dxi/dx = mu(xi)/mu(x)`)
/// are traced back one step in `x`; if a characteristic leaves through the diagonal
/// (`k1`) or the bottom edge (`k2`) the boundary data at the crossing is used instead.
/// The boundary nodes themselves are assigned from the boundary conditions.
pub fn solve_kernels(coeffs: &CoefficientSet, grid: TriangularGrid) -> Result<KernelSet> {
    let c = Nodal::new(coeffs, &grid)?;
    let n = grid.n();
    let h = grid.h();

    for i in 0..=n {
        if (c.lam[i] + c.mu[i]).abs() < PIVOT_TOL {
            return Err(Error::SingularPivot {
                context: "lambda + mu on the diagonal",
                pivot: c.lam[i] + c.mu[i],
            });
        }
    }
    let bottom_ratio = c.q * c.lam[0] / c.mu[0];

    let mut k1 = vec![0.0; grid.node_count()];
    let mut k2 = vec![0.0; grid.node_count()];
    k1[0] = -c.th[0] / (c.lam[0] + c.mu[0]);
    k2[0] = bottom_ratio * k1[0];

    for i in 1..=n {
        let x = grid.point(i);
        let x_prev = grid.point(i - 1);
        let mu_x = c.mu[i];
        let mu_prev = c.mu[i - 1];
        let split = grid.row_range(i).start;
        let (done1, cur1) = k1.split_at_mut(split);
        let (done2, cur2) = k2.split_at_mut(split);
        let prev1 = &done1[grid.row_range(i - 1)];
        let prev2 = &done2[grid.row_range(i - 1)];

        for j in 0..i {
            let xi = grid.point(j);
            let slope = c.lam[j] / mu_x;
            let foot = xi + h * slope;
            cur1[j] = if foot <= x_prev {
                let f1 = row_interp(prev1, foot, h);
                let f2 = row_interp(prev2, foot, h);
                let a = Nodal::at(&c.dlam, foot) + Nodal::at(&c.sig, foot);
                f1 + h * (a * f1 + Nodal::at(&c.th, foot) * f2) / mu_prev
            } else {
                // Crossed the diagonal at x_c = x - s.
                let s = (x - xi) / (1.0 + slope);
                let xc = x - s;
                let f1 = c.diagonal_value(xc);
                let f2 = prev2[i - 1];
                let a = Nodal::at(&c.dlam, xc) + Nodal::at(&c.sig, xc);
                f1 + s * (a * f1 + Nodal::at(&c.th, xc) * f2) / Nodal::at(&c.mu, xc)
            };
        }
        cur1[i] = -c.th[i] / (c.lam[i] + c.mu[i]);

        cur2[0] = bottom_ratio * cur1[0];
        for j in 1..=i {
            let xi = grid.point(j);
            let slope = c.mu[j] / mu_x;
            let foot = xi - h * slope;
            cur2[j] = if foot >= 0.0 {
                let foot = foot.min(x_prev);
                let g1 = row_interp(prev1, foot, h);
                let g2 = row_interp(prev2, foot, h);
                let src = -Nodal::at(&c.dmu, foot) * g2 + Nodal::at(&c.om, foot) * g1;
                g2 + h * src / mu_prev
            } else {
                // Crossed the bottom edge at x_c = x - s.
                let s = xi / slope;
                let xc = x - s;
                let t = ((xc - x_prev) / h).clamp(0.0, 1.0);
                let g1 = (1.0 - t) * prev1[0] + t * cur1[0];
                let g2 = bottom_ratio * g1;
                let src = -c.dmu[0] * g2 + c.om[0] * g1;
                g2 + s * src / Nodal::at(&c.mu, xc)
            };
        }

        if cur1.iter().take(i + 1).chain(cur2.iter().take(i + 1)).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("kernel row {i}")));
        }
    }

    KernelSet::new(KernelField::new(grid, k1)?, KernelField::new(grid, k2)?)
}

/// Fills `kappa` and `c` from `k1, k2`.
///
/// Row by row, `kappa(x, .)` solves `kappa = omega(x) k2 + int_xi^x kappa(x,s) k2(s,xi) ds`
/// by back-substitution from the diagonal; `c` then follows explicitly (or, for
/// [`CIntegrand::SelfReferential`], by its own back-substitution).
pub fn solve_kappa_c(coeffs: &CoefficientSet, ks: &KernelSet, variant: CIntegrand) -> Result<KernelSet> {
    let grid = ks.grid();
    let c = coeffs.resample(grid.interval())?;
    let omega = c.omega();
    let n = grid.n();
    let h = grid.h();
    let k1 = &ks.k1;
    let k2 = &ks.k2;

    let mut kappa = vec![0.0; grid.node_count()];
    let mut cc = vec![0.0; grid.node_count()];
    let mut row_k = vec![0.0; n + 1];
    let mut row_c = vec![0.0; n + 1];

    for i in 0..=n {
        let w = omega[i];
        row_k[i] = w * k2.get(i, i);
        for j in (0..i).rev() {
            let mut acc = 0.5 * h * row_k[i] * k2.get(i, j);
            for l in j + 1..i {
                acc += h * row_k[l] * k2.get(l, j);
            }
            let pivot = 1.0 - 0.5 * h * k2.get(j, j);
            if pivot.abs() < PIVOT_TOL {
                return Err(Error::SingularPivot {
                    context: "kappa back-substitution",
                    pivot,
                });
            }
            row_k[j] = (w * k2.get(i, j) + acc) / pivot;
        }

        match variant {
            CIntegrand::Kappa => {
                for j in 0..=i {
                    let mut acc = 0.0;
                    if j < i {
                        acc = 0.5 * h * (row_k[j] * k1.get(j, j) + row_k[i] * k1.get(i, j));
                        for l in j + 1..i {
                            acc += h * row_k[l] * k1.get(l, j);
                        }
                    }
                    row_c[j] = w * k1.get(i, j) + acc;
                }
            }
            CIntegrand::SelfReferential => {
                row_c[i] = w * k1.get(i, i);
                for j in (0..i).rev() {
                    let mut acc = 0.5 * h * row_c[i] * k1.get(i, j);
                    for l in j + 1..i {
                        acc += h * row_c[l] * k1.get(l, j);
                    }
                    let pivot = 1.0 - 0.5 * h * k1.get(j, j);
                    if pivot.abs() < PIVOT_TOL {
                        return Err(Error::SingularPivot {
                            context: "c back-substitution",
                            pivot,
                        });
                    }
                    row_c[j] = (w * k1.get(i, j) + acc) / pivot;
                }
            }
        }

        let r = grid.row_range(i);
        kappa[r.clone()].copy_from_slice(&row_k[..=i]);
        cc[r].copy_from_slice(&row_c[..=i]);
    }

    let mut out = ks.clone();
    out.kappa = Some(KernelField::new(grid, kappa)?);
    out.c = Some(KernelField::new(grid, cc)?);
    Ok(out)
}

/// Fills `l1, l2`, the kernels of the inverse transformation, from
/// `l_i(x,xi) = k_i(x,xi) + int_xi^x k2(x,s) l_i(s,xi) ds`, marching up each `xi` column.
pub fn solve_inverse_kernels(ks: &KernelSet) -> Result<KernelSet> {
    let grid = ks.grid();
    let k2 = &ks.k2;
    let l1 = volterra_columns(grid, &ks.k1, k2)?;
    let l2 = volterra_columns(grid, k2, k2)?;
    let mut out = ks.clone();
    out.l1 = Some(l1);
    out.l2 = Some(l2);
    Ok(out)
}

fn volterra_columns(grid: TriangularGrid, rhs: &KernelField, kernel: &KernelField) -> Result<KernelField> {
    let n = grid.n();
    let h = grid.h();
    let mut out = vec![0.0; grid.node_count()];
    let mut col = vec![0.0; n + 1];
    for j in 0..=n {
        col[j] = rhs.get(j, j);
        out[grid.index(j, j)] = col[j];
        for i in j + 1..=n {
            let mut acc = 0.5 * h * kernel.get(i, j) * col[j];
            for l in j + 1..i {
                acc += h * kernel.get(i, l) * col[l];
            }
            let pivot = 1.0 - 0.5 * h * kernel.get(i, i);
            if pivot.abs() < PIVOT_TOL {
                return Err(Error::SingularPivot {
                    context: "inverse kernel march",
                    pivot,
                });
            }
            col[i] = (rhs.get(i, j) + acc) / pivot;
            out[grid.index(i, j)] = col[i];
        }
    }
    KernelField::new(grid, out)
}

/// The top row `x = 1` of `k1` and `k2`: the feedback gains.
pub fn gain_slice(ks: &KernelSet) -> GainVector {
    let grid = ks.grid();
    let n = grid.n();
    GainVector::new(grid.interval(), ks.k1.row(n).to_vec(), ks.k2.row(n).to_vec())
        .expect("row length matches the interval grid")
}
