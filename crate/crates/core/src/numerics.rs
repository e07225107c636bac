//! Uniform grids on `[0, 1]` and on the triangle `0 <= xi <= x <= 1`, together
//! with the first-order quadrature and interpolation used everywhere else.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when a query point sits just outside a grid because of rounding.
pub const DOMAIN_TOL: f64 = 1e-12;

/// Uniform grid `x_i = i / n`, `i = 0..=n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalGrid {
    n: usize,
}

impl IntervalGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "interval grid needs at least 2 cells, got {n}"
            )));
        }
        Ok(Self { n })
    }

    /// Grid with `m` nodes (`m - 1` cells).
    pub fn with_nodes(m: usize) -> Result<Self> {
        if m < 3 {
            return Err(Error::InvalidArgument(format!(
                "interval grid needs at least 3 nodes, got {m}"
            )));
        }
        Self::new(m - 1)
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n + 1
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        if i == self.n {
            1.0
        } else {
            i as f64 / self.n as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.point(i)).collect()
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..=self.n).map(|i| f(self.point(i))).collect()
    }
}

/// Nodes `(x_i, xi_j)` with `0 <= j <= i <= n`, flattened row by row
/// (`i` outer, `j` inner, both ascending).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriangularGrid {
    n: usize,
}

impl TriangularGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "triangular grid needs n >= 2, got {n}"
            )));
        }
        Ok(Self { n })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        Self::count_for(self.n)
    }

    #[inline]
    pub fn count_for(n: usize) -> usize {
        (n + 1) * (n + 2) / 2
    }

    /// Flat index of node `(i, j)`; requires `j <= i <= n`.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i <= self.n);
        i * (i + 1) / 2 + j
    }

    /// Range of flat indices holding row `i` (fixed `x_i`, `xi_0..=xi_i`).
    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        let start = i * (i + 1) / 2;
        start..start + i + 1
    }

    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        if i == self.n {
            1.0
        } else {
            i as f64 / self.n as f64
        }
    }

    pub fn interval(&self) -> IntervalGrid {
        IntervalGrid { n: self.n }
    }

    /// All nodes `(x, xi)` in flattening order.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.node_count());
        for i in 0..=self.n {
            for j in 0..=i {
                out.push((self.point(i), self.point(j)));
            }
        }
        out
    }

    /// Iterated trapezoid weights: trapezoid in `xi` along each row, then in `x`.
    /// Row 0 is a single point and gets weight zero.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let h = self.h();
        let mut w = vec![0.0; self.node_count()];
        for i in 1..=self.n {
            let outer = if i == self.n { 0.5 * h } else { h };
            let base = self.index(i, 0);
            for j in 0..=i {
                let inner = if j == 0 || j == i { 0.5 * h } else { h };
                w[base + j] = outer * inner;
            }
        }
        w
    }

    /// Flattens nested rows (row `i` has `i + 1` entries).
    pub fn flatten(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if rows.len() != self.n + 1 {
            return Err(Error::ShapeMismatch {
                context: "triangular flatten (rows)",
                expected: self.n + 1,
                actual: rows.len(),
            });
        }
        let mut out = Vec::with_capacity(self.node_count());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::ShapeMismatch {
                    context: "triangular flatten (row length)",
                    expected: i + 1,
                    actual: row.len(),
                });
            }
            out.extend_from_slice(row);
        }
        Ok(out)
    }

    pub fn unflatten(&self, values: &[f64]) -> Result<Vec<Vec<f64>>> {
        if values.len() != self.node_count() {
            return Err(Error::ShapeMismatch {
                context: "triangular unflatten",
                expected: self.node_count(),
                actual: values.len(),
            });
        }
        Ok((0..=self.n)
            .map(|i| values[self.row_range(i)].to_vec())
            .collect())
    }
}

/// Composite trapezoid rule on equally spaced samples with spacing `h`.
/// A single sample spans a zero-length segment and integrates to 0.
pub fn trapezoid(values: &[f64], h: f64) -> Result<f64> {
    match values {
        [] => Err(Error::EmptySegment),
        [_] => Ok(0.0),
        [first, inner @ .., last] => Ok(h * (0.5 * (first + last) + inner.iter().sum::<f64>())),
    }
}

/// Trapezoid rule of the pointwise product `a * b`; both slices share the grid.
/// Callers guarantee equal, non-zero lengths.
#[inline]
pub(crate) fn trapezoid_product(a: &[f64], b: &[f64], h: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let m = a.len();
    if m < 2 {
        return 0.0;
    }
    let mut inner = 0.0;
    for k in 1..m - 1 {
        inner += a[k] * b[k];
    }
    h * (0.5 * (a[0] * b[0] + a[m - 1] * b[m - 1]) + inner)
}

/// Piecewise-linear interpolation of samples on the uniform grid over `[0, 1]`
/// implied by `values.len()`. Queries within [`DOMAIN_TOL`] of the ends are clamped.
pub fn interp_linear(values: &[f64], x: f64) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::ShapeMismatch {
            context: "interp_linear",
            expected: 2,
            actual: values.len(),
        });
    }
    if !(x >= -DOMAIN_TOL && x <= 1.0 + DOMAIN_TOL) {
        return Err(Error::OutsideInterval { x });
    }
    Ok(interp_unchecked(values, x.clamp(0.0, 1.0)))
}

/// `interp_linear` without validation, for hot loops whose query is known to be in range.
#[inline]
pub(crate) fn interp_unchecked(values: &[f64], x: f64) -> f64 {
    let n = values.len() - 1;
    let pos = x * n as f64;
    let mut k = pos.floor() as usize;
    if k >= n {
        k = n - 1;
    }
    let s = pos - k as f64;
    if s == 0.0 {
        return values[k];
    }
    if s == 1.0 {
        return values[k + 1];
    }
    values[k] + s * (values[k + 1] - values[k])
}

/// Interpolates a field stored on a [`TriangularGrid`] at `(x, xi)`.
///
/// Cells fully inside the triangle are bilinear; cells cut by the diagonal use the
/// linear interpolant on their lower-right half. Points with `xi > x` by at most
/// [`DOMAIN_TOL`] are moved onto the diagonal.
pub fn tri_interp(grid: &TriangularGrid, values: &[f64], x: f64, xi: f64) -> Result<f64> {
    if values.len() != grid.node_count() {
        return Err(Error::ShapeMismatch {
            context: "tri_interp",
            expected: grid.node_count(),
            actual: values.len(),
        });
    }
    let inside = x <= 1.0 + DOMAIN_TOL && xi >= -DOMAIN_TOL && xi <= x + DOMAIN_TOL;
    if !inside || !x.is_finite() || !xi.is_finite() {
        return Err(Error::OutsideTriangle { x, xi });
    }
    let x = x.clamp(0.0, 1.0);
    let xi = xi.clamp(0.0, x);
    Ok(tri_interp_unchecked(grid, values, x, xi))
}

#[inline]
pub(crate) fn tri_interp_unchecked(grid: &TriangularGrid, values: &[f64], x: f64, xi: f64) -> f64 {
    let n = grid.n();
    let nf = n as f64;
    let px = x * nf;
    let pxi = xi * nf;
    let mut i = px.floor() as usize;
    if i >= n {
        i = n - 1;
    }
    let mut j = pxi.floor() as usize;
    if j > i {
        j = i;
    }
    let s = (px - i as f64).clamp(0.0, 1.0);
    let t = (pxi - j as f64).clamp(0.0, 1.0);
    if j < i {
        let f00 = values[grid.index(i, j)];
        let f01 = values[grid.index(i, j + 1)];
        let f10 = values[grid.index(i + 1, j)];
        let f11 = values[grid.index(i + 1, j + 1)];
        (1.0 - s) * ((1.0 - t) * f00 + t * f01) + s * ((1.0 - t) * f10 + t * f11)
    } else {
        // Diagonal cell: triangle (x_i, xi_i), (x_{i+1}, xi_i), (x_{i+1}, xi_{i+1}).
        let t = t.min(s);
        let a = values[grid.index(i, i)];
        let b = values[grid.index(i + 1, i)];
        let c = values[grid.index(i + 1, i + 1)];
        a + s * (b - a) + t * (c - b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn interval_grid_endpoints() {
        let g = IntervalGrid::new(7).unwrap();
        assert_eq!(g.point(0), 0.0);
        assert_eq!(g.point(7), 1.0);
        let p = g.points();
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        assert!(IntervalGrid::new(1).is_err());
    }

    #[test]
    fn trapezoid_examples() {
        let g = IntervalGrid::new(10).unwrap();
        assert_abs_diff_eq!(trapezoid(&g.sample(|_| 1.0), g.h()).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(trapezoid(&g.sample(|x| x), g.h()).unwrap(), 0.5, epsilon = 1e-15);
        let g = IntervalGrid::new(1000).unwrap();
        let exact = 1.0 - 1f64.cos();
        assert!((trapezoid(&g.sample(f64::sin), g.h()).unwrap() - exact).abs() < 1e-6);
        assert_eq!(trapezoid(&[3.0], 0.1).unwrap(), 0.0);
        assert!(matches!(trapezoid(&[], 0.1), Err(Error::EmptySegment)));
    }

    #[test]
    fn interp_examples() {
        let g = IntervalGrid::new(20).unwrap();
        let v = g.sample(|x| 2.0 * x);
        assert_abs_diff_eq!(interp_linear(&v, 0.35).unwrap(), 0.70, epsilon = 1e-14);
        let v = g.sample(|x| x.exp());
        assert_eq!(interp_linear(&v, g.point(3)).unwrap().to_bits(), v[3].to_bits());
        let g = IntervalGrid::new(100).unwrap();
        let v = g.sample(|x| x * x);
        assert!((interp_linear(&v, 0.5).unwrap() - 0.25).abs() <= 1e-4);
        assert!(interp_linear(&v, 1.5).is_err());
        assert!(interp_linear(&v, -0.1).is_err());
    }

    fn field(grid: &TriangularGrid, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        grid.nodes().into_iter().map(|(x, xi)| f(x, xi)).collect()
    }

    #[test]
    fn tri_interp_examples() {
        let g = TriangularGrid::new(10).unwrap();
        let v = field(&g, |x, xi| x + xi);
        assert_abs_diff_eq!(tri_interp(&g, &v, 0.5, 0.25).unwrap(), 0.75, epsilon = 1e-14);
        assert_abs_diff_eq!(tri_interp(&g, &v, 0.55, 0.52).unwrap(), 1.07, epsilon = 1e-14);
        let v = field(&g, |x, xi| (x * 3.0).sin() * xi.exp());
        assert_abs_diff_eq!(tri_interp(&g, &v, g.point(6), g.point(2)).unwrap(), v[g.index(6, 2)], epsilon = 1e-15);
        assert_abs_diff_eq!(tri_interp(&g, &v, 1.0, 1.0).unwrap(), v[g.index(10, 10)], epsilon = 1e-15);

        let g = TriangularGrid::new(200).unwrap();
        let v = field(&g, |x, xi| x * xi);
        assert!((tri_interp(&g, &v, 0.7, 0.3).unwrap() - 0.21).abs() <= 1e-3);
    }

    #[test]
    fn tri_interp_domain() {
        let g = TriangularGrid::new(10).unwrap();
        let v = field(&g, |x, xi| x - xi);
        // Just above the diagonal: clamped.
        assert!(tri_interp(&g, &v, 0.4, 0.4 + 5e-13).is_ok());
        assert!(tri_interp(&g, &v, 0.4, 0.5).is_err());
        assert!(tri_interp(&g, &v, 1.2, 0.5).is_err());
        assert!(tri_interp(&g, &v, 0.5, -0.1).is_err());
    }

    #[test]
    fn triangle_quadrature_integrates_affine_fields() {
        let g = TriangularGrid::new(40).unwrap();
        let w = g.quadrature_weights();
        let area: f64 = w.iter().sum();
        assert_abs_diff_eq!(area, 0.5, epsilon = 1e-14);
        let v = field(&g, |_, xi| 1.0 + 2.0 * xi);
        // int_0^1 int_0^x (1 + 2 xi) = 1/2 + 1/3; iterated trapezoid is exact on
        // each row and second-order in x (x^2 term).
        let q: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((q - (0.5 + 1.0 / 3.0)).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn trapezoid_is_linear(a in -5.0..5.0f64, b in -5.0..5.0f64,
                               f in prop::collection::vec(-10.0..10.0f64, 2..40),
                               seed in 0u64..1000) {
            let g: Vec<f64> = f.iter().enumerate().map(|(k, _)| ((k as u64 * 31 + seed) % 17) as f64 - 8.0).collect();
            let h = 1.0 / (f.len() - 1) as f64;
            let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
            let lhs = trapezoid(&combo, h).unwrap();
            let rhs = a * trapezoid(&f, h).unwrap() + b * trapezoid(&g, h).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }

        #[test]
        fn interp_bounded_by_stencil(vals in prop::collection::vec(-10.0..10.0f64, 3..30), x in 0.0..=1.0f64) {
            let y = interp_linear(&vals, x).unwrap();
            let n = vals.len() - 1;
            let k = ((x * n as f64).floor() as usize).min(n - 1);
            let lo = vals[k].min(vals[k + 1]);
            let hi = vals[k].max(vals[k + 1]);
            prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
        }

        #[test]
        fn tri_interp_bounded_by_stencil(n in 2usize..12, seed in 0u64..10_000, x in 0.0..=1.0f64, r in 0.0..=1.0f64) {
            let g = TriangularGrid::new(n).unwrap();
            let v: Vec<f64> = (0..g.node_count()).map(|k| (((k as u64 + 1) * (seed + 7)) % 101) as f64 / 10.0).collect();
            let xi = r * x;
            let y = tri_interp(&g, &v, x, xi).unwrap();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
        }

        #[test]
        fn flatten_round_trips(n in 2usize..15, seed in 0u64..1000) {
            let g = TriangularGrid::new(n).unwrap();
            let v: Vec<f64> = (0..g.node_count()).map(|k| (k as f64 + seed as f64).sin()).collect();
            let rows = g.unflatten(&v).unwrap();
            let back = g.flatten(&rows).unwrap();
            prop_assert!(v.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
