//! Reference solutions computed independently of the library solvers.

#![allow(dead_code)]

use bkst::kernels::KernelSet;
use nalgebra::{DMatrix, DVector};

/// Closed-form gamma-family coefficients.
#[derive(Clone, Copy)]
pub struct Gamma(pub f64);

impl Gamma {
    pub fn lambda(&self, x: f64) -> f64 {
        self.0 * x + 1.0
    }
    pub fn dlambda(&self, _x: f64) -> f64 {
        self.0
    }
    pub fn mu(&self, x: f64) -> f64 {
        (self.0 * x).exp() + 1.0
    }
    pub fn dmu(&self, x: f64) -> f64 {
        self.0 * (self.0 * x).exp()
    }
    pub fn sigma(&self, x: f64) -> f64 {
        self.0 * (x + 1.0)
    }
    pub fn omega(&self, x: f64) -> f64 {
        5.0 * (x.cosh() + 1.0)
    }
    pub fn theta(&self, x: f64) -> f64 {
        self.0 * (x + 1.0)
    }
    pub fn q(&self) -> f64 {
        self.0 / 2.0
    }
}

/// Kernels on a triangular grid stored row by row.
pub struct OracleKernels {
    pub n: usize,
    pub k1: Vec<Vec<f64>>,
    pub k2: Vec<Vec<f64>>,
}

impl OracleKernels {
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }
}

fn rk4(f: impl Fn(f64, f64) -> f64, x0: f64, y0: f64, dx: f64) -> f64 {
    let a = f(x0, y0);
    let b = f(x0 + dx / 2.0, y0 + dx / 2.0 * a);
    let c = f(x0 + dx / 2.0, y0 + dx / 2.0 * b);
    let d = f(x0 + dx, y0 + dx * c);
    y0 + dx / 6.0 * (a + 2.0 * b + 2.0 * c + d)
}

/// Cubic Lagrange interpolation in a row with spacing `h` starting at 0, on the four
/// nearest nodes (linear for rows shorter than four).
fn lerp_row(row: &[f64], h: f64, xi: f64) -> f64 {
    let m = row.len();
    if m == 1 {
        return row[0];
    }
    let s = (xi / h).clamp(0.0, (m - 1) as f64);
    if m < 4 {
        let j = (s.floor() as usize).min(m - 2);
        let t = s - j as f64;
        return row[j] * (1.0 - t) + row[j + 1] * t;
    }
    let j0 = (s.floor() as usize).saturating_sub(1).min(m - 4);
    (0..4)
        .map(|a| {
            let w: f64 = (0..4)
                .filter(|&b| b != a)
                .map(|b| (s - (j0 + b) as f64) / (a as f64 - b as f64))
                .product();
            w * row[j0 + a]
        })
        .sum()
}

/// Where a characteristic through `(x_i, xi_j)` enters the strip `[x_i - h, x_i]`.
enum Foot {
    /// Reaches the previous row at this `xi`.
    Row(f64),
    /// Leaves through a boundary at `x = s` (diagonal for k1, bottom edge for k2).
    Edge(f64),
}

/// Integrates the characteristics of the two kernel PDEs along `x`, one grid step at
/// a time, and solves each row by fixed-point iteration of the trapezoidal
/// characteristic integrals until the update drops below `tol`.
///
/// Along `d xi/dx = -lambda(xi)/mu(x)`:
///   `d k1/dx = ((lambda' + sigma) k1 + theta k2)(xi) / mu(x)`, starting on `xi = x`
///   from `-theta/(lambda + mu)`.
/// Along `d xi/dx = mu(xi)/mu(x)`:
///   `d k2/dx = (-mu' k2 + omega k1)(xi) / mu(x)`, starting on `xi = 0` from
///   `q lambda(0)/mu(0) k1`.
pub fn picard_oracle(c: Gamma, n: usize, tol: f64) -> OracleKernels {
    let h = 1.0 / n as f64;
    let r = c.q() * c.lambda(0.0) / c.mu(0.0);
    let diag = |x: f64| -c.theta(x) / (c.lambda(x) + c.mu(x));
    let s1 = |xi: f64, k1: f64, k2: f64| (c.dlambda(xi) + c.sigma(xi)) * k1 + c.theta(xi) * k2;
    let s2 = |xi: f64, k1: f64, k2: f64| -c.dmu(xi) * k2 + c.omega(xi) * k1;
    let f1 = |x: f64, xi: f64| -c.lambda(xi) / c.mu(x);
    let f2 = |x: f64, xi: f64| c.mu(xi) / c.mu(x);

    let mut k1 = vec![vec![diag(0.0)]];
    let mut k2 = vec![vec![r * diag(0.0)]];
    for i in 1..=n {
        let x = i as f64 * h;
        let xp = x - h;
        // Feet are fixed per row: trace backwards over one step with RK4, bisecting
        // on the step length when the path leaves the triangle.
        let feet1: Vec<Foot> = (0..=i)
            .map(|j| {
                let xi = j as f64 * h;
                if j == i {
                    return Foot::Edge(x);
                }
                let end = rk4(f1, x, xi, -h);
                if end <= xp {
                    return Foot::Row(end);
                }
                let (mut lo, mut hi) = (0.0, h);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if rk4(f1, x, xi, -mid) >= x - mid {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                Foot::Edge(x - 0.5 * (lo + hi))
            })
            .collect();
        let feet2: Vec<Foot> = (0..=i)
            .map(|j| {
                let xi = j as f64 * h;
                if j == 0 {
                    return Foot::Edge(x);
                }
                let end = rk4(f2, x, xi, -h);
                if end >= 0.0 {
                    return Foot::Row(end);
                }
                let (mut lo, mut hi) = (0.0, h);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if rk4(f2, x, xi, -mid) <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                Foot::Edge(x - 0.5 * (lo + hi))
            })
            .collect();

        let (p1, p2) = (&k1[i - 1], &k2[i - 1]);
        let mut a: Vec<f64> = (0..=i).map(|j| p1[j.min(i - 1)]).collect();
        let mut b: Vec<f64> = (0..=i).map(|j| p2[j.min(i - 1)]).collect();
        a[i] = diag(x);
        loop {
            let mut na = a.clone();
            let mut nb = b.clone();
            for j in 0..=i {
                let xi = j as f64 * h;
                // k1 along its characteristic.
                if j < i {
                    let (x0, xi0, v1, v2) = match feet1[j] {
                        Foot::Row(xs) => (xp, xs, lerp_row(p1, h, xs), lerp_row(p2, h, xs)),
                        Foot::Edge(s) => {
                            let t = (s - xp) / h;
                            let k2d = p2[i - 1] * (1.0 - t) + b[i] * t;
                            (s, s, diag(s), k2d)
                        }
                    };
                    let dx = x - x0;
                    na[j] = v1 + 0.5 * dx * (s1(xi0, v1, v2) / c.mu(x0) + s1(xi, a[j], b[j]) / c.mu(x));
                }
                // k2 along its characteristic.
                if j > 0 {
                    let (x0, xi0, v1, v2) = match feet2[j] {
                        Foot::Row(xs) => (xp, xs, lerp_row(p1, h, xs), lerp_row(p2, h, xs)),
                        Foot::Edge(s) => {
                            let t = (s - xp) / h;
                            let k1b = p1[0] * (1.0 - t) + a[0] * t;
                            (s, 0.0, k1b, r * k1b)
                        }
                    };
                    let dx = x - x0;
                    nb[j] = v2 + 0.5 * dx * (s2(xi0, v1, v2) / c.mu(x0) + s2(xi, a[j], b[j]) / c.mu(x));
                }
            }
            nb[0] = r * na[0];
            let upd = na
                .iter()
                .zip(&a)
                .chain(nb.iter().zip(&b))
                .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
            a = na;
            b = nb;
            if upd <= tol {
                break;
            }
        }
        k1.push(a);
        k2.push(b);
    }
    OracleKernels { n, k1, k2 }
}

/// Largest nodal difference between library kernels and an oracle whose grid
/// refines the library grid by an integer factor.
pub fn sup_diff_against(ks: &KernelSet, oracle: &OracleKernels) -> (f64, f64) {
    let n = ks.grid().n();
    assert_eq!(oracle.n % n, 0);
    let f = oracle.n / n;
    let (mut d1, mut d2) = (0.0f64, 0.0f64);
    for i in 0..=n {
        for j in 0..=i {
            d1 = d1.max((ks.k1.get(i, j) - oracle.k1[i * f][j * f]).abs());
            d2 = d2.max((ks.k2.get(i, j) - oracle.k2[i * f][j * f]).abs());
        }
    }
    (d1, d2)
}

/// Solves the trapezoidal discretization of
/// `kappa(x, xi) = omega(x) k2(x, xi) + int_xi^x kappa(x, s) k2(s, xi) ds`
/// row by row with a dense LU factorization. Row `i` of the result holds `kappa(x_i, .)`.
pub fn dense_kappa(ks: &KernelSet, omega: &[f64]) -> Vec<Vec<f64>> {
    let grid = ks.grid();
    let n = grid.n();
    let h = grid.h();
    (0..=n)
        .map(|i| {
            let m = i + 1;
            // Unknowns kappa(x_i, xi_j), j = 0..=i. Equation j:
            // kappa_j - sum_{s=j..i} w_{js} kappa_s k2(s, j) = omega_i k2(i, j)
            let mut a = DMatrix::<f64>::identity(m, m);
            let mut rhs = DVector::<f64>::zeros(m);
            for j in 0..=i {
                rhs[j] = omega[i] * ks.k2.get(i, j);
                if j == i {
                    continue;
                }
                for s in j..=i {
                    let w = if s == j || s == i { 0.5 * h } else { h };
                    a[(j, s)] -= w * ks.k2.get(s, j);
                }
            }
            a.lu().solve(&rhs).expect("dense kappa system is singular").iter().copied().collect()
        })
        .collect()
}

/// Random smooth state: a few low-frequency sines and cosines with unit-scale amplitudes.
pub fn random_smooth_state(grid: bkst::IntervalGrid, seed: u64) -> bkst::PlantState {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        let c: Vec<(f64, f64, f64)> = (0..4)
            .map(|k| {
                (
                    rng.gen_range(-1.0..1.0) / (k + 1) as f64,
                    rng.gen_range(-1.0..1.0) / (k + 1) as f64,
                    std::f64::consts::PI * (k + 1) as f64,
                )
            })
            .collect();
        move |x: f64| c.iter().map(|(a, b, w)| a * (w * x).sin() + b * (w * x).cos()).sum::<f64>()
    };
    let (fu, fv) = (draw(), draw());
    bkst::PlantState::from_fns(grid, fu, fv).unwrap()
}

/// `sqrt(h * sum (a - b)^2)`.
pub fn l2_diff(a: &[f64], b: &[f64], h: f64) -> f64 {
    (h * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).sqrt()
}
