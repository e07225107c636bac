//! Residual operators, the approximation-accuracy estimate, energy functionals,
//! Lyapunov bookkeeping and decay-rate fitting.

use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::controller::forward_transform;
use crate::error::{Error, Result};
use crate::kernels::{solve_kappa_c, CIntegrand, KernelField, KernelSet};
use crate::numerics::{trapezoid_product, TriangularGrid};
use crate::plant::{PlantState, SimTrace};

/// Whether the boundary operators include the inhomogeneous `theta` term.
///
/// `Kernel` evaluates the residuals `K1..K4` of a candidate solution. `Perturbation`
/// evaluates the same operators on a difference field `k - k_hat`, which gives
/// `delta1..delta4` of the perturbed target system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResidualMode {
    Kernel,
    Perturbation,
}

#[derive(Clone, Debug)]
pub struct ResidualReport {
    pub mode: ResidualMode,
    /// Diagonal operator over `x` (`K1` or `delta1`).
    pub diagonal: Vec<f64>,
    /// Bottom-edge operator over `x` (`K2` or `delta2`).
    pub bottom: Vec<f64>,
    /// Interior operator on the `k1` equation (`K3` or `delta3`).
    pub interior1: KernelField,
    /// Interior operator on the `k2` equation (`K4` or `delta4`).
    pub interior2: KernelField,
    pub sup_diagonal: f64,
    pub sup_bottom: f64,
    pub sup_interior1: f64,
    pub sup_interior2: f64,
    /// Largest nodal sum of the four operator magnitudes.
    pub epsilon_estimate: f64,
}

/// Serializable digest of a [`ResidualReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub n: usize,
    pub mode: ResidualMode,
    pub sup_k1: f64,
    pub sup_k2: f64,
    pub sup_k3: f64,
    pub sup_k4: f64,
    pub epsilon_estimate: f64,
}

impl ResidualReport {
    pub fn summary(&self) -> ResidualSummary {
        ResidualSummary {
            n: self.interior1.grid().n(),
            mode: self.mode,
            sup_k1: self.sup_diagonal,
            sup_k2: self.sup_bottom,
            sup_k3: self.sup_interior1,
            sup_k4: self.sup_interior2,
            epsilon_estimate: self.epsilon_estimate,
        }
    }
}

impl ResidualSummary {
    pub const CSV_HEADER: &'static str = "n,sup_k1,sup_k2,sup_k3,sup_k4,epsilon";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.n, self.sup_k1, self.sup_k2, self.sup_k3, self.sup_k4, self.epsilon_estimate
        )
    }
}

/// `d/dx` at node `(i, j)` along the line `xi = xi_j`: centered where both
/// neighbours exist, one-sided otherwise.
fn d_dx(f: &KernelField, i: usize, j: usize) -> f64 {
    let n = f.grid().n();
    let h = f.grid().h();
    if i > j && i < n {
        (f.get(i + 1, j) - f.get(i - 1, j)) / (2.0 * h)
    } else if i == j && i < n {
        (f.get(i + 1, j) - f.get(i, j)) / h
    } else if i == n && j < n {
        (f.get(n, j) - f.get(n - 1, j)) / h
    } else {
        // Corner (1, 1): the line xi = 1 holds one node; difference one row down.
        (f.get(n, n - 1) - f.get(n - 1, n - 1)) / h
    }
}

/// `d/dxi` at node `(i, j)` along the row `x = x_i`.
fn d_dxi(f: &KernelField, i: usize, j: usize) -> f64 {
    let h = f.grid().h();
    if i == 0 {
        // Origin: row 0 holds one node; difference along row 1.
        (f.get(1, 1) - f.get(1, 0)) / h
    } else if j > 0 && j < i {
        (f.get(i, j + 1) - f.get(i, j - 1)) / (2.0 * h)
    } else if j == 0 {
        (f.get(i, 1) - f.get(i, 0)) / h
    } else {
        (f.get(i, i) - f.get(i, i - 1)) / h
    }
}

/// Evaluates `K1..K4` (or `delta1..delta4`) on the grid of `k1`.
pub fn residual_operators_with(
    coeffs: &CoefficientSet,
    k1: &KernelField,
    k2: &KernelField,
    mode: ResidualMode,
) -> Result<ResidualReport> {
    let grid = k1.grid();
    if k2.grid() != grid {
        return Err(Error::ShapeMismatch {
            context: "residual operators",
            expected: grid.n(),
            actual: k2.grid().n(),
        });
    }
    let n = grid.n();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "residual operators need n >= 3 for centered stencils, got {n}"
        )));
    }
    let c = coeffs.resample(grid.interval())?;
    let (lam, dlam, mu, dmu, sig, om, th) = (c.lambda(), c.dlambda(), c.mu(), c.dmu(), c.sigma(), c.omega(), c.theta());
    let q = c.q();

    let mut diagonal = vec![0.0; n + 1];
    let mut bottom = vec![0.0; n + 1];
    for i in 0..=n {
        match mode {
            ResidualMode::Kernel => {
                diagonal[i] = (lam[i] + mu[i]) * k1.get(i, i) + th[i];
                bottom[i] = -lam[0] * q * k1.get(i, 0) + mu[0] * k2.get(i, 0);
            }
            ResidualMode::Perturbation => {
                diagonal[i] = (lam[i] + mu[i]) * k1.get(i, i);
                bottom[i] = lam[0] * q * k1.get(i, 0) - mu[0] * k2.get(i, 0);
            }
        }
    }

    let mut r3 = vec![0.0; grid.node_count()];
    let mut r4 = vec![0.0; grid.node_count()];
    for i in 0..=n {
        for j in 0..=i {
            let (a, b) = (k1.get(i, j), k2.get(i, j));
            let idx = grid.index(i, j);
            r3[idx] = -mu[i] * d_dx(k1, i, j) + lam[j] * d_dxi(k1, i, j) + dlam[j] * a + sig[j] * a + th[j] * b;
            r4[idx] = -mu[i] * d_dx(k2, i, j) - mu[j] * d_dxi(k2, i, j) - dmu[j] * b + om[j] * a;
        }
    }

    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut eps = 0.0f64;
    for i in 0..=n {
        for j in 0..=i {
            let idx = grid.index(i, j);
            eps = eps.max(diagonal[i].abs() + bottom[i].abs() + r3[idx].abs() + r4[idx].abs());
        }
    }
    Ok(ResidualReport {
        mode,
        sup_diagonal: sup(&diagonal),
        sup_bottom: sup(&bottom),
        sup_interior1: sup(&r3),
        sup_interior2: sup(&r4),
        diagonal,
        bottom,
        interior1: KernelField::new(grid, r3)?,
        interior2: KernelField::new(grid, r4)?,
        epsilon_estimate: eps,
    })
}

/// Residuals `K1..K4` of candidate kernels.
pub fn residual_operators(coeffs: &CoefficientSet, k1: &KernelField, k2: &KernelField) -> Result<ResidualReport> {
    residual_operators_with(coeffs, k1, k2, ResidualMode::Kernel)
}

/// Discrete version of the approximation accuracy between exact and approximate kernels.
#[derive(Clone, Debug)]
pub struct EpsilonReport {
    pub perturbation: ResidualReport,
    pub sup_k1: f64,
    pub sup_k2: f64,
    pub sup_c: f64,
    pub sup_kappa: f64,
    /// Max over nodes of `|k1~| + |k2~| + |c~| + |kappa~| + |delta1| + ... + |delta4|`.
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub sup_k1: f64,
    pub sup_k2: f64,
    pub sup_c: f64,
    pub sup_kappa: f64,
    pub sup_delta1: f64,
    pub sup_delta2: f64,
    pub sup_delta3: f64,
    pub sup_delta4: f64,
    pub epsilon: f64,
}

impl EpsilonReport {
    pub fn summary(&self) -> EpsilonSummary {
        EpsilonSummary {
            sup_k1: self.sup_k1,
            sup_k2: self.sup_k2,
            sup_c: self.sup_c,
            sup_kappa: self.sup_kappa,
            sup_delta1: self.perturbation.sup_diagonal,
            sup_delta2: self.perturbation.sup_bottom,
            sup_delta3: self.perturbation.sup_interior1,
            sup_delta4: self.perturbation.sup_interior2,
            epsilon: self.epsilon,
        }
    }
}

fn with_kappa_c(coeffs: &CoefficientSet, ks: &KernelSet) -> Result<KernelSet> {
    if ks.kappa.is_some() && ks.c.is_some() {
        Ok(ks.clone())
    } else {
        solve_kappa_c(coeffs, ks, CIntegrand::Kappa)
    }
}

/// Evaluates the accuracy `epsilon` of `approx` against `exact`. `kappa, c` are computed
/// for either set when missing; `approx` is resampled onto the grid of `exact`.
pub fn epsilon_estimate(coeffs: &CoefficientSet, exact: &KernelSet, approx: &KernelSet) -> Result<EpsilonReport> {
    let grid = exact.grid();
    let exact = with_kappa_c(coeffs, exact)?;
    let approx = with_kappa_c(coeffs, &approx.resample(grid))?;
    let dk1 = exact.k1.sub(&approx.k1)?;
    let dk2 = exact.k2.sub(&approx.k2)?;
    let dc = exact.c.as_ref().unwrap().sub(approx.c.as_ref().unwrap())?;
    let dkappa = exact.kappa.as_ref().unwrap().sub(approx.kappa.as_ref().unwrap())?;
    let pert = residual_operators_with(coeffs, &dk1, &dk2, ResidualMode::Perturbation)?;

    let mut eps = 0.0f64;
    for i in 0..=grid.n() {
        for j in 0..=i {
            let idx = grid.index(i, j);
            let s = dk1.values()[idx].abs()
                + dk2.values()[idx].abs()
                + dc.values()[idx].abs()
                + dkappa.values()[idx].abs()
                + pert.diagonal[i].abs()
                + pert.bottom[i].abs()
                + pert.interior1.values()[idx].abs()
                + pert.interior2.values()[idx].abs();
            eps = eps.max(s);
        }
    }
    Ok(EpsilonReport {
        sup_k1: dk1.sup_norm(),
        sup_k2: dk2.sup_norm(),
        sup_c: dc.sup_norm(),
        sup_kappa: dkappa.sup_norm(),
        perturbation: pert,
        epsilon: eps,
    })
}

/// `||u||^2 + ||v||^2`.
pub fn phi(state: &PlantState) -> f64 {
    state.phi()
}

/// `||u||^2 + ||beta||^2` with `beta` the forward transform of `state`.
pub fn psi1(state: &PlantState, kernels: &KernelSet) -> Result<f64> {
    let beta = forward_transform(state, kernels)?;
    let h = state.grid.h();
    Ok(trapezoid_product(&state.u, &state.u, h) + trapezoid_product(&beta, &beta, h))
}

/// `int p1 e^{-p2 x} / lambda u^2 + int e^{p2 x} / mu beta^2`, with the coefficients
/// resampled onto the grid of `u`.
pub fn lyapunov_v1(u: &[f64], beta: &[f64], coeffs: &CoefficientSet, p1: f64, p2: f64) -> Result<f64> {
    if !(p1 > 0.0) {
        return Err(Error::InvalidArgument(format!("p1 must be positive, got {p1}")));
    }
    if u.len() != beta.len() {
        return Err(Error::ShapeMismatch {
            context: "lyapunov_v1",
            expected: u.len(),
            actual: beta.len(),
        });
    }
    let grid = crate::numerics::IntervalGrid::with_nodes(u.len())?;
    let c = coeffs.resample(grid)?;
    let pts = grid.points();
    let wu: Vec<f64> = pts
        .iter()
        .zip(c.lambda())
        .zip(u)
        .map(|((x, l), u)| p1 * (-p2 * x).exp() / l * u)
        .collect();
    let wb: Vec<f64> = pts
        .iter()
        .zip(c.mu())
        .zip(beta)
        .map(|((x, m), b)| (p2 * x).exp() / m * b)
        .collect();
    let h = grid.h();
    Ok(trapezoid_product(&wu, u, h) + trapezoid_product(&wb, beta, h))
}

/// `min(1, 1/q^2) / 2`.
pub fn default_p1(q: f64) -> f64 {
    if q == 0.0 {
        0.5
    } else {
        0.5 * (1.0f64).min(1.0 / (q * q))
    }
}

/// `max{ p1 (omega_max + |kappa|) / lambda_min, (2 sigma_max + omega_max + 2|c| + |kappa|) / lambda_min }`
/// with sup norms of the computed `kappa, c`.
pub fn p2_lower_bound(coeffs: &CoefficientSet, kernels: &KernelSet, p1: f64) -> Result<f64> {
    let (kappa, c) = match (&kernels.kappa, &kernels.c) {
        (Some(k), Some(c)) => (k.sup_norm(), c.sup_norm()),
        _ => return Err(Error::Missing("kappa, c: run solve_kappa_c first")),
    };
    let b = coeffs.sup_bounds();
    let first = p1 * (b.omega_max + kappa) / b.lambda_min;
    let second = (2.0 * b.sigma_max + b.omega_max + 2.0 * c + kappa) / b.lambda_min;
    Ok(first.max(second))
}

/// `V1` at every snapshot of a plant trace, with `beta` from the forward transform.
pub fn lyapunov_series(
    trace: &SimTrace,
    kernels: &KernelSet,
    coeffs: &CoefficientSet,
    p1: f64,
    p2: f64,
) -> Result<Vec<f64>> {
    trace
        .snapshots
        .iter()
        .map(|s| {
            let beta = forward_transform(s, kernels)?;
            lyapunov_v1(&s.u, &beta, coeffs, p1, p2)
        })
        .collect()
}

/// True when `series[k + 1] <= series[k]` for every `k >= skip`.
pub fn is_non_increasing(series: &[f64], skip: usize) -> bool {
    series.windows(2).skip(skip).all(|w| w[1] <= w[0])
}

/// Empirical norm-equivalence constants from the computed kernel sup norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEquivalence {
    /// `4 + 3 |k1|^2 + 3 |k2|^2`: `psi1 <= s1 * phi`.
    pub s1: f64,
    /// `4 + 3 |l1|^2 + 3 |l2|^2`: `phi <= s2 * psi1`.
    pub s2: f64,
}

pub fn norm_equivalence(kernels: &KernelSet) -> Result<NormEquivalence> {
    let (l1, l2) = match (&kernels.l1, &kernels.l2) {
        (Some(a), Some(b)) => (a.sup_norm(), b.sup_norm()),
        _ => return Err(Error::Missing("l1, l2: run solve_inverse_kernels first")),
    };
    let (k1, k2) = (kernels.k1.sup_norm(), kernels.k2.sup_norm());
    Ok(NormEquivalence {
        s1: 4.0 + 3.0 * k1 * k1 + 3.0 * k2 * k2,
        s2: 4.0 + 3.0 * l1 * l1 + 3.0 * l2 * l2,
    })
}

/// The constants of the Lyapunov argument evaluated with empirical sup norms in place
/// of the analytic kernel bounds. For reference output only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProofConstants {
    pub p1: f64,
    pub p2: f64,
    pub epsilon: f64,
    pub epsilon_star: f64,
    pub c1: f64,
    pub c2: f64,
    pub s1: f64,
    pub s2: f64,
}

/// Evaluates `epsilon*`, `c1(epsilon)`, `c2`, `S1`, `S2`. `kernels` must hold the
/// approximate kernels with `kappa, c, l1, l2`.
pub fn proof_constants(coeffs: &CoefficientSet, kernels: &KernelSet, p1: f64, p2: f64, epsilon: f64) -> Result<ProofConstants> {
    let sup = |f: &Option<KernelField>, what| f.as_ref().map(|f| f.sup_norm()).ok_or(Error::Missing(what));
    let c_hat = sup(&kernels.c, "c")?;
    let kappa_hat = sup(&kernels.kappa, "kappa")?;
    let l1 = sup(&kernels.l1, "l1")?;
    let l2 = sup(&kernels.l2, "l2")?;
    let (k1, k2) = (kernels.k1.sup_norm(), kernels.k2.sup_norm());
    let b = coeffs.sup_bounds();
    let q = coeffs.q();
    let (lam_lo, lam_hi, mu_lo, mu_hi) = (b.lambda_min, b.lambda_max, b.mu_min, b.mu_max);
    let u_drive = 2.0 * b.sigma_max + b.omega_max + 2.0 * c_hat + kappa_hat;
    let b_drive = p1 * (b.omega_max + kappa_hat);
    let e2 = p2.exp();

    let epsilon_star = [
        mu_lo * p1 * (-p2).exp() * (lam_lo * p2 - u_drive) / (lam_lo * e2 * (3.0 * l1 + 2.0)),
        mu_lo * (lam_lo * p2 - b_drive) / (lam_lo * e2 * (7.0 + 3.0 * l2 * l2)),
        mu_lo * (1.0 - p1 * q * q) / e2,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);

    let c1 = (lam_lo / p1 * (p1 * (-p2).exp() * (p2 - u_drive / lam_lo) - epsilon * e2 * (3.0 * l1 + 2.0) / mu_lo))
        .min(mu_lo / e2 * (p2 - b_drive / lam_lo - epsilon * e2 / mu_lo * (7.0 + 3.0 * l2 * l2)));
    let c2 = (p1 / lam_lo).max(e2 / mu_lo) / (p1 * (-p2).exp() / lam_hi).min(1.0 / mu_hi);
    let n1 = k1;
    let n2 = k2;
    let s1 = 4.0 + 6.0 * n1 * n1 + 6.0 * n2 * n2 + 12.0 * epsilon * epsilon;
    let s2 = 4.0 + 6.0 * (n1 + n2 + 2.0 * epsilon * epsilon) * (2.0 * (n2 + epsilon)).exp();
    Ok(ProofConstants {
        p1,
        p2,
        epsilon,
        epsilon_star,
        c1,
        c2,
        s1,
        s2,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `-slope` of the least-squares line through `(t, ln phi)`.
    pub c1_hat: f64,
    /// Coefficient of determination of that fit.
    pub r_squared: f64,
    /// `max_t phi(t) e^{c1_hat t} / phi(0)`.
    pub c2_hat: f64,
    /// `phi(T) / phi(0)`.
    pub phi_ratio: f64,
    pub fit_start: f64,
    pub samples: usize,
    pub lyapunov_monotone: Option<bool>,
    pub norm_equivalence: Option<NormEquivalence>,
}

impl StabilityReport {
    pub const CSV_HEADER: &'static str = "c1_hat,r_squared,c2_hat,phi_ratio,fit_start,samples";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            self.c1_hat, self.r_squared, self.c2_hat, self.phi_ratio, self.fit_start, self.samples
        )
    }
}

/// Fits `ln phi(t) = a - c1 t` over `t >= t_start` (points with `phi > 0` only).
pub fn fit_decay(trace: &SimTrace, t_start: f64) -> Result<StabilityReport> {
    let pts: Vec<(f64, f64)> = trace
        .times
        .iter()
        .zip(&trace.phi)
        .filter(|(&t, &p)| t >= t_start && p > 0.0)
        .map(|(&t, &p)| (t, p.ln()))
        .collect();
    if pts.is_empty() {
        return Err(Error::InvalidArgument(format!("no positive phi after t = {t_start}")));
    }
    if pts.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "decay fit needs at least 10 samples after t = {t_start}, got {}",
            pts.len()
        )));
    }
    let m = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ym).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    let c1_hat = -slope;

    let p0 = trace.phi[0];
    let c2_hat = if p0 > 0.0 {
        trace
            .times
            .iter()
            .zip(&trace.phi)
            .map(|(t, p)| p * (c1_hat * t).exp() / p0)
            .fold(0.0f64, f64::max)
    } else {
        f64::NAN
    };
    Ok(StabilityReport {
        c1_hat,
        r_squared,
        c2_hat,
        phi_ratio: trace.phi.last().unwrap() / p0,
        fit_start: t_start,
        samples: pts.len(),
        lyapunov_monotone: None,
        norm_equivalence: None,
    })
}

/// Nodal sup norm of a kernel field restricted to the nodes of `grid`; used for
/// comparing against fields computed on finer grids.
pub fn sup_difference_on(grid: TriangularGrid, a: &KernelField, b: &KernelField) -> Result<f64> {
    let mut worst = 0.0f64;
    for (x, xi) in grid.nodes() {
        worst = worst.max((a.interp(x, xi)? - b.interp(x, xi)?).abs());
    }
    Ok(worst)
}
