//! Explicit upwind simulation of the counter-convecting plant
//!
//! ```text
//! u_t = -lambda(x) u_x + sigma(x) u + omega(x) v,   u(0,t) = q v(0,t)
//! v_t =  mu(x) v_x + theta(x) u,                    v(1,t) = U(t)
//! ```
//!
//! and of its backstepping target system, which is used to cross-check the transformation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::controller::{consistent_control, forward_transform, GainVector};
use crate::error::{Error, Result};
use crate::kernels::KernelSet;
use crate::numerics::{trapezoid_product, IntervalGrid, TriangularGrid};

/// Courant number used by [`cfl_dt`].
pub const CFL: f64 = 0.9;

/// Simulations stop once `phi` exceeds this.
pub const BLOW_UP: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub grid: IntervalGrid,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl PlantState {
    pub fn new(grid: IntervalGrid, u: Vec<f64>, v: Vec<f64>, t: f64) -> Result<Self> {
        for a in [&u, &v] {
            if a.len() != grid.len() {
                return Err(Error::ShapeMismatch {
                    context: "plant state",
                    expected: grid.len(),
                    actual: a.len(),
                });
            }
        }
        let s = Self { grid, u, v, t };
        s.check_finite()?;
        Ok(s)
    }

    pub fn from_fns(grid: IntervalGrid, u: impl Fn(f64) -> f64, v: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.sample(u), grid.sample(v), 0.0)
    }

    /// `u0 = 1`, `v0 = sin(x)`.
    pub fn reference(grid: IntervalGrid) -> Self {
        Self::from_fns(grid, |_| 1.0, f64::sin).expect("finite data")
    }

    pub fn zeros(grid: IntervalGrid) -> Self {
        Self::from_fns(grid, |_| 0.0, |_| 0.0).expect("finite data")
    }

    /// `||u||^2 + ||v||^2` with the trapezoid rule.
    pub fn phi(&self) -> f64 {
        let h = self.grid.h();
        trapezoid_product(&self.u, &self.u, h) + trapezoid_product(&self.v, &self.v, h)
    }

    fn check_finite(&self) -> Result<()> {
        if self.u.iter().chain(&self.v).any(|x| !x.is_finite()) || !self.t.is_finite() {
            return Err(Error::NonFinite(format!("plant state at t = {}", self.t)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ControllerSpec {
    /// `U = 0`.
    OpenLoop,
    /// `U = int k1(1,.) u + int k2(1,.) v`.
    GainFeedback(GainVector),
}

/// Per-step record of a simulation. Row 0 is the initial condition; its `control`
/// entry is the boundary value `v(1, 0)` carried by the initial data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub times: Vec<f64>,
    pub phi: Vec<f64>,
    pub u_boundary: Vec<f64>,
    pub v_boundary: Vec<f64>,
    pub control: Vec<f64>,
    pub snapshots: Vec<PlantState>,
    pub blew_up: bool,
    pub dt: f64,
}

impl SimTrace {
    fn record(&mut self, s: &PlantState, control: f64) {
        self.times.push(s.t);
        self.phi.push(s.phi());
        self.u_boundary.push(s.u[0]);
        self.v_boundary.push(s.v[0]);
        self.control.push(control);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// First recorded time with `phi >= factor * phi(0)`.
    pub fn growth_time(&self, factor: f64) -> Option<f64> {
        let p0 = *self.phi.first()?;
        self.times
            .iter()
            .zip(&self.phi)
            .find(|(_, &p)| p >= factor * p0)
            .map(|(&t, _)| t)
    }

    /// CSV with header `t,phi,u0,v0,U`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,phi,u0,v0,U")?;
        for k in 0..self.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[k], self.phi[k], self.u_boundary[k], self.v_boundary[k], self.control[k]
            )?;
        }
        Ok(())
    }
}

/// `CFL * h / max(lambda_max, mu_max)`.
pub fn cfl_dt(coeffs: &CoefficientSet, grid: IntervalGrid) -> f64 {
    let b = coeffs.sup_bounds();
    CFL * grid.h() / b.lambda_max.max(b.mu_max)
}

fn check_coeff_grid(coeffs: &CoefficientSet, grid: IntervalGrid) -> Result<()> {
    if coeffs.grid() != grid {
        return Err(Error::ShapeMismatch {
            context: "coefficients vs simulation grid (resample first)",
            expected: grid.len(),
            actual: coeffs.grid().len(),
        });
    }
    Ok(())
}

/// Upwind update of the interior and of `u(0) = q v(0)`; `v(1)` is left for the caller.
fn advance_interior(state: &PlantState, c: &CoefficientSet, dt: f64) -> PlantState {
    let n = state.grid.cells();
    let r = dt / state.grid.h();
    let (u, v) = (&state.u, &state.v);
    let (lam, mu, sig, om, th) = (c.lambda(), c.mu(), c.sigma(), c.omega(), c.theta());
    let mut un = vec![0.0; n + 1];
    let mut vn = vec![0.0; n + 1];
    for i in 1..=n {
        un[i] = u[i] - r * lam[i] * (u[i] - u[i - 1]) + dt * (sig[i] * u[i] + om[i] * v[i]);
    }
    for i in 0..n {
        vn[i] = v[i] + r * mu[i] * (v[i + 1] - v[i]) + dt * th[i] * u[i];
    }
    vn[n] = v[n];
    un[0] = c.q() * vn[0];
    PlantState {
        grid: state.grid,
        u: un,
        v: vn,
        t: state.t + dt,
    }
}

/// One explicit step with a prescribed boundary input `control`.
pub fn step(state: &PlantState, coeffs: &CoefficientSet, control: f64, dt: f64) -> Result<PlantState> {
    check_coeff_grid(coeffs, state.grid)?;
    let limit = cfl_dt(coeffs, state.grid);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, limit });
    }
    let mut next = advance_interior(state, coeffs, dt);
    let n = state.grid.cells();
    next.v[n] = control;
    next.check_finite()?;
    Ok(next)
}

/// Number of steps and the uniform step that lands exactly on `t_final`.
fn time_steps(c: &CoefficientSet, grid: IntervalGrid, t_final: f64) -> Result<(usize, f64)> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::InvalidArgument(format!("final time must be positive, got {t_final}")));
    }
    let limit = cfl_dt(c, grid);
    let steps = (t_final / limit).ceil().max(1.0) as usize;
    Ok((steps, t_final / steps as f64))
}

/// Runs the plant from `init` up to `t_final`, recording every step.
///
/// With [`ControllerSpec::GainFeedback`] the input is chosen after the interior update
/// so that `U` equals the feedback integral of the state it is applied to
/// (see [`consistent_control`]). Stops early with `blew_up` once `phi > 1e12`.
pub fn simulate(
    coeffs: &CoefficientSet,
    init: &PlantState,
    controller: &ControllerSpec,
    t_final: f64,
    snapshot_stride: usize,
) -> Result<SimTrace> {
    let grid = init.grid;
    let c = coeffs.resample(grid)?;
    let gains = match controller {
        ControllerSpec::OpenLoop => None,
        ControllerSpec::GainFeedback(g) => Some(g.resample(grid)?),
    };
    let (steps, dt) = time_steps(&c, grid, t_final)?;
    let n = grid.cells();

    let mut trace = SimTrace {
        dt,
        ..Default::default()
    };
    let mut state = init.clone();
    state.t = 0.0;
    trace.record(&state, state.v[n]);
    if snapshot_stride > 0 {
        trace.snapshots.push(state.clone());
    }

    for k in 1..=steps {
        let mut next = advance_interior(&state, &c, dt);
        next.t = k as f64 * dt;
        let control = match &gains {
            None => 0.0,
            Some(g) => consistent_control(g, &next)?,
        };
        next.v[n] = control;
        next.check_finite()?;
        trace.record(&next, control);
        if snapshot_stride > 0 && k % snapshot_stride == 0 {
            trace.snapshots.push(next.clone());
        }
        state = next;
        if *trace.phi.last().unwrap() > BLOW_UP {
            trace.blew_up = true;
            break;
        }
    }
    Ok(trace)
}

/// Simulates the nominal target system
///
/// ```text
/// u_t    = -lambda u_x + sigma u + omega beta + int_0^x c u + int_0^x kappa beta
/// beta_t =  mu beta_x,   u(0) = q beta(0),   beta(1) = 0
/// ```
///
/// starting from the transform of the plant state `init`. Snapshots and the `v`
/// columns of the trace hold `beta`; `phi` is `||u||^2 + ||beta||^2`.
pub fn simulate_target(
    coeffs: &CoefficientSet,
    kernels: &KernelSet,
    init: &PlantState,
    t_final: f64,
    snapshot_stride: usize,
) -> Result<SimTrace> {
    let grid = init.grid;
    let c = coeffs.resample(grid)?;
    let tri = TriangularGrid::new(grid.cells())?;
    let ks = kernels.resample(tri);
    let (kappa, cc) = match (&ks.kappa, &ks.c) {
        (Some(k), Some(c)) => (k, c),
        _ => return Err(Error::Missing("kappa, c: run solve_kappa_c first")),
    };
    let (steps, dt) = time_steps(&c, grid, t_final)?;
    let n = grid.cells();
    let h = grid.h();
    let r = dt / h;
    let (lam, mu, sig, om) = (c.lambda(), c.mu(), c.sigma(), c.omega());

    let mut u = init.u.clone();
    let mut beta = forward_transform(init, &ks)?;
    let mut trace = SimTrace {
        dt,
        ..Default::default()
    };
    let snapshot = |u: &[f64], b: &[f64], t: f64| PlantState {
        grid,
        u: u.to_vec(),
        v: b.to_vec(),
        t,
    };
    let first = snapshot(&u, &beta, 0.0);
    trace.record(&first, 0.0);
    if snapshot_stride > 0 {
        trace.snapshots.push(first);
    }

    let mut un = vec![0.0; n + 1];
    let mut bn = vec![0.0; n + 1];
    for k in 1..=steps {
        for i in 1..=n {
            let integral = trapezoid_product(cc.row(i), &u[..=i], h) + trapezoid_product(kappa.row(i), &beta[..=i], h);
            un[i] = u[i] - r * lam[i] * (u[i] - u[i - 1]) + dt * (sig[i] * u[i] + om[i] * beta[i] + integral);
        }
        for i in 0..n {
            bn[i] = beta[i] + r * mu[i] * (beta[i + 1] - beta[i]);
        }
        bn[n] = 0.0;
        un[0] = c.q() * bn[0];
        std::mem::swap(&mut u, &mut un);
        std::mem::swap(&mut beta, &mut bn);

        let s = snapshot(&u, &beta, k as f64 * dt);
        s.check_finite()?;
        trace.record(&s, 0.0);
        if snapshot_stride > 0 && k % snapshot_stride == 0 {
            trace.snapshots.push(s);
        }
        if *trace.phi.last().unwrap() > BLOW_UP {
            trace.blew_up = true;
            break;
        }
    }
    Ok(trace)
}
