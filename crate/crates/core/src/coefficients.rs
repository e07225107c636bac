//! Plant coefficients `(lambda, mu, sigma, omega, theta, q)` sampled on a uniform grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{interp_linear, IntervalGrid};

/// Default number of coefficient nodes.
pub const DEFAULT_NODES: usize = 101;

/// Transport speeds, couplings and the reflection gain of the plant, stored nodally.
///
/// `lambda` and `mu` carry their derivatives because the kernel equations use
/// `lambda'(xi)` and `mu'(xi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientSet {
    grid: IntervalGrid,
    lambda: Vec<f64>,
    dlambda: Vec<f64>,
    mu: Vec<f64>,
    dmu: Vec<f64>,
    sigma: Vec<f64>,
    omega: Vec<f64>,
    theta: Vec<f64>,
    q: f64,
}

/// Nodal extrema of a [`CoefficientSet`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub mu_max: f64,
    pub mu_min: f64,
    pub sigma_max: f64,
    pub omega_max: f64,
    pub theta_max: f64,
    pub dlambda_sup: f64,
    pub dmu_sup: f64,
}

impl CoefficientSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: IntervalGrid,
        lambda: Vec<f64>,
        dlambda: Vec<f64>,
        mu: Vec<f64>,
        dmu: Vec<f64>,
        sigma: Vec<f64>,
        omega: Vec<f64>,
        theta: Vec<f64>,
        q: f64,
    ) -> Result<Self> {
        let arrays: [(&str, &[f64]); 7] = [
            ("lambda", &lambda),
            ("lambda'", &dlambda),
            ("mu", &mu),
            ("mu'", &dmu),
            ("sigma", &sigma),
            ("omega", &omega),
            ("theta", &theta),
        ];
        for (name, a) in arrays {
            if a.len() != grid.len() {
                return Err(Error::ShapeMismatch {
                    context: "coefficient array",
                    expected: grid.len(),
                    actual: a.len(),
                });
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("coefficient {name}")));
            }
        }
        if !q.is_finite() {
            return Err(Error::NonFinite("coefficient q".into()));
        }
        if let Some(v) = lambda.iter().find(|&&v| v <= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, found {v}")));
        }
        if let Some(v) = mu.iter().find(|&&v| v <= 0.0) {
            return Err(Error::InvalidArgument(format!("mu must be positive, found {v}")));
        }
        Ok(Self {
            grid,
            lambda,
            dlambda,
            mu,
            dmu,
            sigma,
            omega,
            theta,
            q,
        })
    }

    /// Samples closed-form coefficient functions on `m` nodes.
    #[allow(clippy::too_many_arguments)]
    pub fn from_fns(
        m: usize,
        lambda: impl Fn(f64) -> f64,
        dlambda: impl Fn(f64) -> f64,
        mu: impl Fn(f64) -> f64,
        dmu: impl Fn(f64) -> f64,
        sigma: impl Fn(f64) -> f64,
        omega: impl Fn(f64) -> f64,
        theta: impl Fn(f64) -> f64,
        q: f64,
    ) -> Result<Self> {
        let g = IntervalGrid::with_nodes(m)?;
        Self::new(
            g,
            g.sample(lambda),
            g.sample(dlambda),
            g.sample(mu),
            g.sample(dmu),
            g.sample(sigma),
            g.sample(omega),
            g.sample(theta),
            q,
        )
    }

    /// Builds a set from values only, differentiating `lambda` and `mu` numerically
    /// (centered inside, second-order one-sided at the ends).
    #[allow(clippy::too_many_arguments)]
    pub fn from_values(
        grid: IntervalGrid,
        lambda: Vec<f64>,
        mu: Vec<f64>,
        sigma: Vec<f64>,
        omega: Vec<f64>,
        theta: Vec<f64>,
        q: f64,
    ) -> Result<Self> {
        if lambda.len() != grid.len() || mu.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                context: "coefficient array",
                expected: grid.len(),
                actual: lambda.len().min(mu.len()),
            });
        }
        let dlambda = gradient(&lambda, grid.h());
        let dmu = gradient(&mu, grid.h());
        Self::new(grid, lambda, dlambda, mu, dmu, sigma, omega, theta, q)
    }

    /// Spatially constant coefficients.
    pub fn uniform(m: usize, lambda: f64, mu: f64, sigma: f64, omega: f64, theta: f64, q: f64) -> Result<Self> {
        Self::from_fns(m, |_| lambda, |_| 0.0, |_| mu, |_| 0.0, |_| sigma, |_| omega, |_| theta, q)
    }

    /// Re-samples every array onto `grid` by linear interpolation.
    pub fn resample(&self, grid: IntervalGrid) -> Result<Self> {
        if grid == self.grid {
            return Ok(self.clone());
        }
        let pts = grid.points();
        let map = |a: &[f64]| -> Result<Vec<f64>> { pts.iter().map(|&x| interp_linear(a, x)).collect() };
        Self::new(
            grid,
            map(&self.lambda)?,
            map(&self.dlambda)?,
            map(&self.mu)?,
            map(&self.dmu)?,
            map(&self.sigma)?,
            map(&self.omega)?,
            map(&self.theta)?,
            self.q,
        )
    }

    pub fn grid(&self) -> IntervalGrid {
        self.grid
    }
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }
    pub fn dlambda(&self) -> &[f64] {
        &self.dlambda
    }
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }
    pub fn dmu(&self) -> &[f64] {
        &self.dmu
    }
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn q(&self) -> f64 {
        self.q
    }

    /// Returns a copy with `theta` replaced.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        let mut c = self.clone();
        if theta.len() != c.grid.len() {
            return Err(Error::ShapeMismatch {
                context: "theta",
                expected: c.grid.len(),
                actual: theta.len(),
            });
        }
        c.theta = theta;
        Ok(c)
    }

    /// Returns a copy with `omega` replaced.
    pub fn with_omega(&self, omega: Vec<f64>) -> Result<Self> {
        let mut c = self.clone();
        if omega.len() != c.grid.len() {
            return Err(Error::ShapeMismatch {
                context: "omega",
                expected: c.grid.len(),
                actual: omega.len(),
            });
        }
        c.omega = omega;
        Ok(c)
    }

    pub fn sup_bounds(&self) -> Bounds {
        let max = |a: &[f64]| a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = |a: &[f64]| a.iter().cloned().fold(f64::INFINITY, f64::min);
        let sup = |a: &[f64]| a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Bounds {
            lambda_max: max(&self.lambda),
            lambda_min: min(&self.lambda),
            mu_max: max(&self.mu),
            mu_min: min(&self.mu),
            sigma_max: max(&self.sigma),
            omega_max: max(&self.omega),
            theta_max: max(&self.theta),
            dlambda_sup: sup(&self.dlambda),
            dmu_sup: sup(&self.dmu),
        }
    }
}

fn gradient(a: &[f64], h: f64) -> Vec<f64> {
    let m = a.len();
    let mut d = vec![0.0; m];
    if m == 2 {
        let s = (a[1] - a[0]) / h;
        return vec![s, s];
    }
    for k in 1..m - 1 {
        d[k] = (a[k + 1] - a[k - 1]) / (2.0 * h);
    }
    d[0] = (-3.0 * a[0] + 4.0 * a[1] - a[2]) / (2.0 * h);
    d[m - 1] = (3.0 * a[m - 1] - 4.0 * a[m - 2] + a[m - 3]) / (2.0 * h);
    d
}

/// The reference family: `lambda = G x + 1`, `mu = e^{G x} + 1`, `sigma = theta = G (x + 1)`,
/// `omega = 5 (cosh x + 1)`, `q = G / 2`.
pub fn gamma_family(gamma: f64, m: usize) -> Result<CoefficientSet> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    CoefficientSet::from_fns(
        m,
        |x| gamma * x + 1.0,
        |_| gamma,
        |x| (gamma * x).exp() + 1.0,
        |x| gamma * (gamma * x).exp(),
        |x| gamma * (x + 1.0),
        |x| 5.0 * (x.cosh() + 1.0),
        |x| gamma * (x + 1.0),
        gamma / 2.0,
    )
}

/// Distribution that datasets draw coefficient sets from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum CoefficientFamily {
    /// `gamma_family(G)` with `G ~ U[gamma_min, gamma_max]`.
    Gamma { gamma_min: f64, gamma_max: f64 },
    /// Multiplicative smooth perturbations of the gamma family. Every coefficient
    /// is scaled by `1 + amplitude * p(x)` with `|p| <= 1`, so `amplitude < 0.9`
    /// keeps `lambda, mu >= 0.1`.
    RandomSmooth {
        gamma_min: f64,
        gamma_max: f64,
        amplitude: f64,
    },
}

impl CoefficientFamily {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = match *self {
            CoefficientFamily::Gamma { gamma_min, gamma_max } => (gamma_min, gamma_max),
            CoefficientFamily::RandomSmooth {
                gamma_min,
                gamma_max,
                amplitude,
            } => {
                if !(0.0..0.9).contains(&amplitude) {
                    return Err(Error::InvalidArgument(format!(
                        "amplitude must lie in [0, 0.9), got {amplitude}"
                    )));
                }
                (gamma_min, gamma_max)
            }
        };
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad gamma range [{lo}, {hi}]")));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        match *self {
            CoefficientFamily::Gamma { gamma_min, gamma_max } => {
                format!("gamma family, G ~ U[{gamma_min}, {gamma_max}]")
            }
            CoefficientFamily::RandomSmooth {
                gamma_min,
                gamma_max,
                amplitude,
            } => format!("random smooth, G ~ U[{gamma_min}, {gamma_max}], amplitude {amplitude}"),
        }
    }
}

/// Draws one coefficient set; a pure function of `(family, seed, m)`.
pub fn sample_random(family: &CoefficientFamily, seed: u64, m: usize) -> Result<CoefficientSet> {
    family.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *family {
        CoefficientFamily::Gamma { gamma_min, gamma_max } => {
            let g = uniform(&mut rng, gamma_min, gamma_max);
            gamma_family(g, m)
        }
        CoefficientFamily::RandomSmooth {
            gamma_min,
            gamma_max,
            amplitude,
        } => {
            let g = uniform(&mut rng, gamma_min, gamma_max);
            let lam = Bump::draw(&mut rng, amplitude);
            let mu = Bump::draw(&mut rng, amplitude);
            let sig = Bump::draw(&mut rng, amplitude);
            let om = Bump::draw(&mut rng, amplitude);
            let th = Bump::draw(&mut rng, amplitude);
            let q_scale = 1.0 + amplitude * uniform(&mut rng, -1.0, 1.0);
            CoefficientSet::from_fns(
                m,
                |x| (g * x + 1.0) * lam.value(x),
                |x| g * lam.value(x) + (g * x + 1.0) * lam.slope(x),
                |x| ((g * x).exp() + 1.0) * mu.value(x),
                |x| g * (g * x).exp() * mu.value(x) + ((g * x).exp() + 1.0) * mu.slope(x),
                |x| g * (x + 1.0) * sig.value(x),
                |x| 5.0 * (x.cosh() + 1.0) * om.value(x),
                |x| g * (x + 1.0) * th.value(x),
                0.5 * g * q_scale,
            )
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// `1 + a (c1 x + c2 cos(pi x)) / 2`, with `|c1|, |c2| <= 1`.
#[derive(Clone, Copy, Debug)]
struct Bump {
    a: f64,
    c1: f64,
    c2: f64,
}

impl Bump {
    fn draw(rng: &mut ChaCha8Rng, a: f64) -> Self {
        Self {
            a,
            c1: rng.gen_range(-1.0..=1.0),
            c2: rng.gen_range(-1.0..=1.0),
        }
    }

    fn value(&self, x: f64) -> f64 {
        1.0 + 0.5 * self.a * (self.c1 * x + self.c2 * (std::f64::consts::PI * x).cos())
    }

    fn slope(&self, x: f64) -> f64 {
        let pi = std::f64::consts::PI;
        0.5 * self.a * (self.c1 - self.c2 * pi * (pi * x).sin())
    }
}
