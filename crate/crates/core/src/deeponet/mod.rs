//! DeepONet surrogate for the map from plant coefficients to the gain kernels.
//!
//! A branch network reads the sampled coefficients and emits `2p` values, a trunk
//! network reads a point `(x, xi)` and emits `p` basis values, and
//! `k_i(x, xi) = sum_r branch[(i - 1) p + r] * trunk[r] + b_i`.

mod io;
pub mod mlp;
mod train;

use std::sync::{Arc, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::controller::GainVector;
use crate::error::{Error, Result};
use crate::kernels::{KernelField, KernelSet};
use crate::numerics::{interp_linear, IntervalGrid, TriangularGrid, DOMAIN_TOL};

pub use self::mlp::{Dense, Mlp};
pub use self::train::{
    evaluate, evaluate_indices, loss_and_gradient, split_indices, train, train_with, EpochStats, EvalReport, Prepared,
    TrainConfig, TrainHistory,
};

pub const DEFAULT_M_ENC: usize = 21;
pub const DEFAULT_P: usize = 64;

/// Layer sizes of a model; hidden widths exclude the input and output layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub m_enc: usize,
    pub p: usize,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            m_enc: DEFAULT_M_ENC,
            p: DEFAULT_P,
            branch_hidden: vec![128, 128],
            trunk_hidden: vec![128, 128],
        }
    }
}

impl Architecture {
    /// Uniform hidden width `w` in both networks.
    pub fn small(m_enc: usize, p: usize, w: usize) -> Self {
        Self {
            m_enc,
            p,
            branch_hidden: vec![w, w],
            trunk_hidden: vec![w, w],
        }
    }

    pub fn feature_len(&self) -> usize {
        5 * self.m_enc + 1
    }

    pub fn branch_widths(&self) -> Vec<usize> {
        let mut w = vec![self.feature_len()];
        w.extend(&self.branch_hidden);
        w.push(2 * self.p);
        w
    }

    pub fn trunk_widths(&self) -> Vec<usize> {
        let mut w = vec![2];
        w.extend(&self.trunk_hidden);
        w.push(self.p);
        w
    }

    fn validate(&self) -> Result<()> {
        if self.m_enc < 2 || self.p == 0 {
            return Err(Error::InvalidArgument(format!(
                "need m_enc >= 2 and p >= 1, got m_enc = {}, p = {}",
                self.m_enc, self.p
            )));
        }
        Ok(())
    }
}

/// Feature vector `[lambda(x_1..x_m), mu, sigma, omega, theta, q]` on `m_enc`
/// uniform nodes.
pub fn encode_input(coeffs: &CoefficientSet, m_enc: usize) -> Result<Vec<f64>> {
    encode_arrays(
        [coeffs.lambda(), coeffs.mu(), coeffs.sigma(), coeffs.omega(), coeffs.theta()],
        coeffs.q(),
        m_enc,
    )
}

/// [`encode_input`] on raw nodal arrays (each over a uniform grid of `[0, 1]`).
pub fn encode_arrays(arrays: [&[f64]; 5], q: f64, m_enc: usize) -> Result<Vec<f64>> {
    let nodes = IntervalGrid::with_nodes(m_enc)?.points();
    let mut out = Vec::with_capacity(5 * m_enc + 1);
    for a in arrays {
        for &x in &nodes {
            out.push(interp_linear(a, x)?);
        }
    }
    out.push(q);
    Ok(out)
}

/// Trunk coordinates: the triangle mapped from `[0, 1]^2` onto `[-1, 1]^2`.
pub fn trunk_input(x: f64, xi: f64) -> [f64; 2] {
    [2.0 * x - 1.0, 2.0 * xi - 1.0]
}

/// Memo of trunk outputs over `(1, xi_j)`, keyed by the `xi` grid.
#[derive(Debug, Default)]
struct TrunkCache(RwLock<Vec<(IntervalGrid, Arc<Vec<Vec<f64>>>)>>);

impl Clone for TrunkCache {
    fn clone(&self) -> Self {
        Self::default()
    }
}

#[derive(Clone, Debug)]
pub struct DeepONet {
    m_enc: usize,
    p: usize,
    branch: Mlp,
    trunk: Mlp,
    b1: f64,
    b2: f64,
    mean: Vec<f64>,
    scale: Vec<f64>,
    cache: TrunkCache,
}

impl PartialEq for DeepONet {
    fn eq(&self, o: &Self) -> bool {
        self.m_enc == o.m_enc
            && self.p == o.p
            && self.branch == o.branch
            && self.trunk == o.trunk
            && self.b1 == o.b1
            && self.b2 == o.b2
            && self.mean == o.mean
            && self.scale == o.scale
    }
}

/// Gradient of a scalar loss with respect to every model parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub branch: Mlp,
    pub trunk: Mlp,
    pub b1: f64,
    pub b2: f64,
}

impl Gradients {
    pub fn zeros_like(model: &DeepONet) -> Self {
        Self {
            branch: Mlp::zeros(&model.branch.widths()).unwrap(),
            trunk: Mlp::zeros(&model.trunk.widths()).unwrap(),
            b1: 0.0,
            b2: 0.0,
        }
    }

    /// Same order as [`DeepONet::parameters_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.branch.slices();
        v.extend(self.trunk.slices());
        v.push(std::slice::from_ref(&self.b1));
        v.push(std::slice::from_ref(&self.b2));
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.branch.slices_mut();
        v.extend(self.trunk.slices_mut());
        v.push(std::slice::from_mut(&mut self.b1));
        v.push(std::slice::from_mut(&mut self.b2));
        v
    }
}

impl DeepONet {
    /// Glorot-initialized model with identity normalization.
    pub fn new(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branch = Mlp::glorot(&arch.branch_widths(), &mut rng)?;
        let trunk = Mlp::glorot(&arch.trunk_widths(), &mut rng)?;
        Self::from_parts(arch.m_enc, arch.p, branch, trunk, 0.0, 0.0, None)
    }

    /// All weights and biases zero.
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let branch = Mlp::zeros(&arch.branch_widths())?;
        let trunk = Mlp::zeros(&arch.trunk_widths())?;
        Self::from_parts(arch.m_enc, arch.p, branch, trunk, 0.0, 0.0, None)
    }

    /// Assembles a model; `normalization` defaults to mean 0, scale 1.
    pub fn from_parts(
        m_enc: usize,
        p: usize,
        branch: Mlp,
        trunk: Mlp,
        b1: f64,
        b2: f64,
        normalization: Option<(Vec<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        let f = 5 * m_enc + 1;
        let dims = [
            (branch.input_dim(), f, "branch input"),
            (branch.output_dim(), 2 * p, "branch output"),
            (trunk.input_dim(), 2, "trunk input"),
            (trunk.output_dim(), p, "trunk output"),
        ];
        for (actual, expected, context) in dims {
            if actual != expected {
                return Err(Error::ShapeMismatch {
                    context,
                    expected,
                    actual,
                });
            }
        }
        let (mean, scale) = normalization.unwrap_or_else(|| (vec![0.0; f], vec![1.0; f]));
        let mut m = Self {
            m_enc,
            p,
            branch,
            trunk,
            b1,
            b2,
            mean: vec![],
            scale: vec![],
            cache: TrunkCache::default(),
        };
        m.set_normalization(mean, scale)?;
        Ok(m)
    }

    pub fn set_normalization(&mut self, mean: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        let f = self.feature_len();
        for v in [&mean, &scale] {
            if v.len() != f {
                return Err(Error::ShapeMismatch {
                    context: "normalization vector",
                    expected: f,
                    actual: v.len(),
                });
            }
        }
        if scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("normalization scale must be positive and finite".into()));
        }
        self.mean = mean;
        self.scale = scale;
        Ok(())
    }

    pub fn m_enc(&self) -> usize {
        self.m_enc
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn feature_len(&self) -> usize {
        5 * self.m_enc + 1
    }

    pub fn branch(&self) -> &Mlp {
        &self.branch
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn biases(&self) -> (f64, f64) {
        (self.b1, self.b2)
    }

    pub fn normalization(&self) -> (&[f64], &[f64]) {
        (&self.mean, &self.scale)
    }

    pub fn architecture(&self) -> Architecture {
        let bw = self.branch.widths();
        let tw = self.trunk.widths();
        Architecture {
            m_enc: self.m_enc,
            p: self.p,
            branch_hidden: bw[1..bw.len() - 1].to_vec(),
            trunk_hidden: tw[1..tw.len() - 1].to_vec(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.branch.parameter_count() + self.trunk.parameter_count() + 2
    }

    /// Mutable views of every parameter: branch layers, trunk layers, `b1`, `b2`.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.cache.0.get_mut().unwrap().clear();
        let mut v = self.branch.slices_mut();
        v.extend(self.trunk.slices_mut());
        v.push(std::slice::from_mut(&mut self.b1));
        v.push(std::slice::from_mut(&mut self.b2));
        v
    }

    pub fn normalize(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.feature_len() {
            return Err(Error::ShapeMismatch {
                context: "model features",
                expected: self.feature_len(),
                actual: features.len(),
            });
        }
        Ok(features
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((f, m), s)| (f - m) / s)
            .collect())
    }

    /// Branch output for raw (unnormalized) features.
    pub fn branch_output(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.branch.forward_one(&self.normalize(features)?))
    }

    pub fn trunk_output(&self, x: f64, xi: f64) -> Vec<f64> {
        self.trunk.forward_one(&trunk_input(x, xi))
    }

    /// The prediction rule for one point.
    pub fn combine(&self, branch_out: &[f64], trunk_out: &[f64]) -> (f64, f64) {
        let p = self.p;
        let dot = |b: &[f64]| b.iter().zip(trunk_out).fold(0.0, |acc, (a, t)| acc + a * t);
        (dot(&branch_out[..p]) + self.b1, dot(&branch_out[p..2 * p]) + self.b2)
    }

    /// `(k1_hat, k2_hat)` at each point of the triangle.
    pub fn forward(&self, features: &[f64], points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
        let bo = self.branch_output(features)?;
        points
            .iter()
            .map(|&(x, xi)| {
                if !(-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&x) || xi < -DOMAIN_TOL || xi > x + DOMAIN_TOL {
                    return Err(Error::OutsideTriangle { x, xi });
                }
                Ok(self.combine(&bo, &self.trunk_output(x, xi)))
            })
            .collect()
    }

    /// Predicted kernels on every node of `grid`.
    pub fn predict_features(&self, features: &[f64], grid: TriangularGrid) -> Result<KernelSet> {
        let out = self.forward(features, &grid.nodes())?;
        let (k1, k2): (Vec<f64>, Vec<f64>) = out.into_iter().unzip();
        KernelSet::new(KernelField::new(grid, k1)?, KernelField::new(grid, k2)?)
    }

    pub fn predict_kernels(&self, coeffs: &CoefficientSet, grid: TriangularGrid) -> Result<KernelSet> {
        self.predict_features(&encode_input(coeffs, self.m_enc)?, grid)
    }

    fn gain_basis(&self, grid: IntervalGrid) -> Arc<Vec<Vec<f64>>> {
        if let Some((_, b)) = self.cache.0.read().unwrap().iter().find(|(g, _)| *g == grid) {
            return b.clone();
        }
        let basis: Arc<Vec<Vec<f64>>> = Arc::new(grid.points().iter().map(|&xi| self.trunk_output(1.0, xi)).collect());
        let mut w = self.cache.0.write().unwrap();
        if !w.iter().any(|(g, _)| *g == grid) {
            w.push((grid, basis.clone()));
        }
        basis
    }

    /// Gains `(k1_hat(1, xi_j), k2_hat(1, xi_j))`. The trunk outputs along `x = 1` depend
    /// only on the weights and `xi_grid`, so they are computed once per grid and reused.
    pub fn infer_gains(&self, coeffs: &CoefficientSet, xi_grid: IntervalGrid) -> Result<GainVector> {
        let bo = self.branch_output(&encode_input(coeffs, self.m_enc)?)?;
        let basis = self.gain_basis(xi_grid);
        let (g1, g2) = basis.iter().map(|t| self.combine(&bo, t)).unzip();
        GainVector::new(xi_grid, g1, g2)
    }

    /// [`DeepONet::infer_gains`] without the trunk memo.
    pub fn infer_gains_uncached(&self, coeffs: &CoefficientSet, xi_grid: IntervalGrid) -> Result<GainVector> {
        let features = encode_input(coeffs, self.m_enc)?;
        let pts: Vec<(f64, f64)> = xi_grid.points().into_iter().map(|xi| (1.0, xi)).collect();
        let (g1, g2) = self.forward(&features, &pts)?.into_iter().unzip();
        GainVector::new(xi_grid, g1, g2)
    }
}

/// Free-function form of [`DeepONet::forward`].
pub fn forward(model: &DeepONet, features: &[f64], points: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    model.forward(features, points)
}

/// Free-function form of [`DeepONet::infer_gains`].
pub fn infer_gains(model: &DeepONet, coeffs: &CoefficientSet, xi_grid: IntervalGrid) -> Result<GainVector> {
    model.infer_gains(coeffs, xi_grid)
}
