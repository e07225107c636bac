use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{encode_arrays, trunk_input, Architecture, DeepONet, Gradients};
use crate::dataset::{splitmix64, Dataset};
use crate::error::{Error, Result};
use crate::numerics::TriangularGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial Adam step size.
    pub learning_rate: f64,
    /// Step size at the last epoch; the rate decays geometrically in between.
    pub final_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Fraction of samples used for training; the rest is held out.
    pub split: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::default(),
            epochs: 1000,
            batch_size: 32,
            learning_rate: 1e-3,
            final_learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            split: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.learning_rate,
            self.final_learning_rate,
            self.beta1,
            self.beta2,
            self.epsilon,
        ];
        if self.epochs == 0 || self.batch_size == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(
                "epochs, batch size, learning rates and optimizer constants must be positive".into(),
            ));
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::InvalidArgument("moment decay rates must lie in (0, 1)".into()));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::InvalidArgument(format!("split must lie in (0, 1), got {}", self.split)));
        }
        Ok(())
    }

    fn rate(&self, epoch: usize) -> f64 {
        if self.epochs == 1 {
            return self.learning_rate;
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        self.learning_rate * (self.final_learning_rate / self.learning_rate).powf(frac)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss over each epoch's minibatches.
    pub train_loss: Vec<f64>,
    /// Held-out relative L2 error per kernel after each epoch (empty without a test split).
    pub test_rel_l2: Vec<[f64; 2]>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Dataset arranged as matrices: raw features (samples x features), kernel targets
/// (samples x nodes) and mapped trunk inputs (nodes x 2).
#[derive(Clone, Debug)]
pub struct Prepared {
    pub grid: TriangularGrid,
    pub features: Array2<f64>,
    pub k1: Array2<f64>,
    pub k2: Array2<f64>,
    pub points: Array2<f64>,
}

impl Prepared {
    pub fn new(ds: &Dataset, m_enc: usize) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        let grid = ds.grid()?;
        let nodes = grid.node_count();
        let f = 5 * m_enc + 1;
        let mut features = Array2::zeros((ds.len(), f));
        let mut k1 = Array2::zeros((ds.len(), nodes));
        let mut k2 = Array2::zeros((ds.len(), nodes));
        for (i, s) in ds.samples.iter().enumerate() {
            let enc = encode_arrays([&s.lambda, &s.mu, &s.sigma, &s.omega, &s.theta], s.q, m_enc)?;
            features.row_mut(i).assign(&Array1::from(enc));
            for (dst, src) in [(&mut k1, &s.k1), (&mut k2, &s.k2)] {
                if src.len() != nodes {
                    return Err(Error::ShapeMismatch {
                        context: "dataset kernel array",
                        expected: nodes,
                        actual: src.len(),
                    });
                }
                dst.row_mut(i).assign(&Array1::from(src.clone()));
            }
        }
        let pts: Vec<[f64; 2]> = grid.nodes().into_iter().map(|(x, xi)| trunk_input(x, xi)).collect();
        let points = Array2::from_shape_fn((nodes, 2), |(r, c)| pts[r][c]);
        Ok(Self {
            grid,
            features,
            k1,
            k2,
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn normalized(&self, model: &DeepONet, indices: &[usize]) -> Array2<f64> {
        let mean = Array1::from(model.mean.clone());
        let scale = Array1::from(model.scale.clone());
        let mut x = self.features.select(Axis(0), indices);
        x -= &mean;
        x /= &scale;
        x
    }

    /// Model predictions `(k1, k2)` for the listed samples at every grid node.
    pub fn predict(&self, model: &DeepONet, indices: &[usize]) -> (Array2<f64>, Array2<f64>) {
        let bo = model.branch.forward_batch(self.normalized(model, indices).view()).acts.pop().unwrap();
        let to = model.trunk.forward_batch(self.points.view()).acts.pop().unwrap();
        predict_from(model, &bo, &to)
    }
}

fn predict_from(model: &DeepONet, bo: &Array2<f64>, to: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let p = model.p;
    let p1 = bo.slice(s![.., ..p]).dot(&to.t()) + model.b1;
    let p2 = bo.slice(s![.., p..]).dot(&to.t()) + model.b2;
    (p1, p2)
}

/// Frozen per-feature mean and standard deviation; constant features get scale 1.
fn feature_statistics(features: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let mean = features.mean_axis(Axis(0)).unwrap();
    let std = features.std_axis(Axis(0), 0.0);
    let scale = std
        .iter()
        .zip(&mean)
        .map(|(&s, &m)| if s > 1e-12 * m.abs().max(1.0) { s } else { 1.0 })
        .collect();
    (mean.to_vec(), scale)
}

/// Mean squared error over both kernels and every node of the listed samples, and
/// its gradient with respect to all model parameters.
pub fn loss_and_gradient(model: &DeepONet, data: &Prepared, indices: &[usize]) -> Result<(f64, Gradients)> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if data.features.ncols() != model.feature_len() {
        return Err(Error::ShapeMismatch {
            context: "prepared features",
            expected: model.feature_len(),
            actual: data.features.ncols(),
        });
    }
    let p = model.p;
    let x = data.normalized(model, indices);
    let btape = model.branch.forward_batch(x.view());
    let ttape = model.trunk.forward_batch(data.points.view());
    let (bo, to) = (btape.output(), ttape.output());
    let (mut r1, mut r2) = predict_from(model, bo, to);
    r1 -= &data.k1.select(Axis(0), indices);
    r2 -= &data.k2.select(Axis(0), indices);

    let count = (indices.len() * data.points.nrows()) as f64;
    let loss = (r1.iter().map(|v| v * v).sum::<f64>() + r2.iter().map(|v| v * v).sum::<f64>()) / (2.0 * count);
    // d loss / d prediction
    r1 /= count;
    r2 /= count;

    let mut grads = Gradients::zeros_like(model);
    grads.b1 = r1.sum();
    grads.b2 = r2.sum();
    let d_bo = concatenate![Axis(1), r1.dot(to), r2.dot(to)];
    let d_to = r1.t().dot(&bo.slice(s![.., ..p])) + r2.t().dot(&bo.slice(s![.., p..]));
    model.branch.backward(&btape, d_bo, &mut grads.branch);
    model.trunk.backward(&ttape, d_to, &mut grads.trunk);
    Ok((loss, grads))
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    fn new(model: &DeepONet) -> Self {
        Self {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut DeepONet, g: &Gradients, cfg: &TrainConfig, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let params = model.parameters_mut();
        let (ms, vs) = (self.m.slices_mut(), self.v.slices_mut());
        for (((w, g), m), v) in params.into_iter().zip(g.slices()).zip(ms).zip(vs) {
            for k in 0..w.len() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                w[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Per-kernel relative L2 errors, averaged over samples with nonzero kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rel_l2: [f64; 2],
    /// Samples whose exact kernel has zero norm, per kernel.
    pub skipped: [usize; 2],
    pub samples: usize,
}

fn rel_errors(data: &Prepared, model: &DeepONet, indices: &[usize]) -> EvalReport {
    let w = Array1::from(data.grid.quadrature_weights());
    let mut per: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut skipped = [0usize; 2];
    for chunk in indices.chunks(256) {
        let (p1, p2) = data.predict(model, chunk);
        for (row, &i) in chunk.iter().enumerate() {
            for (k, (pred, exact)) in [(&p1, &data.k1), (&p2, &data.k2)].into_iter().enumerate() {
                let e = exact.row(i);
                let norm: f64 = e.iter().zip(&w).map(|(v, w)| w * v * v).sum();
                if norm == 0.0 {
                    skipped[k] += 1;
                    continue;
                }
                let diff: f64 = pred.row(row).iter().zip(e).zip(&w).map(|((a, b), w)| w * (a - b) * (a - b)).sum();
                per[k].push((diff / norm).sqrt());
            }
        }
    }
    let mean = |v: &mut Vec<f64>| {
        if v.is_empty() {
            return f64::NAN;
        }
        // Sorted so the mean does not depend on sample order.
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>() / v.len() as f64
    };
    EvalReport {
        rel_l2: [mean(&mut per[0]), mean(&mut per[1])],
        skipped,
        samples: indices.len(),
    }
}

/// [`evaluate`] restricted to the listed samples.
pub fn evaluate_indices(model: &DeepONet, ds: &Dataset, indices: &[usize]) -> Result<EvalReport> {
    let data = Prepared::new(ds, model.m_enc)?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
        return Err(Error::InvalidArgument(format!("sample index {bad} out of range")));
    }
    Ok(rel_errors(&data, model, indices))
}

/// Relative L2 error `|k_hat - k| / |k|` per kernel, trapezoid-weighted over the
/// triangle, averaged over the dataset.
pub fn evaluate(model: &DeepONet, ds: &Dataset) -> Result<EvalReport> {
    let data = Prepared::new(ds, model.m_enc)?;
    let all: Vec<usize> = (0..data.len()).collect();
    Ok(rel_errors(&data, model, &all))
}

/// Summary passed to the progress callback after each epoch.
#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_rel_l2: Option<[f64; 2]>,
    pub learning_rate: f64,
}

/// Seeded shuffle of `0..n` cut into (train, test); train gets `round(n * split)`,
/// at least one sample.
pub fn split_indices(n: usize, split: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * split).round().clamp(1.0, n as f64) as usize;
    let test = order.split_off(n_train);
    (order, test)
}

pub fn train(ds: &Dataset, config: &TrainConfig) -> Result<(DeepONet, TrainHistory)> {
    train_with(ds, config, |_| {})
}

/// Trains a model from scratch. The result is a pure function of `(ds, config)`.
pub fn train_with(
    ds: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(DeepONet, TrainHistory)> {
    config.validate()?;
    let data = Prepared::new(ds, config.architecture.m_enc)?;
    let (train_idx, test_idx) = split_indices(data.len(), config.split, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed));

    let mut model = DeepONet::new(&config.architecture, config.seed)?;
    let (mean, scale) = feature_statistics(&data.features.select(Axis(0), &train_idx));
    model.set_normalization(mean, scale)?;

    let mut adam = Adam::new(&model);
    let mut history = TrainHistory {
        train_indices: train_idx.clone(),
        test_indices: test_idx.clone(),
        ..Default::default()
    };
    let mut epoch_order = train_idx;
    for epoch in 0..config.epochs {
        let lr = config.rate(epoch);
        epoch_order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in epoch_order.chunks(config.batch_size) {
            let (loss, grads) = loss_and_gradient(&model, &data, batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("loss became {loss} (learning rate {lr:e})"),
                });
            }
            total += loss * batch.len() as f64;
            adam.step(&mut model, &grads, config, lr);
        }
        let train_loss = total / epoch_order.len() as f64;
        history.train_loss.push(train_loss);
        let test = if test_idx.is_empty() {
            None
        } else {
            let r = rel_errors(&data, &model, &test_idx).rel_l2;
            history.test_rel_l2.push(r);
            Some(r)
        };
        on_epoch(&EpochStats {
            epoch,
            train_loss,
            test_rel_l2: test,
            learning_rate: lr,
        });
    }
    Ok((model, history))
}
