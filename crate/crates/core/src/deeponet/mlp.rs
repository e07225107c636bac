//! Fully connected tanh networks with a linear output layer.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// One affine layer, `y = W x + b` with `W` stored as `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((output, input)),
            b: Array1::zeros(output),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((output, input), |_| rng.gen_range(-limit..limit)),
            b: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer outputs of a batched forward pass; `acts[0]` is the input.
pub struct Tape {
    pub acts: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().unwrap()
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "network widths must list at least two positive sizes, got {widths:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    pub fn glorot(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        check_widths(widths)?;
        Ok(Self {
            layers: widths.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect(),
        })
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        Ok(Self {
            layers: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    /// Builds a network from layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::ShapeMismatch {
                    context: "layer chain",
                    expected: pair[0].output_dim(),
                    actual: pair[1].input_dim(),
                });
            }
        }
        for l in &layers {
            if l.b.len() != l.output_dim() {
                return Err(Error::ShapeMismatch {
                    context: "layer bias",
                    expected: l.output_dim(),
                    actual: l.b.len(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].input_dim()];
        w.extend(self.layers.iter().map(Dense::output_dim));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Single-input evaluation. Each output is one row-by-vector dot product, so the
    /// result does not depend on what else is evaluated alongside it.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut a = Array1::from(x.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Array1::from_shape_fn(layer.output_dim(), |o| layer.w.row(o).dot(&a) + layer.b[o]);
            if k < last {
                z.mapv_inplace(f64::tanh);
            }
            a = z;
        }
        a.to_vec()
    }

    /// Batched forward pass over the rows of `x`, keeping activations for backprop.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Tape {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = acts[k].dot(&layer.w.t());
            z += &layer.b;
            if k < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        Tape { acts }
    }

    /// Accumulates parameter gradients into `grads` given `d loss / d output`.
    pub fn backward(&self, tape: &Tape, grad_out: Array2<f64>, grads: &mut Mlp) {
        let last = self.layers.len() - 1;
        let mut delta = grad_out;
        for k in (0..self.layers.len()).rev() {
            if k < last {
                // tanh' = 1 - a^2 on the stored post-activation output.
                delta.zip_mut_with(&tape.acts[k + 1], |d, &a| *d *= 1.0 - a * a);
            }
            let g = &mut grads.layers[k];
            g.w += &delta.t().dot(&tape.acts[k]);
            g.b += &delta.sum_axis(Axis(0));
            if k > 0 {
                delta = delta.dot(&self.layers[k].w);
            }
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice().unwrap(), l.b.as_slice().unwrap()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_slice_mut().unwrap(), l.b.as_slice_mut().unwrap()])
            .collect()
    }
}
