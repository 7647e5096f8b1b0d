use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::softmax_in_place;
use super::matrix::{add_outer, sigmoid, Matrix};
use super::Params;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Sigmoid,
    /// The first `linear_prefix` outputs pass through unchanged; the rest
    /// are split into consecutive groups, each normalized by softmax.
    SoftmaxGroups {
        linear_prefix: usize,
        groups: Vec<usize>,
    },
}

impl Activation {
    fn apply(&self, z: &mut [f64]) {
        match self {
            Activation::Linear => {}
            Activation::Sigmoid => z.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::SoftmaxGroups {
                linear_prefix,
                groups,
            } => {
                let mut start = *linear_prefix;
                for &len in groups {
                    softmax_in_place(&mut z[start..start + len]);
                    start += len;
                }
            }
        }
    }

    /// Converts dL/dy into dL/dz in place, given the activation output y.
    fn backprop(&self, y: &[f64], dy: &mut [f64]) {
        match self {
            Activation::Linear => {}
            Activation::Sigmoid => {
                for (d, &v) in dy.iter_mut().zip(y) {
                    *d *= v * (1.0 - v);
                }
            }
            Activation::SoftmaxGroups {
                linear_prefix,
                groups,
            } => {
                let mut start = *linear_prefix;
                for &len in groups {
                    let ys = &y[start..start + len];
                    let ds = &mut dy[start..start + len];
                    let inner: f64 = ys.iter().zip(ds.iter()).map(|(a, b)| a * b).sum();
                    for (d, &p) in ds.iter_mut().zip(ys) {
                        *d = p * (*d - inner);
                    }
                    start += len;
                }
            }
        }
    }

    fn width(&self) -> Option<usize> {
        match self {
            Activation::SoftmaxGroups {
                linear_prefix,
                groups,
            } => Some(linear_prefix + groups.iter().sum::<usize>()),
            _ => None,
        }
    }

    /// Multiplier on the Glorot range. Logistic units get 4, their slope at
    /// the origin being 1/4; otherwise deep sigmoid stacks start with an
    /// almost constant signal at the top.
    pub fn init_gain(&self) -> f64 {
        match self {
            Activation::Sigmoid => 4.0,
            _ => 1.0,
        }
    }
}

/// Fully connected layer, `y = act(W x + b)` with `W` of shape out × in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        if let Some(w) = activation.width() {
            assert_eq!(w, outputs, "softmax groups must cover the layer");
        }
        Self {
            weights: Matrix::glorot_scaled(outputs, inputs, activation.init_gain(), rng),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows
    }

    pub fn zero_grads(&self) -> DenseGrads {
        DenseGrads {
            weights: vec![0.0; self.weights.data.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.bias.len() != self.weights.rows
            || self.weights.data.len() != self.weights.rows * self.weights.cols
        {
            return Err(Error::ShapeMismatch(format!(
                "dense {}x{} with bias {}",
                self.weights.rows,
                self.weights.cols,
                self.bias.len()
            )));
        }
        if let Some(w) = self.activation.width() {
            if w != self.weights.rows {
                return Err(Error::ShapeMismatch(format!(
                    "softmax groups cover {w} of {} outputs",
                    self.weights.rows
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs() {
            return Err(Error::ShapeMismatch(format!(
                "dense expects {} inputs, got {}",
                self.inputs(),
                x.len()
            )));
        }
        let mut y = Vec::new();
        self.forward_into(x, &mut y);
        Ok(y)
    }

    /// Unchecked forward pass writing into a reusable buffer.
    pub fn forward_into(&self, x: &[f64], y: &mut Vec<f64>) {
        y.clear();
        y.extend_from_slice(&self.bias);
        self.weights.matvec_acc(x, y);
        self.activation.apply(y);
    }

    /// Accumulates parameter gradients into `grads` and returns dL/dx.
    /// `y` must be the output of `forward(x)`.
    pub fn backward(&self, x: &[f64], y: &[f64], dy: &[f64], grads: &mut DenseGrads) -> Vec<f64> {
        let mut dz = dy.to_vec();
        self.activation.backprop(y, &mut dz);
        add_outer(&mut grads.weights, &dz, x);
        for (g, d) in grads.bias.iter_mut().zip(&dz) {
            *g += d;
        }
        let mut dx = vec![0.0; self.inputs()];
        self.weights.matvec_t_acc(&dz, &mut dx);
        dx
    }
}

/// Standalone backward pass: recomputes the forward output and returns
/// `(dx, parameter gradients)`.
pub fn dense_backward(layer: &DenseLayer, x: &[f64], dy: &[f64]) -> Result<(Vec<f64>, DenseGrads)> {
    let y = layer.forward(x)?;
    if dy.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient has {} entries for {} outputs",
            dy.len(),
            y.len()
        )));
    }
    let mut grads = layer.zero_grads();
    let dx = layer.backward(x, &y, dy, &mut grads);
    Ok((dx, grads))
}

impl Params for DenseLayer {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weights.data, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights.data, &mut self.bias]
    }
}

impl Params for DenseGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weights, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights, &mut self.bias]
    }
}
