use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::check_dim;
use crate::rng::RngState;
use crate::velocity::VelocityField;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    /// softplus, `ln(1 + eˣ)`
    SmoothRelu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::SmoothRelu => {
                if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative, given the pre-activation `x` and the activation value `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::SmoothRelu => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

/// Fully connected network `(z, t) ↦ v`, input width `d + 1`, output width `d`.
///
/// Parameters live in one flat vector, layer by layer: the row-major weight
/// matrix (`out × in`) followed by the bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Per-layer inputs and pre-activations kept for the backward pass.
#[derive(Default)]
pub(crate) struct Tape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Mlp {
    fn param_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn check_widths(widths: &[usize]) -> Result<()> {
        if widths.len() < 2 || widths.iter().any(|w| *w == 0) {
            return Err(Error::invalid(format!("bad layer widths {widths:?}")));
        }
        if widths[0] != widths[widths.len() - 1] + 1 {
            return Err(Error::invalid(format!(
                "input width must be output width + 1 for (z, t), got {widths:?}"
            )));
        }
        Ok(())
    }

    pub fn from_params(widths: Vec<usize>, activation: Activation, params: Vec<f64>) -> Result<Self> {
        Self::check_widths(&widths)?;
        check_dim(Self::param_count(&widths), params.len())?;
        if !crate::linalg::all_finite(&params) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(Self {
            widths,
            activation,
            params,
        })
    }

    pub fn zeros(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let n = Self::param_count(&widths);
        Self::from_params(widths, activation, vec![0.0; n])
    }

    /// Network for `d`-dimensional states with the given hidden widths.
    /// Weights are drawn from `N(0, 1/fan_in)`, biases start at zero.
    pub fn random(d: usize, hidden: &[usize], activation: Activation, rng: &mut RngState) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(d + 1);
        widths.extend_from_slice(hidden);
        widths.push(d);
        let mut net = Self::zeros(widths, activation)?;
        for layer in net.layers() {
            let scale = (1.0 / layer.fan_in as f64).sqrt();
            for p in &mut net.params[layer.w..layer.w + layer.fan_in * layer.fan_out] {
                *p = scale * rng.standard_normal();
            }
        }
        Ok(net)
    }

    fn layers(&self) -> Vec<Layer> {
        let mut off = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let layer = Layer {
                    w: off,
                    b: off + w[0] * w[1],
                    fan_in: w[0],
                    fan_out: w[1],
                };
                off += w[0] * w[1] + w[1];
                layer
            })
            .collect()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn state_dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    /// Sum of squared parameters.
    pub fn param_norm_sq(&self) -> f64 {
        crate::linalg::norm_sq(&self.params)
    }

    /// `v(z, t)`
    pub fn forward(&self, z: &[f64], t: f64) -> Vec<f64> {
        let mut tape = Tape::default();
        self.forward_taped(z, t, &mut tape);
        tape.output
    }

    pub(crate) fn forward_taped<'a>(&self, z: &[f64], t: f64, tape: &'a mut Tape) -> &'a [f64] {
        let layers = self.layers();
        tape.inputs.resize(layers.len(), Vec::new());
        tape.pre.resize(layers.len(), Vec::new());
        let mut x: Vec<f64> = Vec::with_capacity(z.len() + 1);
        x.extend_from_slice(z);
        x.push(t);
        for (l, layer) in layers.iter().enumerate() {
            let last = l + 1 == layers.len();
            let w = &self.params[layer.w..layer.b];
            let b = &self.params[layer.b..layer.b + layer.fan_out];
            let pre: Vec<f64> = (0..layer.fan_out)
                .map(|o| {
                    let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    b[o] + crate::linalg::dot(row, &x)
                })
                .collect();
            let next = if last {
                pre.clone()
            } else {
                pre.iter().map(|p| self.activation.apply(*p)).collect()
            };
            tape.inputs[l] = std::mem::replace(&mut x, next);
            tape.pre[l] = pre;
        }
        tape.output = x;
        &tape.output
    }

    /// Accumulates `∂(grad_out · output)/∂θ` into `grads`.
    pub(crate) fn backward(&self, tape: &Tape, grad_out: &[f64], grads: &mut [f64]) {
        let layers = self.layers();
        let mut delta = grad_out.to_vec();
        for (l, layer) in layers.iter().enumerate().rev() {
            let input = &tape.inputs[l];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let g = &mut grads[layer.w + o * layer.fan_in..layer.w + (o + 1) * layer.fan_in];
                crate::linalg::axpy(*d, input, g);
                grads[layer.b + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[layer.w..layer.b];
            let mut prev = vec![0.0; layer.fan_in];
            for (o, d) in delta.iter().enumerate() {
                crate::linalg::axpy(*d, &w[o * layer.fan_in..(o + 1) * layer.fan_in], &mut prev);
            }
            let pre = &tape.pre[l - 1];
            for ((p, x), y) in prev.iter_mut().zip(pre).zip(input) {
                *p *= self.activation.derivative(*x, *y);
            }
            delta = prev;
        }
    }
}

impl VelocityField for Mlp {
    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn velocity_into(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        check_dim(self.state_dim(), z.len())?;
        let mut tape = Tape::default();
        out.copy_from_slice(self.forward_taped(z, t, &mut tape));
        Ok(())
    }
}
