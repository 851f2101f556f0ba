use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops;
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Relu,
    Flatten,
    FullyConnected {
        out_dim: usize,
    },
    Dropout {
        rate: f64,
    },
    Softmax,
    /// Fixed standardisation `(x − mean) / std`; no parameters.
    Normalize {
        mean: f64,
        std: f64,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::Relu => "relu",
            LayerKind::Flatten => "flatten",
            LayerKind::FullyConnected { .. } => "fully_connected",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Softmax => "softmax",
            LayerKind::Normalize { .. } => "normalize",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerKind::Conv2d {
                out_channels,
                kernel,
                stride,
                ..
            } if out_channels == 0 || kernel == 0 || stride == 0 => Err(Error::Config(format!(
                "conv2d needs out_channels, kernel, stride >= 1 (got {out_channels}, {kernel}, {stride})"
            ))),
            LayerKind::MaxPool2d { window, stride } if window == 0 || stride == 0 => Err(
                Error::Config(format!("maxpool2d needs window, stride >= 1 (got {window}, {stride})")),
            ),
            LayerKind::FullyConnected { out_dim: 0 } => {
                Err(Error::Config("fully_connected needs out_dim >= 1".into()))
            }
            LayerKind::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")))
            }
            LayerKind::Normalize { mean, std } if !mean.is_finite() || !(std > 0.0 && std.is_finite()) => {
                Err(Error::Config(format!("normalize needs a finite mean and std > 0 (got {mean}, {std})")))
            }
            _ => Ok(()),
        }
    }

    /// Shape produced by this layer for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        match *self {
            LayerKind::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [_, h, w] = spatial(input, "conv2d")?;
                Ok(vec![
                    out_channels,
                    ops::conv_output_dim(h, kernel, stride, padding)?,
                    ops::conv_output_dim(w, kernel, stride, padding)?,
                ])
            }
            LayerKind::MaxPool2d { window, stride } => {
                let [c, h, w] = spatial(input, "maxpool2d")?;
                Ok(vec![
                    c,
                    ops::conv_output_dim(h, window, stride, 0)?,
                    ops::conv_output_dim(w, window, stride, 0)?,
                ])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::FullyConnected { out_dim } => {
                if input.len() != 1 {
                    return Err(Error::Shape(format!(
                        "fully_connected expects a flat vector, got {input:?}"
                    )));
                }
                Ok(vec![out_dim])
            }
            LayerKind::Softmax => {
                if input.len() != 1 {
                    return Err(Error::Shape(format!("softmax expects a vector, got {input:?}")));
                }
                Ok(input.to_vec())
            }
            LayerKind::Relu | LayerKind::Dropout { .. } | LayerKind::Normalize { .. } => Ok(input.to_vec()),
        }
    }

    /// Shapes of the trainable tensors (weights first, then bias).
    pub fn param_shapes(&self, input: &[usize]) -> Vec<Vec<usize>> {
        match *self {
            LayerKind::Conv2d {
                out_channels,
                kernel,
                ..
            } => vec![
                vec![out_channels, input[0], kernel, kernel],
                vec![out_channels],
            ],
            LayerKind::FullyConnected { out_dim } => {
                vec![vec![out_dim, input.iter().product()], vec![out_dim]]
            }
            _ => Vec::new(),
        }
    }
}

fn spatial(input: &[usize], what: &str) -> Result<[usize; 3]> {
    match input {
        [c, h, w] => Ok([*c, *h, *w]),
        s => Err(Error::Shape(format!("{what} expects C×H×W input, got {s:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Values kept from the forward pass that the backward pass needs.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Input(Tensor),
    Pool { input_shape: Vec<usize>, argmax: Vec<usize> },
    Shape(Vec<usize>),
    Mask(Option<Vec<f64>>),
    Probs(Vec<f64>),
}

/// A layer instance: its kind, resolved shapes and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub params: Vec<Tensor>,
}

impl Layer {
    /// Layer with zero-valued parameters.
    pub fn new(kind: LayerKind, input_shape: &[usize]) -> Result<Self> {
        let output_shape = kind.output_shape(input_shape)?;
        let params = kind
            .param_shapes(input_shape)
            .iter()
            .map(|s| Tensor::zeros(s))
            .collect();
        Ok(Self {
            kind,
            input_shape: input_shape.to_vec(),
            output_shape,
            params,
        })
    }

    /// He-style fan-in uniform initialisation: weights ~ U(-√(6/fan_in), √(6/fan_in)), biases 0.
    pub fn init_params(&mut self, rng: &mut SeededRng) {
        if let Some(w) = self.params.first_mut() {
            let fan_in: usize = w.shape()[1..].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt();
            for v in w.data_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        if let Some(b) = self.params.get_mut(1) {
            b.data_mut().fill(0.0);
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "{} expects input {:?}, got {:?}",
                self.kind.name(),
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass without keeping a cache.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        match self.kind {
            LayerKind::Conv2d { stride, padding, .. } => {
                ops::conv2d(x, &self.params[0], &self.params[1], stride, padding)
            }
            LayerKind::MaxPool2d { window, stride } => Ok(ops::maxpool2d(x, window, stride)?.0),
            LayerKind::Relu => Ok(ops::relu(x)),
            LayerKind::Flatten => x.clone().reshape(&self.output_shape),
            LayerKind::FullyConnected { .. } => ops::fully_connected(x, &self.params[0], &self.params[1]),
            LayerKind::Dropout { .. } => Ok(x.clone()),
            LayerKind::Softmax => Tensor::new(self.output_shape.clone(), ops::softmax(x.data())),
            LayerKind::Normalize { mean, std } => {
                Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| (v - mean) / std).collect())
            }
        }
    }

    /// Forward pass that records what the backward pass needs. `rng` is only
    /// consulted by dropout in training mode.
    pub fn forward(&self, x: &Tensor, mode: Mode, rng: Option<&mut SeededRng>) -> Result<(Tensor, LayerCache)> {
        self.check_input(x)?;
        match self.kind {
            LayerKind::Conv2d { .. } | LayerKind::FullyConnected { .. } | LayerKind::Relu => {
                Ok((self.infer(x)?, LayerCache::Input(x.clone())))
            }
            LayerKind::MaxPool2d { window, stride } => {
                let (y, argmax) = ops::maxpool2d(x, window, stride)?;
                Ok((
                    y,
                    LayerCache::Pool {
                        input_shape: x.shape().to_vec(),
                        argmax,
                    },
                ))
            }
            LayerKind::Flatten => Ok((
                x.clone().reshape(&self.output_shape)?,
                LayerCache::Shape(x.shape().to_vec()),
            )),
            LayerKind::Normalize { .. } => Ok((self.infer(x)?, LayerCache::Shape(x.shape().to_vec()))),
            LayerKind::Dropout { rate } => match (mode, rng) {
                (Mode::Train, Some(rng)) => {
                    let (y, mask) = ops::dropout(x, rate, true, rng);
                    Ok((y, LayerCache::Mask(mask)))
                }
                (Mode::Train, None) => Err(Error::Config(
                    "dropout in training mode needs a random source".into(),
                )),
                (Mode::Eval, _) => Ok((x.clone(), LayerCache::Mask(None))),
            },
            LayerKind::Softmax => {
                let p = ops::softmax(x.data());
                Ok((Tensor::new(self.output_shape.clone(), p.clone())?, LayerCache::Probs(p)))
            }
        }
    }

    /// Returns the gradient with respect to the input and to each parameter tensor.
    pub fn backward(&self, cache: &LayerCache, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        if grad_out.shape() != self.output_shape.as_slice() {
            return Err(Error::Shape(format!(
                "{} upstream gradient {:?}, expected {:?}",
                self.kind.name(),
                grad_out.shape(),
                self.output_shape
            )));
        }
        match (self.kind, cache) {
            (LayerKind::Conv2d { stride, padding, .. }, LayerCache::Input(x)) => {
                let g = ops::conv2d_backward(x, &self.params[0], stride, padding, grad_out)?;
                Ok((g.input, vec![g.kernels, g.bias]))
            }
            (LayerKind::FullyConnected { .. }, LayerCache::Input(x)) => {
                let g = ops::fully_connected_backward(x, &self.params[0], grad_out)?;
                Ok((g.input, vec![g.weights, g.bias]))
            }
            (LayerKind::Relu, LayerCache::Input(x)) => Ok((ops::relu_backward(x, grad_out)?, Vec::new())),
            (LayerKind::MaxPool2d { .. }, LayerCache::Pool { input_shape, argmax }) => Ok((
                ops::maxpool2d_backward(input_shape, argmax, grad_out)?,
                Vec::new(),
            )),
            (LayerKind::Flatten, LayerCache::Shape(s)) => Ok((grad_out.clone().reshape(s)?, Vec::new())),
            (LayerKind::Normalize { std, .. }, LayerCache::Shape(_)) => Ok((
                Tensor::new(grad_out.shape().to_vec(), grad_out.data().iter().map(|g| g / std).collect())?,
                Vec::new(),
            )),
            (LayerKind::Dropout { .. }, LayerCache::Mask(mask)) => {
                let g = match mask {
                    Some(m) => {
                        let d = grad_out.data().iter().zip(m).map(|(g, m)| g * m).collect();
                        Tensor::new(grad_out.shape().to_vec(), d)?
                    }
                    None => grad_out.clone(),
                };
                Ok((g, Vec::new()))
            }
            (LayerKind::Softmax, LayerCache::Probs(p)) => Ok((
                Tensor::new(self.input_shape.clone(), ops::softmax_backward(p, grad_out.data()))?,
                Vec::new(),
            )),
            (kind, _) => Err(Error::Config(format!(
                "cache does not belong to a {} layer",
                kind.name()
            ))),
        }
    }
}
