//! Convolutional classifiers: architecture specs, parameter initialisation,
//! SGD-with-momentum training with validation-AUC checkpointing, prediction,
//! and head truncation into feature extractors.

mod extract;
pub(crate) mod io;
mod train;

pub use extract::{extract_features, truncate_head, FeatureExtractor, FeatureTable, Provenance};
pub(crate) use train::{train_with, Checkpoint};
pub use train::{
    select_checkpoint, sgd_momentum_step, train, EpochRecord, ExampleSet, TrainConfig, TrainedNetwork,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::{Layer, LayerCache, LayerKind, Mode, Tensor};

/// Index of the defect class in every binary network.
pub const POSITIVE_CLASS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerKind>,
    pub input_shape: Vec<usize>,
    pub classes: usize,
}

fn is_head_kind(k: &LayerKind) -> bool {
    matches!(
        k,
        LayerKind::Flatten
            | LayerKind::FullyConnected { .. }
            | LayerKind::Relu
            | LayerKind::Dropout { .. }
            | LayerKind::Softmax
    )
}

impl NetworkSpec {
    /// Start index of the classification component: the maximal suffix made
    /// only of flatten / fully-connected / relu / dropout / softmax layers.
    pub fn head_start(&self) -> usize {
        let mut start = self.layers.len();
        while start > 0 && is_head_kind(&self.layers[start - 1]) {
            start -= 1;
        }
        start
    }

    /// Checks the structural invariants and resolves every layer's shapes.
    pub fn resolve(&self) -> Result<Vec<Layer>> {
        if self.classes < 2 {
            return Err(Error::Config(format!("{}: need at least 2 classes", self.name)));
        }
        let n = self.layers.len();
        let ends_right = n >= 2
            && self.layers[n - 1] == LayerKind::Softmax
            && self.layers[n - 2] == LayerKind::FullyConnected { out_dim: self.classes };
        if !ends_right {
            return Err(Error::Config(format!(
                "{}: must end with fully_connected({}) then softmax",
                self.name, self.classes
            )));
        }
        if let Some(i) = self.layers[..n - 1].iter().position(|k| *k == LayerKind::Softmax) {
            return Err(Error::Config(format!(
                "{}: softmax at layer {i} is not the final layer",
                self.name
            )));
        }
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(n);
        for (i, kind) in self.layers.iter().enumerate() {
            let layer = Layer::new(*kind, &shape).map_err(|e| {
                Error::Config(format!(
                    "{}: layer {i} ({}) rejects input {shape:?}: {e}",
                    self.name,
                    kind.name()
                ))
            })?;
            shape = layer.output_shape.clone();
            out.push(layer);
        }
        Ok(out)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.resolve()?.iter().map(Layer::param_count).sum())
    }
}

/// Pixels in `[0, 1]` are mapped to roughly unit scale before the first
/// convolution; without it plain SGD at the fixed learning rate barely moves
/// the first layers within the epoch budget.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;

/// Built-in desk-scale architectures for 1×32×32 inputs.
pub fn architecture(name: &str) -> Result<NetworkSpec> {
    use LayerKind::*;
    let conv = |out_channels, kernel, padding| Conv2d {
        out_channels,
        kernel,
        stride: 1,
        padding,
    };
    let pool = |window| MaxPool2d { window, stride: window };
    let fc = |out_dim| FullyConnected { out_dim };
    let norm = Normalize {
        mean: INPUT_MEAN,
        std: INPUT_STD,
    };
    let layers = match name {
        "desk-vgg-a" => vec![
            norm,
            conv(8, 3, 1), Relu, pool(2),
            conv(16, 3, 1), Relu, pool(2),
            Flatten, fc(64), Relu, fc(32), Relu, fc(2), Softmax,
        ],
        "desk-vgg-b" => vec![
            norm,
            conv(6, 5, 2), Relu, pool(2),
            conv(12, 3, 1), Relu, pool(2),
            Flatten, fc(48), Relu, Dropout { rate: 0.25 }, fc(24), Relu, fc(2), Softmax,
        ],
        "desk-vgg-c" => vec![
            norm,
            conv(4, 3, 1), Relu, pool(2),
            conv(8, 3, 1), Relu, pool(4),
            Flatten, fc(32), Relu, fc(16), Relu, fc(2), Softmax,
        ],
        other => {
            return Err(Error::Config(format!(
                "unknown architecture {other:?} (known: {})",
                ARCHITECTURES.join(", ")
            )))
        }
    };
    Ok(NetworkSpec {
        name: name.to_owned(),
        layers,
        input_shape: vec![1, 32, 32],
        classes: 2,
    })
}

pub const ARCHITECTURES: [&str; 3] = ["desk-vgg-a", "desk-vgg-b", "desk-vgg-c"];

/// A network with concrete parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    let mut layers = spec.resolve()?;
    let mut rng = rng_from_seed(seed);
    for l in &mut layers {
        l.init_params(&mut rng);
    }
    Ok(Network {
        spec: spec.clone(),
        layers,
    })
}

impl Network {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Class probabilities (softmax output), dropout disabled.
    pub fn predict(&self, input: &Tensor) -> Result<Vec<f64>> {
        let mut x = input.clone();
        for l in &self.layers {
            x = l.infer(&x)?;
        }
        Ok(x.into_data())
    }

    /// Logits from a training-mode pass, with per-layer caches. The final
    /// softmax layer is skipped: training backpropagates the combined
    /// softmax + cross-entropy gradient directly into the logits.
    pub(crate) fn forward_logits(
        &self,
        input: &Tensor,
        rng: &mut crate::rng::SeededRng,
    ) -> Result<(Vec<f64>, Vec<LayerCache>)> {
        let n = self.layers.len() - 1;
        let mut caches = Vec::with_capacity(n);
        let mut x = input.clone();
        for l in &self.layers[..n] {
            let (y, c) = l.forward(&x, Mode::Train, Some(rng))?;
            caches.push(c);
            x = y;
        }
        Ok((x.into_data(), caches))
    }

    /// Accumulates parameter gradients (scaled by `scale`) for one example.
    pub(crate) fn backward_logits(
        &self,
        caches: &[LayerCache],
        grad_logits: Vec<f64>,
        scale: f64,
        grads: &mut [Vec<Tensor>],
    ) -> Result<()> {
        let n = self.layers.len() - 1;
        let mut g = Tensor::new(self.layers[n - 1].output_shape.clone(), grad_logits)?;
        for i in (0..n).rev() {
            let (gin, gparams) = self.layers[i].backward(&caches[i], &g)?;
            for (acc, gp) in grads[i].iter_mut().zip(gparams) {
                for (a, v) in acc.data_mut().iter_mut().zip(gp.data()) {
                    *a += scale * v;
                }
            }
            if i > 0 {
                g = gin;
            }
        }
        Ok(())
    }

    pub(crate) fn zero_grads(&self) -> Vec<Vec<Tensor>> {
        self.layers
            .iter()
            .map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape())).collect())
            .collect()
    }
}
