use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Network, POSITIVE_CLASS};
use crate::data::normalize_and_batch;
use crate::error::{Error, Result};
use crate::metrics::roc_auc;
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::{cross_entropy, softmax, softmax_cross_entropy_grad, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Inputs with aligned class labels, borrowed from a dataset.
#[derive(Debug, Clone, Default)]
pub struct ExampleSet<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub labels: Vec<usize>,
}

impl<'a> ExampleSet<'a> {
    pub fn new(inputs: Vec<&'a Tensor>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} inputs for {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn require_both_classes(&self, what: &str) -> Result<()> {
        let pos = self.labels.iter().filter(|&&l| l == POSITIVE_CLASS).count();
        if pos == 0 || pos == self.len() {
            return Err(Error::AucUndefined(format!(
                "{what} split has {pos} positive and {} negative examples",
                self.len() - pos
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number; 0 denotes the untrained initialisation.
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch (absent for the initialisation).
    pub train_loss: Option<f64>,
    pub validation_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedNetwork {
    /// Parameters at the selected checkpoint.
    pub network: Network,
    pub history: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub validation_auc: f64,
    /// Wall-clock seconds spent in `train`. Not persisted.
    pub train_seconds: f64,
}

impl TrainedNetwork {
    pub fn name(&self) -> &str {
        &self.network.spec.name
    }

    pub fn predict(&self, input: &Tensor) -> Result<Vec<f64>> {
        self.network.predict(input)
    }

    pub fn positive_scores(&self, inputs: &[&Tensor]) -> Result<Vec<f64>> {
        inputs
            .iter()
            .map(|x| Ok(self.network.predict(x)?[POSITIVE_CLASS]))
            .collect()
    }
}

/// Velocity-form momentum: `v ← μ·v − η·g`, then `p ← p + v`.
pub fn sgd_momentum_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Shape(format!(
            "sgd step over {} params with {} grads and {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - learning_rate * g;
        *p += *v;
    }
    Ok(())
}

/// 1-based epoch of the earliest maximum in a per-epoch AUC history.
pub fn select_checkpoint(aucs: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &a) in aucs.iter().enumerate() {
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best.map(|(i, _)| i + 1)
}

fn validation_auc(net: &Network, val: &ExampleSet<'_>) -> Result<f64> {
    let scores = val
        .inputs
        .iter()
        .map(|x| Ok(net.predict(x)?[POSITIVE_CLASS]))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<bool> = val.labels.iter().map(|&l| l == POSITIVE_CLASS).collect();
    roc_auc(&scores, &truth).map_err(|e| match e {
        Error::Validation(m) => Error::Training(format!("{}: validation scores invalid: {m}", net.spec.name)),
        other => other,
    })
}

const DROPOUT_STREAM: u64 = 0xd0;

/// Mini-batch SGD with momentum. After every epoch the validation AUC is
/// measured; the returned parameters are those of the earliest epoch with the
/// highest validation AUC.
pub fn train(
    network: Network,
    train_set: &ExampleSet<'_>,
    val_set: &ExampleSet<'_>,
    config: &TrainConfig,
) -> Result<TrainedNetwork> {
    train_with(network, train_set, val_set, config, Checkpoint::BestValidationAuc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Checkpoint {
    BestValidationAuc,
    FinalEpoch,
}

pub(crate) fn train_with(
    mut network: Network,
    train_set: &ExampleSet<'_>,
    val_set: &ExampleSet<'_>,
    config: &TrainConfig,
    checkpoint: Checkpoint,
) -> Result<TrainedNetwork> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Training("train and validation splits must be non-empty".into()));
    }
    train_set.require_both_classes("training")?;
    val_set.require_both_classes("validation")?;
    let classes = network.spec.classes;
    if let Some(&bad) = train_set.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Validation(format!("label {bad} out of range for {classes} classes")));
    }

    let started = Instant::now();
    let name = network.spec.name.clone();

    if config.epochs == 0 {
        let auc = validation_auc(&network, val_set)?;
        return Ok(TrainedNetwork {
            network,
            history: vec![EpochRecord {
                epoch: 0,
                train_loss: None,
                validation_auc: auc,
            }],
            selected_epoch: 0,
            validation_auc: auc,
            train_seconds: started.elapsed().as_secs_f64(),
        });
    }

    let mut velocity: Vec<Vec<Vec<f64>>> = network
        .layers
        .iter()
        .map(|l| l.params.iter().map(|p| vec![0.0; p.len()]).collect())
        .collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(Network, f64, usize)> = None;

    for epoch in 1..=config.epochs {
        let batches = normalize_and_batch(train_set.len(), config.batch_size, derive_seed(config.seed, epoch as u64));
        let mut dropout_rng = rng_from_seed(derive_seed(config.seed ^ DROPOUT_STREAM, epoch as u64));
        let mut loss_sum = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let mut grads = network.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let (logits, caches) = network.forward_logits(train_set.inputs[i], &mut dropout_rng)?;
                let probs = softmax(&logits);
                let label = train_set.labels[i];
                batch_loss += cross_entropy(&probs, label)?;
                let g = softmax_cross_entropy_grad(&probs, label)?;
                network.backward_logits(&caches, g, scale, &mut grads)?;
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!(
                    "{name}: non-finite loss {batch_loss} at epoch {epoch}, batch {b} (lr {}, momentum {})",
                    config.learning_rate, config.momentum
                )));
            }
            loss_sum += batch_loss;
            for ((layer, lgrads), lvel) in network.layers.iter_mut().zip(&grads).zip(&mut velocity) {
                for ((p, g), v) in layer.params.iter_mut().zip(lgrads).zip(lvel.iter_mut()) {
                    sgd_momentum_step(p.data_mut(), g.data(), v, config.learning_rate, config.momentum)?;
                }
            }
        }
        let auc = validation_auc(&network, val_set)?;
        history.push(EpochRecord {
            epoch,
            train_loss: Some(loss_sum / batches.len() as f64),
            validation_auc: auc,
        });
        let keep = match checkpoint {
            Checkpoint::BestValidationAuc => best.as_ref().is_none_or(|(_, b, _)| auc > *b),
            Checkpoint::FinalEpoch => epoch == config.epochs,
        };
        if keep {
            best = Some((network.clone(), auc, epoch));
        }
    }

    let (network, validation_auc, selected_epoch) = best.expect("at least one epoch ran");
    Ok(TrainedNetwork {
        network,
        history,
        selected_epoch,
        validation_auc,
        train_seconds: started.elapsed().as_secs_f64(),
    })
}
