//! CNN-Fusion: each network votes with its class probabilities, weighted by
//! its validation AUC normalised over the ensemble.
//!
//! ```text
//! w_j    = V_j / Σ_k V_k
//! fused_i = Σ_j P_ij · w_j          winner = argmax_i fused_i
//! ```

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cnn::{TrainedNetwork, POSITIVE_CLASS};
use crate::error::{Error, Result};
use crate::metrics::{classification_report, roc_auc, EvalReport};
use crate::tensor::Tensor;

/// Validation AUC per network, in network-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationScores {
    pub values: Vec<f64>,
    pub ids: Vec<String>,
}

impl ValidationScores {
    pub fn new(values: Vec<f64>, ids: Vec<String>) -> Result<Self> {
        if values.is_empty() || values.len() != ids.len() {
            return Err(Error::Validation(format!(
                "{} validation scores for {} network ids",
                values.len(),
                ids.len()
            )));
        }
        if let Some((id, v)) = ids.iter().zip(&values).find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("validation AUC {v} of {id} outside [0, 1]")));
        }
        Ok(Self { values, ids })
    }

    pub fn from_networks(networks: &[TrainedNetwork]) -> Result<Self> {
        Self::new(
            networks.iter().map(|n| n.validation_auc).collect(),
            networks.iter().map(|n| n.name().to_owned()).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub weights: Vec<f64>,
    pub ids: Vec<String>,
}

pub fn normalize_auc_weights(v: &ValidationScores) -> Result<FusionWeights> {
    let checked = ValidationScores::new(v.values.clone(), v.ids.clone())?;
    let total: f64 = checked.values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights(format!(
            "validation AUCs of {:?} sum to {total}",
            checked.ids
        )));
    }
    Ok(FusionWeights {
        weights: checked.values.iter().map(|x| x / total).collect(),
        ids: checked.ids,
    })
}

/// `P[i][j]`: probability network `j` assigns to class `i`, stored row-major
/// as `classes × networks`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    classes: usize,
    networks: usize,
    probs: Vec<f64>,
}

impl PredictionMatrix {
    /// Builds the matrix from one probability vector per network.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let networks = columns.len();
        let classes = columns.first().map_or(0, Vec::len);
        if networks == 0 || classes == 0 {
            return Err(Error::Shape("prediction matrix needs at least one network and one class".into()));
        }
        let mut probs = vec![0.0; classes * networks];
        for (j, col) in columns.iter().enumerate() {
            if col.len() != classes {
                return Err(Error::Shape(format!(
                    "network {j} gives {} class probabilities, expected {classes}",
                    col.len()
                )));
            }
            if col.iter().any(|p| !(0.0..=1.0).contains(p)) || (col.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!("column {j} is not a probability vector: {col:?}")));
            }
            for (i, &p) in col.iter().enumerate() {
                probs[i * networks + j] = p;
            }
        }
        Ok(Self {
            classes,
            networks,
            probs,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn networks(&self) -> usize {
        self.networks
    }

    pub fn get(&self, class: usize, network: usize) -> f64 {
        self.probs[class * self.networks + network]
    }
}

/// Weighted class scores and the winning class (lowest index on ties).
pub fn fuse_predictions(p: &PredictionMatrix, w: &FusionWeights) -> Result<(usize, Vec<f64>)> {
    if w.weights.len() != p.networks {
        return Err(Error::Shape(format!(
            "{} weights for {} networks",
            w.weights.len(),
            p.networks
        )));
    }
    let fused: Vec<f64> = (0..p.classes)
        .map(|i| {
            let row = &p.probs[i * p.networks..(i + 1) * p.networks];
            row.iter().zip(&w.weights).fold(0.0, |acc, (pij, wj)| acc + pij * wj)
        })
        .collect();
    let mut winner = 0;
    for (i, &s) in fused.iter().enumerate() {
        if s > fused[winner] {
            winner = i;
        }
    }
    Ok((winner, fused))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionOutcome {
    pub weights: FusionWeights,
    pub predicted: Vec<usize>,
    /// Fused probability of the defect class per image.
    pub positive_scores: Vec<f64>,
    pub report: EvalReport,
}

/// Fuses every network's prediction on each input and scores the result.
pub fn fuse_dataset(networks: &[TrainedNetwork], inputs: &[&Tensor], truth: &[bool]) -> Result<FusionOutcome> {
    let first = networks
        .first()
        .ok_or_else(|| Error::Validation("fusion needs at least one network".into()))?;
    for n in networks {
        if n.network.spec.input_shape != first.network.spec.input_shape || n.network.spec.classes != first.network.spec.classes {
            return Err(Error::Shape(format!(
                "{} and {} disagree on input shape or class count",
                first.name(),
                n.name()
            )));
        }
    }
    if inputs.len() != truth.len() {
        return Err(Error::Shape(format!("{} inputs for {} labels", inputs.len(), truth.len())));
    }
    let weights = normalize_auc_weights(&ValidationScores::from_networks(networks)?)?;
    let mut predicted = Vec::with_capacity(inputs.len());
    let mut positive_scores = Vec::with_capacity(inputs.len());
    for x in inputs {
        let columns = networks.iter().map(|n| n.predict(x)).collect::<Result<Vec<_>>>()?;
        let (winner, fused) = fuse_predictions(&PredictionMatrix::from_columns(&columns)?, &weights)?;
        predicted.push(winner);
        positive_scores.push(fused[POSITIVE_CLASS]);
    }
    let labels: Vec<bool> = predicted.iter().map(|&c| c == POSITIVE_CLASS).collect();
    let mut report = classification_report(&labels, truth)?;
    report.auc = Some(roc_auc(&positive_scores, truth)?);
    Ok(FusionOutcome {
        weights,
        predicted,
        positive_scores,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingProfile {
    /// Per-network single-image inference time, seconds.
    pub per_network: Vec<f64>,
    pub t_fusion: f64,
    /// `max(T) + t_fusion`: networks evaluated concurrently.
    pub f_time_parallel: f64,
    /// `Σ T + t_fusion`: networks evaluated one after another.
    pub f_time_serial: f64,
}

pub fn timing_profile(per_network: &[f64], t_fusion: f64) -> Result<TimingProfile> {
    if per_network.is_empty() {
        return Err(Error::Validation("timing profile needs at least one network time".into()));
    }
    if per_network.iter().chain(std::iter::once(&t_fusion)).any(|t| !(*t >= 0.0)) {
        return Err(Error::Validation(format!(
            "times must be non-negative: {per_network:?}, fusion {t_fusion}"
        )));
    }
    let max = per_network.iter().copied().fold(0.0, f64::max);
    let sum: f64 = per_network.iter().sum();
    Ok(TimingProfile {
        per_network: per_network.to_vec(),
        t_fusion,
        f_time_parallel: max + t_fusion,
        f_time_serial: sum + t_fusion,
    })
}

/// Mean seconds for the fusion step alone (weights applied to precomputed
/// columns), measured over `repeats` runs.
pub fn measure_fusion_seconds(columns: &[Vec<f64>], weights: &FusionWeights, repeats: usize) -> Result<f64> {
    let repeats = repeats.max(1);
    let started = Instant::now();
    for _ in 0..repeats {
        let p = PredictionMatrix::from_columns(std::hint::black_box(columns))?;
        std::hint::black_box(fuse_predictions(&p, weights)?);
    }
    Ok(started.elapsed().as_secs_f64() / repeats as f64)
}
