use serde::{Deserialize, Serialize};

use super::tree::{fit_regression_tree, DecisionTree, Node, SplitMode, TreeParams, NEWTON_LAMBDA};
use super::{check_binary, margin_logloss, sigmoid, Matrix};
use crate::container::{PayloadReader, PayloadWriter};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GbmFlavor {
    /// Trees fit gradients with hessian-weighted gain and Newton leaves.
    NewtonLeaf,
    /// Trees fit residuals `y − p` by variance reduction, mean leaves.
    GradientLeaf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbmParams {
    pub rounds: usize,
    pub shrinkage: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub flavor: GbmFlavor,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self {
            rounds: 100,
            shrinkage: 0.3,
            max_depth: 3,
            min_samples_leaf: 1,
            flavor: GbmFlavor::NewtonLeaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbmModel {
    pub init: f64,
    pub trees: Vec<DecisionTree>,
    pub shrinkage: f64,
    pub flavor: GbmFlavor,
    /// Training logloss before the first round and after each round.
    pub history: Vec<f64>,
}

impl GbmModel {
    pub fn n_features(&self) -> Option<usize> {
        self.trees.first().map(|t| t.n_features)
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        self.init + self.shrinkage * sum
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }

    pub(crate) fn write(&self, w: &mut PayloadWriter) {
        w.push(self.init);
        w.push(self.shrinkage);
        w.push(match self.flavor {
            GbmFlavor::NewtonLeaf => 0.0,
            GbmFlavor::GradientLeaf => 1.0,
        });
        w.push_slice(&self.history);
        w.push_usize(self.trees.len());
        for t in &self.trees {
            t.write(w);
        }
    }

    pub(crate) fn read(r: &mut PayloadReader<'_>) -> Result<Self> {
        let init = r.next()?;
        let shrinkage = r.next()?;
        let flavor = match r.next_usize()? {
            0 => GbmFlavor::NewtonLeaf,
            1 => GbmFlavor::GradientLeaf,
            t => return Err(Error::Format(format!("unknown gbm flavor {t}"))),
        };
        let history = r.next_slice()?;
        let n = r.next_usize()?;
        let trees = (0..n).map(|_| DecisionTree::read(r)).collect::<Result<_>>()?;
        Ok(Self {
            init,
            trees,
            shrinkage,
            flavor,
            history,
        })
    }
}

/// Logistic-loss boosting from the base-rate log-odds.
///
/// A round whose step would raise the training loss (possible near
/// convergence, where the gain is at rounding level) has its leaves halved
/// until it does not; a round that never helps adds no tree. The recorded
/// loss is therefore non-increasing.
pub fn fit_gbm(x: &Matrix, labels: &[bool], params: &GbmParams, seed: u64) -> Result<GbmModel> {
    let n_pos = check_binary(x, labels)?;
    if !(params.shrinkage > 0.0 && params.shrinkage <= 1.0) {
        return Err(Error::Config(format!("shrinkage {} outside (0, 1]", params.shrinkage)));
    }
    let n = labels.len();
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let base = n_pos as f64 / n as f64;
    let init = (base / (1.0 - base)).ln();
    let tree_params = TreeParams {
        max_depth: Some(params.max_depth),
        min_samples_leaf: params.min_samples_leaf,
        split_mode: SplitMode::Exact,
        features_per_split: None,
        lambda: NEWTON_LAMBDA,
    };
    let mut rng = rng_from_seed(seed);
    let mut margin = vec![init; n];
    let mut probs: Vec<f64> = margin.iter().map(|&m| sigmoid(m)).collect();
    let mut history = vec![margin_logloss(&margin, labels)];
    let mut trees = Vec::with_capacity(params.rounds);
    for _ in 0..params.rounds {
        let tree = match params.flavor {
            GbmFlavor::NewtonLeaf => {
                let g: Vec<f64> = probs.iter().zip(&y).map(|(p, y)| p - y).collect();
                let h: Vec<f64> = probs.iter().map(|p| p * (1.0 - p)).collect();
                fit_regression_tree(x, &g, Some(&h), &tree_params, &mut rng)?
            }
            GbmFlavor::GradientLeaf => {
                let r: Vec<f64> = probs.iter().zip(&y).map(|(p, y)| y - p).collect();
                fit_regression_tree(x, &r, None, &tree_params, &mut rng)?
            }
        };
        let step: Vec<f64> = (0..n).map(|i| params.shrinkage * tree.predict(x.row(i))).collect();
        let previous = history[history.len() - 1];
        match monotone_step(&margin, &step, previous, labels) {
            Some((trial, loss, scale)) => {
                margin = trial;
                trees.push(if scale == 1.0 { tree } else { scale_leaves(tree, scale) });
                history.push(loss);
            }
            None => history.push(previous),
        }
        for (p, &m) in probs.iter_mut().zip(&margin) {
            *p = sigmoid(m);
        }
    }
    Ok(GbmModel {
        init,
        trees,
        shrinkage: params.shrinkage,
        flavor: params.flavor,
        history,
    })
}

const MAX_HALVINGS: usize = 30;

/// First of `margin + step`, `margin + step/2`, ... whose loss does not
/// exceed `previous`.
fn monotone_step(margin: &[f64], step: &[f64], previous: f64, labels: &[bool]) -> Option<(Vec<f64>, f64, f64)> {
    let mut scale = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let trial: Vec<f64> = margin.iter().zip(step).map(|(m, s)| m + scale * s).collect();
        let loss = margin_logloss(&trial, labels);
        if loss <= previous {
            return Some((trial, loss, scale));
        }
        scale *= 0.5;
    }
    None
}

fn scale_leaves(mut tree: DecisionTree, scale: f64) -> DecisionTree {
    for node in &mut tree.nodes {
        if let Node::Leaf { value } = node {
            *value *= scale;
        }
    }
    tree
}
