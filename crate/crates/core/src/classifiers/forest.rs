use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree_on_rows, DecisionTree, SplitMode, TreeParams};
use super::{check_binary, Matrix};
use crate::container::{PayloadReader, PayloadWriter};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestMode {
    RandomForest,
    ExtraTrees,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` means `round(√d)`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub mode: ForestMode,
}

impl ForestParams {
    /// Bootstrap rows and exact thresholds for a random forest; all rows and
    /// random thresholds for extra trees. Both draw √d features per split.
    pub fn for_mode(mode: ForestMode, n_trees: usize) -> Self {
        Self {
            n_trees,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
            bootstrap: mode == ForestMode::RandomForest,
            mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub bootstrap: bool,
    pub features_per_split: usize,
    pub mode: ForestMode,
}

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.trees[0].n_features
    }

    /// Mean of the trees' leaf values (class-1 frequencies).
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        (sum / self.trees.len() as f64).clamp(0.0, 1.0)
    }

    pub(crate) fn write(&self, w: &mut PayloadWriter) {
        w.push(f64::from(u8::from(self.bootstrap)));
        w.push_usize(self.features_per_split);
        w.push(match self.mode {
            ForestMode::RandomForest => 0.0,
            ForestMode::ExtraTrees => 1.0,
        });
        w.push_usize(self.trees.len());
        for t in &self.trees {
            t.write(w);
        }
    }

    pub(crate) fn read(r: &mut PayloadReader<'_>) -> Result<Self> {
        let bootstrap = r.next_usize()? == 1;
        let features_per_split = r.next_usize()?;
        let mode = match r.next_usize()? {
            0 => ForestMode::RandomForest,
            1 => ForestMode::ExtraTrees,
            t => return Err(Error::Format(format!("unknown forest mode {t}"))),
        };
        let n = r.next_usize()?;
        if n == 0 {
            return Err(Error::Format("forest without trees".into()));
        }
        let trees = (0..n).map(|_| DecisionTree::read(r)).collect::<Result<_>>()?;
        Ok(Self {
            trees,
            bootstrap,
            features_per_split,
            mode,
        })
    }
}

pub fn fit_forest(x: &Matrix, labels: &[bool], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    if labels.len() < 2 {
        return Err(Error::Validation("forest fitting needs at least 2 rows".into()));
    }
    check_binary(x, labels)?;
    if params.n_trees == 0 {
        return Err(Error::Config("a forest needs at least one tree".into()));
    }
    let d = x.cols();
    let k = params
        .features_per_split
        .unwrap_or_else(|| ((d as f64).sqrt().round() as usize).max(1))
        .clamp(1, d);
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        split_mode: match params.mode {
            ForestMode::RandomForest => SplitMode::Exact,
            ForestMode::ExtraTrees => SplitMode::Random,
        },
        features_per_split: Some(k),
        lambda: 0.0,
    };
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let n = labels.len();
    let trees = (0..params.n_trees)
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, t as u64));
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree_on_rows(x, &rows, &y, None, &tree_params, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        trees,
        bootstrap: params.bootstrap,
        features_per_split: k,
        mode: params.mode,
    })
}
