//! Binary classifier families for the head search. Every model maps a dense
//! feature vector to the probability of the defect class.

mod forest;
mod gbm;
mod glm;
mod mlp;
mod stack;
mod tree;

pub use forest::{fit_forest, ForestMode, ForestModel, ForestParams};
pub use gbm::{fit_gbm, GbmFlavor, GbmModel, GbmParams};
pub use glm::{fit_glm, fit_glm_grid, GlmModel, GlmParams};
pub use mlp::{fit_mlp_head, mlp_spec, MlpHead};
pub use stack::{fit_stacked_ensemble, out_of_fold_matrix, StackedEnsemble, DEFAULT_FOLDS};
pub use tree::{fit_regression_tree, DecisionTree, Node, SplitMode, TreeParams, NEWTON_LAMBDA};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{Container, PayloadReader, PayloadWriter, MAGIC_HEAD};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, shuffle};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix from {} values",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Per-feature `(x − mean) / std`; constant features keep scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows().max(1) as f64;
        let mut mean = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, j: usize, v: f64) -> f64 {
        (v - self.mean[j]) / self.scale[j]
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut data = Vec::with_capacity(x.data.len());
        for i in 0..x.rows() {
            data.extend(x.row(i).iter().enumerate().map(|(j, &v)| self.apply(j, v)));
        }
        Matrix {
            rows: x.rows,
            cols: x.cols,
            data,
        }
    }

    fn write(&self, w: &mut PayloadWriter) {
        w.push_slice(&self.mean);
        w.push_slice(&self.scale);
    }

    fn read(r: &mut PayloadReader<'_>) -> Result<Self> {
        let mean = r.next_slice()?;
        let scale = r.next_slice()?;
        if mean.len() != scale.len() || scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Format("invalid standardizer".into()));
        }
        Ok(Self { mean, scale })
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean logistic loss of raw margins.
pub fn margin_logloss(margins: &[f64], labels: &[bool]) -> f64 {
    let s: f64 = margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| if y { softplus(-m) } else { softplus(m) })
        .sum();
    s / labels.len() as f64
}

/// Mean logistic loss of probabilities, clamped away from 0 and 1.
pub fn logloss(probs: &[f64], labels: &[bool]) -> f64 {
    const EPS: f64 = 1e-15;
    let s: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(EPS, 1.0 - EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    s / labels.len() as f64
}

/// Validates shapes and that both classes occur; returns the positive count.
pub(crate) fn check_binary(x: &Matrix, labels: &[bool]) -> Result<usize> {
    if x.rows() != labels.len() {
        return Err(Error::Shape(format!("{} rows for {} labels", x.rows(), labels.len())));
    }
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::Validation("empty feature matrix".into()));
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("features must be finite".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Validation(format!(
            "labels hold a single class ({pos} positive of {})",
            labels.len()
        )));
    }
    Ok(pos)
}

/// Fold index per row: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || labels.len() < k {
        return Err(Error::Config(format!("need 2 <= k <= N folds, got k = {k}, N = {}", labels.len())));
    }
    let mut rng = rng_from_seed(seed);
    let mut folds = vec![0; labels.len()];
    let mut next = 0;
    for class in [false, true] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        shuffle(&mut members, &mut rng);
        for i in members {
            folds[i] = next % k;
            next += 1;
        }
    }
    Ok(folds)
}

pub trait ProbabilisticClassifier {
    fn n_features(&self) -> usize;
    /// Probability of the positive class.
    fn predict_proba(&self, x: &[f64]) -> Result<f64>;
}

/// Any fitted head.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadModel {
    Gbm(GbmModel),
    Forest(ForestModel),
    Glm(GlmModel),
    Mlp(MlpHead),
    Stacked(Box<StackedEnsemble<HeadModel>>),
}

#[derive(Serialize, Deserialize)]
struct HeadMeta {
    kind: String,
    input_dim: usize,
}

impl HeadModel {
    pub fn kind(&self) -> &'static str {
        match self {
            HeadModel::Gbm(m) => match m.flavor {
                GbmFlavor::NewtonLeaf => "gbm_newton",
                GbmFlavor::GradientLeaf => "gbm_gradient",
            },
            HeadModel::Forest(m) => match m.mode {
                ForestMode::RandomForest => "random_forest",
                ForestMode::ExtraTrees => "extra_trees",
            },
            HeadModel::Glm(_) => "glm",
            HeadModel::Mlp(_) => "mlp",
            HeadModel::Stacked(_) => "stacked",
        }
    }

    fn tag(&self) -> usize {
        match self {
            HeadModel::Gbm(_) => 0,
            HeadModel::Forest(_) => 1,
            HeadModel::Glm(_) => 2,
            HeadModel::Mlp(_) => 3,
            HeadModel::Stacked(_) => 4,
        }
    }

    pub(crate) fn write(&self, w: &mut PayloadWriter) {
        w.push_usize(self.tag());
        w.push_usize(self.n_features());
        match self {
            HeadModel::Gbm(m) => m.write(w),
            HeadModel::Forest(m) => m.write(w),
            HeadModel::Glm(m) => m.write(w),
            HeadModel::Mlp(m) => m.write(w),
            HeadModel::Stacked(s) => {
                w.push_usize(s.k_folds);
                s.meta.write(w);
                w.push_usize(s.bases.len());
                for b in &s.bases {
                    b.write(w);
                }
            }
        }
    }

    pub(crate) fn read(r: &mut PayloadReader<'_>) -> Result<Self> {
        let tag = r.next_usize()?;
        let dim = r.next_usize()?;
        let model = match tag {
            0 => HeadModel::Gbm(GbmModel::read(r)?),
            1 => HeadModel::Forest(ForestModel::read(r)?),
            2 => HeadModel::Glm(GlmModel::read(r)?),
            3 => HeadModel::Mlp(MlpHead::read(r)?),
            4 => {
                let k_folds = r.next_usize()?;
                let meta = GlmModel::read(r)?;
                let n = r.next_usize()?;
                let bases = (0..n).map(|_| HeadModel::read(r)).collect::<Result<Vec<_>>>()?;
                if meta.n_features() != bases.len() {
                    return Err(Error::Format("stacked meta-learner width differs from base count".into()));
                }
                HeadModel::Stacked(Box::new(StackedEnsemble { bases, meta, k_folds }))
            }
            t => return Err(Error::Format(format!("unknown head family tag {t}"))),
        };
        if model.n_features() != dim {
            return Err(Error::Format(format!(
                "head declares {dim} inputs but its parameters use {}",
                model.n_features()
            )));
        }
        Ok(model)
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = HeadMeta {
            kind: self.kind().to_owned(),
            input_dim: self.n_features(),
        };
        let mut w = PayloadWriter::new();
        self.write(&mut w);
        Ok(Container::new(
            MAGIC_HEAD,
            serde_json::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?,
            w.finish(),
        ))
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let mut r = PayloadReader::new(&c.payload);
        let model = Self::read(&mut r)?;
        r.finish()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write_file(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read_file(path, MAGIC_HEAD)?)
    }
}

impl ProbabilisticClassifier for HeadModel {
    fn n_features(&self) -> usize {
        match self {
            // a zero-round model accepts any width; report it as unknown (0)
            HeadModel::Gbm(m) => m.n_features().unwrap_or(0),
            HeadModel::Forest(m) => m.n_features(),
            HeadModel::Glm(m) => m.n_features(),
            HeadModel::Mlp(m) => m.n_features(),
            HeadModel::Stacked(s) => s.bases[0].n_features(),
        }
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        let d = self.n_features();
        if d != 0 && x.len() != d {
            return Err(Error::Shape(format!("{} head expects {d} features, got {}", self.kind(), x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("feature vector contains non-finite values".into()));
        }
        match self {
            HeadModel::Gbm(m) => Ok(m.predict_proba(x)),
            HeadModel::Forest(m) => Ok(m.predict_proba(x)),
            HeadModel::Glm(m) => Ok(m.predict_proba(x)),
            HeadModel::Mlp(m) => m.predict_proba(x),
            HeadModel::Stacked(s) => s.predict_proba(x),
        }
    }
}
