use super::glm::{fit_glm, GlmModel, GlmParams};
use super::{stratified_folds, Matrix, ProbabilisticClassifier};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub const DEFAULT_FOLDS: usize = 5;
const META_L2: f64 = 1e-3;

/// Base models plus a logistic meta-learner over their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedEnsemble<M> {
    pub bases: Vec<M>,
    pub meta: GlmModel,
    pub k_folds: usize,
}

impl<M: ProbabilisticClassifier> StackedEnsemble<M> {
    pub fn base_probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.bases.iter().map(|b| b.predict_proba(x)).collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(self.meta.predict_proba(&self.base_probabilities(x)?))
    }
}

/// Fold assignment whose every training complement holds both classes. A
/// second seed is tried before giving up.
fn usable_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    for attempt in 0..2 {
        let folds = stratified_folds(labels, k, derive_seed(seed, attempt))?;
        let ok = (0..k).all(|f| {
            let mut seen = [false; 2];
            for (i, &l) in labels.iter().enumerate() {
                if folds[i] != f {
                    seen[usize::from(l)] = true;
                }
            }
            seen[0] && seen[1]
        });
        if ok {
            return Ok(folds);
        }
    }
    Err(Error::Validation(format!(
        "cannot build {k} folds whose training parts contain both classes"
    )))
}

/// `N × B` matrix of out-of-fold base probabilities: row `i`, column `b` is
/// learner `b` refit without row `i`'s fold, evaluated on row `i`.
pub fn out_of_fold_matrix<M, F>(learners: &[F], x: &Matrix, labels: &[bool], k: usize, seed: u64) -> Result<Matrix>
where
    M: ProbabilisticClassifier,
    F: Fn(&Matrix, &[bool]) -> Result<M>,
{
    let n = labels.len();
    if k < 2 || n < k {
        return Err(Error::Config(format!("stacking needs 2 <= k <= N, got k = {k}, N = {n}")));
    }
    let folds = usable_folds(labels, k, seed)?;
    let b = learners.len();
    let mut oof = vec![0.0; n * b];
    for f in 0..k {
        let (train, held): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| folds[i] != f);
        if held.is_empty() {
            continue;
        }
        let xt = x.select_rows(&train);
        let yt: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        for (j, learn) in learners.iter().enumerate() {
            let model = learn(&xt, &yt)?;
            for &i in &held {
                oof[i * b + j] = model.predict_proba(x.row(i))?;
            }
        }
    }
    Matrix::new(n, b, oof)
}

/// Fits the meta-learner on out-of-fold predictions. Final bases are the
/// learners refit on all rows, or `prefit` when those fits already exist.
pub fn fit_stacked_ensemble<M, F>(
    learners: &[F],
    x: &Matrix,
    labels: &[bool],
    k: usize,
    seed: u64,
    prefit: Option<Vec<M>>,
) -> Result<StackedEnsemble<M>>
where
    M: ProbabilisticClassifier,
    F: Fn(&Matrix, &[bool]) -> Result<M>,
{
    if learners.len() < 2 {
        return Err(Error::Config(format!("stacking needs >= 2 base models, got {}", learners.len())));
    }
    let oof = out_of_fold_matrix(learners, x, labels, k, seed)?;
    let meta = fit_glm(
        &oof,
        labels,
        &GlmParams {
            l2: META_L2,
            ..GlmParams::default()
        },
    )?;
    let bases = match prefit {
        Some(models) if models.len() == learners.len() => models,
        Some(models) => {
            return Err(Error::Config(format!(
                "{} prefit models for {} learners",
                models.len(),
                learners.len()
            )))
        }
        None => learners.iter().map(|l| l(x, labels)).collect::<Result<_>>()?,
    };
    Ok(StackedEnsemble { bases, meta, k_folds: k })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// GLM restricted to one input column.
    #[derive(Debug, Clone)]
    struct ColumnModel {
        col: usize,
        glm: GlmModel,
    }

    impl ProbabilisticClassifier for ColumnModel {
        fn n_features(&self) -> usize {
            2
        }
        fn predict_proba(&self, x: &[f64]) -> Result<f64> {
            Ok(self.glm.predict_proba(&[x[self.col]]))
        }
    }

    fn column_learner(col: usize) -> impl Fn(&Matrix, &[bool]) -> Result<ColumnModel> {
        move |x: &Matrix, y: &[bool]| {
            let c: Vec<f64> = (0..x.rows()).map(|i| x.get(i, col)).collect();
            let glm = fit_glm(
                &Matrix::new(x.rows(), 1, c)?,
                y,
                &GlmParams {
                    l2: 1e-3,
                    ..GlmParams::default()
                },
            )?;
            Ok(ColumnModel { col, glm })
        }
    }

    /// First half: the label is readable from column 0 only; second half:
    /// from column 1 only.
    fn half_split(n: usize) -> (Matrix, Vec<bool>) {
        let mut data = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 0;
            let s = if pos { 1.0 } else { -1.0 };
            if i < n / 2 {
                data.extend([s, 0.0]);
            } else {
                data.extend([0.0, s]);
            }
            y.push(pos);
        }
        (Matrix::new(n, 2, data).unwrap(), y)
    }

    fn accuracy(p: impl Fn(&[f64]) -> f64, x: &Matrix, y: &[bool]) -> f64 {
        (0..x.rows()).filter(|&i| (p(x.row(i)) >= 0.5) == y[i]).count() as f64 / y.len() as f64
    }

    #[test]
    fn complementary_models_stack_above_either() {
        let (x, y) = half_split(80);
        let learners = [column_learner(0), column_learner(1)];
        let singles: Vec<f64> = learners
            .iter()
            .map(|l| {
                let m = l(&x, &y).unwrap();
                accuracy(|r| m.predict_proba(r).unwrap(), &x, &y)
            })
            .collect();
        let stack = fit_stacked_ensemble(&learners, &x, &y, DEFAULT_FOLDS, 1, None).unwrap();
        let stacked = accuracy(|r| stack.predict_proba(r).unwrap(), &x, &y);
        assert!(stacked > singles[0].max(singles[1]), "{stacked} vs {singles:?}");
        assert_eq!(stacked, 1.0);
    }

    #[test]
    fn out_of_fold_shape_and_range() {
        let (x, y) = half_split(40);
        let learners = [column_learner(0), column_learner(1), column_learner(0)];
        let oof = out_of_fold_matrix(&learners, &x, &y, 5, 0).unwrap();
        assert_eq!((oof.rows(), oof.cols()), (40, 3));
        assert!(oof.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn identical_perfect_bases() {
        let v: Vec<f64> = (0..30).map(|i| f64::from(i) - 14.5).collect();
        let y: Vec<bool> = v.iter().map(|&a| a > 0.0).collect();
        let x = Matrix::new(30, 2, v.iter().flat_map(|&a| [a, a]).collect()).unwrap();
        let learners = [column_learner(0), column_learner(0)];
        let stack = fit_stacked_ensemble(&learners, &x, &y, 5, 2, None).unwrap();
        assert_eq!(accuracy(|r| stack.predict_proba(r).unwrap(), &x, &y), 1.0);
        assert_eq!(stack.meta.n_features(), 2);
    }

    #[test]
    fn preconditions() {
        let (x, y) = half_split(10);
        assert!(fit_stacked_ensemble(&[column_learner(0)], &x, &y, 5, 0, None).is_err());
        assert!(fit_stacked_ensemble(&[column_learner(0), column_learner(1)], &x, &y, 11, 0, None).is_err());
        let mut lone = vec![false; 10];
        lone[0] = true;
        // a single positive leaves one fold's complement without positives
        assert!(fit_stacked_ensemble(&[column_learner(0), column_learner(1)], &x, &lone, 2, 0, None).is_err());
    }
}
