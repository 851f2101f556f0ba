use super::{check_binary, sigmoid, softplus, Matrix, Standardizer};
use crate::container::{PayloadReader, PayloadWriter};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmParams {
    pub l2: f64,
    pub max_iters: usize,
    /// Stop once an iteration improves the objective by less than this.
    pub tol: f64,
}

impl Default for GlmParams {
    fn default() -> Self {
        Self {
            l2: 1e-2,
            max_iters: 1000,
            tol: 1e-9,
        }
    }
}

/// L2-regularised logistic regression on standardised features.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmModel {
    pub scaler: Standardizer,
    /// Weights in standardised feature space.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    /// Objective value at every accepted iterate, starting from zero weights.
    pub objective_history: Vec<f64>,
    pub converged: bool,
}

impl GlmModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        let mut m = self.bias;
        for (j, (w, v)) in self.weights.iter().zip(x).enumerate() {
            m += w * self.scaler.apply(j, *v);
        }
        m
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }

    pub(crate) fn write(&self, w: &mut PayloadWriter) {
        self.scaler.write(w);
        w.push_slice(&self.weights);
        w.push(self.bias);
        w.push(self.l2);
        w.push_slice(&self.objective_history);
        w.push(f64::from(u8::from(self.converged)));
    }

    pub(crate) fn read(r: &mut PayloadReader<'_>) -> Result<Self> {
        let scaler = Standardizer::read(r)?;
        let weights = r.next_slice()?;
        if weights.len() != scaler.dim() {
            return Err(Error::Format("glm weights and scaler disagree on dimension".into()));
        }
        Ok(Self {
            scaler,
            weights,
            bias: r.next()?,
            l2: r.next()?,
            objective_history: r.next_slice()?,
            converged: r.next_usize()? == 1,
        })
    }
}

struct Problem<'a> {
    z: &'a [f64],
    d: usize,
    y: &'a [bool],
    l2: f64,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.y.len()
    }

    fn margin(&self, theta: &[f64], i: usize) -> f64 {
        let row = &self.z[i * self.d..(i + 1) * self.d];
        theta[self.d] + row.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Mean logloss plus `l2/2·|w|²` (bias unpenalised).
    fn objective(&self, theta: &[f64]) -> f64 {
        let loss: f64 = (0..self.n())
            .map(|i| {
                let m = self.margin(theta, i);
                if self.y[i] {
                    softplus(-m)
                } else {
                    softplus(m)
                }
            })
            .sum();
        let penalty: f64 = theta[..self.d].iter().map(|w| w * w).sum();
        loss / self.n() as f64 + 0.5 * self.l2 * penalty
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d + 1];
        for i in 0..self.n() {
            let r = sigmoid(self.margin(theta, i)) - f64::from(u8::from(self.y[i]));
            let row = &self.z[i * self.d..(i + 1) * self.d];
            for (gj, v) in g.iter_mut().zip(row) {
                *gj += r * v;
            }
            g[self.d] += r;
        }
        let n = self.n() as f64;
        for (j, gj) in g.iter_mut().enumerate() {
            *gj /= n;
            if j < self.d {
                *gj += self.l2 * theta[j];
            }
        }
        g
    }
}

/// Gradient descent with Armijo backtracking. Returns a model even when
/// `max_iters` runs out, with `converged = false`.
pub fn fit_glm(x: &Matrix, labels: &[bool], params: &GlmParams) -> Result<GlmModel> {
    check_binary(x, labels)?;
    if !(params.l2 >= 0.0) || !params.l2.is_finite() {
        return Err(Error::Config(format!("l2 must be a finite value >= 0, got {}", params.l2)));
    }
    let scaler = Standardizer::fit(x);
    let z = scaler.transform(x);
    let d = x.cols();
    let prob = Problem {
        z: z.data(),
        d,
        y: labels,
        l2: params.l2,
    };
    let mut theta = vec![0.0; d + 1];
    let mut obj = prob.objective(&theta);
    let mut history = vec![obj];
    let mut step = 1.0;
    let mut converged = false;
    for _ in 0..params.max_iters {
        let g = prob.gradient(&theta);
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2.sqrt() < params.tol {
            converged = true;
            break;
        }
        let mut accepted = None;
        while step > 1e-12 {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
            let c = prob.objective(&cand);
            if c <= obj - 0.5 * step * gnorm2 {
                accepted = Some((cand, c));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, c)) = accepted else {
            converged = true;
            break;
        };
        let improvement = obj - c;
        theta = cand;
        obj = c;
        history.push(obj);
        step = (step * 2.0).min(1e3);
        if improvement < params.tol {
            converged = true;
            break;
        }
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("glm weights diverged".into()));
    }
    let bias = theta[d];
    theta.truncate(d);
    Ok(GlmModel {
        scaler,
        weights: theta,
        bias,
        l2: params.l2,
        objective_history: history,
        converged,
    })
}

/// Mean held-out logloss over stratified folds picks the L2 strength; the
/// final model is refit on all rows.
pub fn fit_glm_grid(x: &Matrix, labels: &[bool], grid: &[f64], folds: usize, seed: u64) -> Result<GlmModel> {
    if grid.is_empty() {
        return Err(Error::Config("glm grid is empty".into()));
    }
    check_binary(x, labels)?;
    let assignment = super::stratified_folds(labels, folds, seed)?;
    let mut best: Option<(f64, f64)> = None;
    for &l2 in grid {
        let params = GlmParams {
            l2,
            ..GlmParams::default()
        };
        let mut loss = 0.0;
        for f in 0..folds {
            let (train, held): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] != f);
            let ytr: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
            let m = fit_glm(&x.select_rows(&train), &ytr, &params)?;
            let p: Vec<f64> = held.iter().map(|&i| m.predict_proba(x.row(i))).collect();
            let yh: Vec<bool> = held.iter().map(|&i| labels[i]).collect();
            loss += super::logloss(&p, &yh) * held.len() as f64;
        }
        if best.is_none_or(|(_, b)| loss < b) {
            best = Some((l2, loss));
        }
    }
    let (l2, _) = best.expect("grid is non-empty");
    fit_glm(
        x,
        labels,
        &GlmParams {
            l2,
            ..GlmParams::default()
        },
    )
}
