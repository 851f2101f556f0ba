//! Greedy regression trees over dense features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::container::{PayloadReader, PayloadWriter};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Every midpoint between consecutive distinct values is scored.
    Exact,
    /// One uniform threshold per candidate feature.
    Random,
}

/// Default Newton leaf regularisation.
pub const NEWTON_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub split_mode: SplitMode,
    /// Features drawn per node; `None` considers all of them.
    pub features_per_split: Option<usize>,
    /// Leaf regularisation, used only when hessians are given.
    pub lambda: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: Some(3),
            min_samples_leaf: 1,
            split_mode: SplitMode::Exact,
            features_per_split: None,
            lambda: NEWTON_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
    pub n_features: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    /// `(feature, threshold, gain)` of the root, if it splits.
    pub fn root_split(&self) -> Option<(usize, f64, f64)> {
        match self.nodes[0] {
            Node::Split {
                feature,
                threshold,
                gain,
                ..
            } => Some((feature, threshold, gain)),
            Node::Leaf { .. } => None,
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub(crate) fn write(&self, w: &mut PayloadWriter) {
        w.push_usize(self.n_features);
        w.push(self.max_depth.map_or(-1.0, |d| d as f64));
        w.push_usize(self.min_samples_leaf);
        w.push_usize(self.nodes.len());
        for n in &self.nodes {
            match *n {
                Node::Leaf { value } => {
                    w.push(0.0);
                    w.push(value);
                }
                Node::Split {
                    feature,
                    threshold,
                    gain,
                    left,
                    right,
                } => {
                    w.push(1.0);
                    w.push_usize(feature);
                    w.push(threshold);
                    w.push(gain);
                    w.push_usize(left);
                    w.push_usize(right);
                }
            }
        }
    }

    pub(crate) fn read(r: &mut PayloadReader<'_>) -> Result<Self> {
        let n_features = r.next_usize()?;
        let depth = r.next()?;
        let max_depth = if depth < 0.0 { None } else { Some(depth as usize) };
        let min_samples_leaf = r.next_usize()?;
        let n = r.next_usize()?;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            let node = match r.next_usize()? {
                0 => Node::Leaf { value: r.next()? },
                1 => Node::Split {
                    feature: r.next_usize()?,
                    threshold: r.next()?,
                    gain: r.next()?,
                    left: r.next_usize()?,
                    right: r.next_usize()?,
                },
                t => return Err(Error::Format(format!("unknown tree node tag {t}"))),
            };
            nodes.push(node);
        }
        let tree = Self {
            nodes,
            n_features,
            max_depth,
            min_samples_leaf,
        };
        tree.check()?;
        Ok(tree)
    }

    fn check(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Format("tree without nodes".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match *n {
                Node::Leaf { value } if !value.is_finite() => {
                    return Err(Error::Format(format!("tree leaf {i} is not finite")))
                }
                Node::Split {
                    feature, left, right, ..
                } if feature >= self.n_features || left <= i || right <= i || left >= self.nodes.len() || right >= self.nodes.len() => {
                    return Err(Error::Format(format!("tree node {i} is malformed")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Fits a tree to `targets` over all rows of `x`.
///
/// Without hessians, splits maximise variance reduction and leaves hold the
/// mean target. With hessians, `targets` are gradients, splits maximise
/// `Gl²/(Hl+λ) + Gr²/(Hr+λ) − G²/(H+λ)` and leaves hold `−G/(H+λ)`.
pub fn fit_regression_tree(
    x: &Matrix,
    targets: &[f64],
    hessians: Option<&[f64]>,
    params: &TreeParams,
    rng: &mut SeededRng,
) -> Result<DecisionTree> {
    let rows: Vec<usize> = (0..x.rows()).collect();
    fit_tree_on_rows(x, &rows, targets, hessians, params, rng)
}

/// As [`fit_regression_tree`] over a multiset of row indices (bootstrap
/// samples repeat rows).
pub(crate) fn fit_tree_on_rows(
    x: &Matrix,
    rows: &[usize],
    targets: &[f64],
    hessians: Option<&[f64]>,
    params: &TreeParams,
    rng: &mut SeededRng,
) -> Result<DecisionTree> {
    if rows.is_empty() || x.cols() == 0 {
        return Err(Error::Validation("tree fitting needs at least one row and one feature".into()));
    }
    if targets.len() != x.rows() || hessians.is_some_and(|h| h.len() != x.rows()) {
        return Err(Error::Shape(format!(
            "{} rows but {} targets{}",
            x.rows(),
            targets.len(),
            hessians.map_or(String::new(), |h| format!(" and {} hessians", h.len()))
        )));
    }
    if params.min_samples_leaf == 0 {
        return Err(Error::Config("min_samples_leaf must be >= 1".into()));
    }
    if targets.iter().chain(hessians.unwrap_or(&[])).any(|v| !v.is_finite()) {
        return Err(Error::Validation("tree targets must be finite".into()));
    }
    let sorted: Vec<Vec<usize>> = (0..x.cols())
        .map(|f| {
            let mut s = rows.to_vec();
            s.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
            s
        })
        .collect();
    let mut b = Builder {
        x,
        g: targets,
        h: hessians,
        lambda: if hessians.is_some() { params.lambda } else { 0.0 },
        params,
        nodes: Vec::new(),
        features: (0..x.cols()).collect(),
    };
    b.grow(sorted, 0, rng);
    Ok(DecisionTree {
        nodes: b.nodes,
        n_features: x.cols(),
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
    })
}

struct Builder<'a> {
    x: &'a Matrix,
    g: &'a [f64],
    h: Option<&'a [f64]>,
    lambda: f64,
    params: &'a TreeParams,
    nodes: Vec<Node>,
    features: Vec<usize>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn hess(&self, row: usize) -> f64 {
        self.h.map_or(1.0, |h| h[row])
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.lambda)
    }

    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        if self.h.is_some() {
            -g / (h + self.lambda)
        } else {
            g / h
        }
    }

    fn grow(&mut self, sorted: Vec<Vec<usize>>, depth: usize, rng: &mut SeededRng) -> usize {
        let rows = &sorted[0];
        let (g, h) = rows.iter().fold((0.0, 0.0), |(g, h), &r| (g + self.g[r], h + self.hess(r)));
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(g, h),
        });
        let first = self.g[rows[0]];
        let pure = rows.iter().all(|&r| self.g[r] == first);
        let depth_left = self.params.max_depth.is_none_or(|d| depth < d);
        if pure || !depth_left || rows.len() < 2 * self.params.min_samples_leaf {
            return id;
        }
        let Some(best) = self.best_split(&sorted, g, h, rng) else {
            return id;
        };
        let (f, t) = (best.feature, best.threshold);
        let x = self.x;
        let (left, right): (Vec<Vec<usize>>, Vec<Vec<usize>>) = sorted
            .into_iter()
            .map(|list| list.into_iter().partition(|&r| x.get(r, f) < t))
            .unzip();
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: f,
            threshold: t,
            gain: best.gain,
            left: l,
            right: r,
        };
        id
    }

    fn best_split(&mut self, sorted: &[Vec<usize>], g: f64, h: f64, rng: &mut SeededRng) -> Option<Candidate> {
        let d = self.features.len();
        let k = self.params.features_per_split.map_or(d, |k| k.clamp(1, d));
        if k < d {
            // partial Fisher-Yates: the first k entries become the sample
            for i in 0..k {
                let j = rng.random_range(i..d);
                self.features.swap(i, j);
            }
        }
        let mut chosen: Vec<usize> = self.features[..k].to_vec();
        chosen.sort_unstable();
        let parent = self.score(g, h);
        let msl = self.params.min_samples_leaf;
        let mut best: Option<Candidate> = None;
        for f in chosen {
            let list = &sorted[f];
            let n = list.len();
            let value = |i: usize| self.x.get(list[i], f);
            match self.params.split_mode {
                SplitMode::Exact => {
                    let (mut gl, mut hl) = (0.0, 0.0);
                    for i in 0..n - 1 {
                        gl += self.g[list[i]];
                        hl += self.hess(list[i]);
                        if i + 1 < msl {
                            continue;
                        }
                        if n - i - 1 < msl {
                            break;
                        }
                        let (a, b) = (value(i), value(i + 1));
                        if a >= b {
                            continue;
                        }
                        let gain = self.score(gl, hl) + self.score(g - gl, h - hl) - parent;
                        if best.as_ref().is_none_or(|c| gain > c.gain) {
                            best = Some(Candidate {
                                feature: f,
                                threshold: midpoint(a, b),
                                gain,
                            });
                        }
                    }
                }
                SplitMode::Random => {
                    let (lo, hi) = (value(0), value(n - 1));
                    if lo >= hi {
                        continue;
                    }
                    let u: f64 = rng.random();
                    let mut t = lo + u * (hi - lo);
                    if t <= lo || t > hi {
                        t = midpoint(lo, hi);
                    }
                    let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0);
                    while nl < n && value(nl) < t {
                        gl += self.g[list[nl]];
                        hl += self.hess(list[nl]);
                        nl += 1;
                    }
                    if nl < msl || n - nl < msl {
                        continue;
                    }
                    let gain = self.score(gl, hl) + self.score(g - gl, h - hl) - parent;
                    if best.as_ref().is_none_or(|c| gain > c.gain) {
                        best = Some(Candidate {
                            feature: f,
                            threshold: t,
                            gain,
                        });
                    }
                }
            }
        }
        // zero-gain splits are kept (XOR needs one at the root); only a
        // regularised Newton gain can be negative
        best.filter(|c| c.gain >= 0.0)
    }
}

/// Midpoint of `a < b` that still routes `a` left and `b` right.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if a < m && m <= b {
        m
    } else {
        b
    }
}
