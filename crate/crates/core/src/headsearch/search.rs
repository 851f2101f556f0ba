use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::space::{candidate_space, CandidateSpec, Family, HeadParams, Origin};
use crate::classifiers::{
    fit_forest, fit_gbm, fit_glm_grid, fit_mlp_head, fit_stacked_ensemble, ForestMode, ForestParams, GbmFlavor,
    GbmParams, HeadModel, Matrix, ProbabilisticClassifier, DEFAULT_FOLDS,
};
use crate::cnn::{FeatureTable, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::roc_auc;
use crate::rng::{derive_seed, tag_of};

/// Stop conditions for the search. Whichever limit trips first ends it; a
/// candidate already being fit when the clock runs out is completed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_wall_clock_seconds: Option<f64>,
    pub max_candidates: Option<usize>,
    pub seed: u64,
}

pub const STACK_TOP: usize = 5;

impl SearchBudget {
    /// 60 candidates or 120 seconds.
    pub fn desk(seed: u64) -> Self {
        Self {
            max_wall_clock_seconds: Some(120.0),
            max_candidates: Some(60),
            seed,
        }
    }

    /// Two hours of wall clock, no count limit.
    pub fn two_hours(seed: u64) -> Self {
        Self {
            max_wall_clock_seconds: Some(7200.0),
            max_candidates: None,
            seed,
        }
    }

    pub fn candidates(n: usize, seed: u64) -> Self {
        Self {
            max_wall_clock_seconds: None,
            max_candidates: Some(n),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_wall_clock_seconds.is_none() && self.max_candidates.is_none() {
            return Err(Error::Config("search budget sets no limit".into()));
        }
        if self.max_candidates == Some(0) || self.max_wall_clock_seconds.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config(format!("empty search budget: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LeaderEntry {
    pub spec: CandidateSpec,
    pub model: Arc<HeadModel>,
    pub validation_auc: f64,
    pub fit_seconds: f64,
    /// Position in fitting order; breaks AUC ties.
    pub completion: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub spec_id: String,
    pub family: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LeaderBoard {
    /// Sorted by validation AUC descending, then by completion.
    pub entries: Vec<LeaderEntry>,
    pub failures: Vec<CandidateFailure>,
    /// Base candidates attempted (successful or not), excluding stacking.
    pub base_candidates: usize,
}

/// Compact leaderboard row kept with a composite model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderRow {
    pub spec_id: String,
    pub family: String,
    pub validation_auc: f64,
}

impl LeaderBoard {
    pub fn sort(&mut self) {
        self.entries.sort_by(|a, b| {
            b.validation_auc
                .total_cmp(&a.validation_auc)
                .then(a.completion.cmp(&b.completion))
        });
    }

    pub fn rows(&self) -> Vec<LeaderRow> {
        self.entries
            .iter()
            .map(|e| LeaderRow {
                spec_id: e.spec.id(),
                family: e.spec.family.name().to_owned(),
                validation_auc: e.validation_auc,
            })
            .collect()
    }

    /// CSV with one row per entry in rank order. Fit times vary between runs,
    /// so they are only included on request.
    pub fn to_csv(&self, with_timing: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["rank", "spec_id", "family", "hyperparameters", "val_auc"];
        if with_timing {
            header.push("fit_seconds");
        }
        let csv_err = |e: csv::Error| Error::Format(format!("leaderboard csv: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for (rank, e) in self.entries.iter().enumerate() {
            let mut rec = vec![
                (rank + 1).to_string(),
                e.spec.id(),
                e.spec.family.name().to_owned(),
                e.spec.params.canonical(),
                format!("{}", e.validation_auc),
            ];
            if with_timing {
                rec.push(format!("{:.6}", e.fit_seconds));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(format!("leaderboard csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn select_best(board: &LeaderBoard) -> Result<&LeaderEntry> {
    board
        .entries
        .first()
        .ok_or_else(|| Error::Search("leaderboard is empty".into()))
}

fn table_matrix(t: &FeatureTable) -> Result<Matrix> {
    Matrix::new(t.len(), t.dim, t.data.clone())
}

/// Fits one non-stacked candidate.
pub fn fit_candidate(spec: &CandidateSpec, x: &Matrix, y: &[bool], seed: u64) -> Result<HeadModel> {
    spec.validate()?;
    match (&spec.family, &spec.params) {
        (
            family,
            HeadParams::Boost {
                rounds,
                shrinkage,
                max_depth,
                min_samples_leaf,
            },
        ) => {
            let flavor = match family {
                Family::XgbmPreset | Family::XgbmRandom => GbmFlavor::NewtonLeaf,
                _ => GbmFlavor::GradientLeaf,
            };
            let p = GbmParams {
                rounds: *rounds,
                shrinkage: *shrinkage,
                max_depth: *max_depth,
                min_samples_leaf: *min_samples_leaf,
                flavor,
            };
            fit_gbm(x, y, &p, seed).map(HeadModel::Gbm)
        }
        (_, HeadParams::GlmGrid { l2, folds }) => fit_glm_grid(x, y, l2, *folds, seed).map(HeadModel::Glm),
        (
            family,
            HeadParams::Forest {
                n_trees,
                max_depth,
                min_samples_leaf,
            },
        ) => {
            let mode = if *family == Family::ExtraTrees {
                ForestMode::ExtraTrees
            } else {
                ForestMode::RandomForest
            };
            let p = ForestParams {
                max_depth: *max_depth,
                min_samples_leaf: *min_samples_leaf,
                ..ForestParams::for_mode(mode, *n_trees)
            };
            fit_forest(x, y, &p, seed).map(HeadModel::Forest)
        }
        (
            _,
            HeadParams::Mlp {
                hidden,
                epochs,
                learning_rate,
                batch_size,
            },
        ) => {
            let cfg = TrainConfig {
                batch_size: *batch_size,
                learning_rate: *learning_rate,
                momentum: 0.9,
                epochs: *epochs,
                seed,
            };
            fit_mlp_head(x, y, hidden, &cfg).map(HeadModel::Mlp)
        }
        (_, HeadParams::Stacked { .. }) => Err(Error::Search(
            "stacked candidates are built from a leaderboard, not fit directly".into(),
        )),
    }
}

/// Positive-class probabilities of `model` on every row.
pub fn score_rows(model: &HeadModel, x: &Matrix) -> Result<Vec<f64>> {
    (0..x.rows()).map(|i| model.predict_proba(x.row(i))).collect()
}

struct Fitted {
    spec: CandidateSpec,
    outcome: Result<(HeadModel, f64)>,
    seconds: f64,
}

fn fit_and_score(spec: CandidateSpec, train: (&Matrix, &[bool]), val: (&Matrix, &[bool]), seed: u64) -> Fitted {
    let started = Instant::now();
    let outcome = fit_candidate(&spec, train.0, train.1, spec.fit_seed(seed))
        .and_then(|m| Ok((roc_auc(&score_rows(&m, val.0)?, val.1)?, m)))
        .map(|(auc, m)| (m, auc));
    Fitted {
        spec,
        outcome,
        seconds: started.elapsed().as_secs_f64(),
    }
}

/// Random search over [`candidate_space`], scored by validation AUC, followed
/// by one stacked ensemble over the top entries.
pub fn run_search(train: &FeatureTable, val: &FeatureTable, budget: &SearchBudget, workers: usize) -> Result<LeaderBoard> {
    budget.validate()?;
    if train.dim != val.dim {
        return Err(Error::Shape(format!(
            "train features have dimension {} but validation features {}",
            train.dim, val.dim
        )));
    }
    for (t, name) in [(train, "train"), (val, "validation")] {
        let pos = t.labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == t.len() {
            return Err(Error::Search(format!("{name} features hold a single class")));
        }
    }
    let xt = table_matrix(train)?;
    let xv = table_matrix(val)?;
    let (yt, yv) = (train.labels.as_slice(), val.labels.as_slice());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Search(format!("worker pool: {e}")))?;

    let started = Instant::now();
    let mut board = LeaderBoard::default();
    let mut seen: HashSet<(Family, String)> = HashSet::new();
    let mut stream = candidate_space(budget.seed);
    let limit = budget.max_candidates.unwrap_or(usize::MAX);
    while board.base_candidates < limit {
        // the clock is checked between batches, so at least one always runs
        if board.base_candidates > 0
            && budget
                .max_wall_clock_seconds
                .is_some_and(|s| started.elapsed().as_secs_f64() >= s)
        {
            break;
        }
        let room = (limit - board.base_candidates).min(workers.max(1));
        let mut batch = Vec::with_capacity(room);
        while batch.len() < room {
            let spec = stream.next().expect("candidate stream is unbounded");
            if seen.insert((spec.family, spec.params.canonical())) {
                batch.push(spec);
            }
        }
        let results: Vec<Fitted> = pool.install(|| {
            use rayon::prelude::*;
            batch
                .into_par_iter()
                .map(|s| fit_and_score(s, (&xt, yt), (&xv, yv), budget.seed))
                .collect()
        });
        for f in results {
            board.base_candidates += 1;
            match f.outcome {
                Ok((model, auc)) => {
                    let completion = board.entries.len() + board.failures.len();
                    board.entries.push(LeaderEntry {
                        spec: f.spec,
                        model: Arc::new(model),
                        validation_auc: auc,
                        fit_seconds: f.seconds,
                        completion,
                    });
                }
                Err(e) => {
                    log::warn!("candidate {} failed: {e}", f.spec.id());
                    board.failures.push(CandidateFailure {
                        spec_id: f.spec.id(),
                        family: f.spec.family.name().to_owned(),
                        message: e.to_string(),
                    })
                }
            }
        }
    }
    if board.entries.is_empty() {
        let detail: Vec<String> = board
            .failures
            .iter()
            .map(|f| format!("{} ({}): {}", f.spec_id, f.family, f.message))
            .collect();
        return Err(Error::Search(format!("every candidate failed: {}", detail.join("; "))));
    }
    board.sort();
    if board.entries.len() >= 2 {
        match fit_stack(&board, &xt, yt, &xv, yv, budget.seed) {
            Ok(entry) => board.entries.push(entry),
            Err(e) => board.failures.push(CandidateFailure {
                spec_id: "stack".into(),
                family: Family::Stacked.name().into(),
                message: e.to_string(),
            }),
        }
        board.sort();
    }
    Ok(board)
}

fn fit_stack(board: &LeaderBoard, xt: &Matrix, yt: &[bool], xv: &Matrix, yv: &[bool], seed: u64) -> Result<LeaderEntry> {
    let started = Instant::now();
    let top = &board.entries[..board.entries.len().min(STACK_TOP)];
    let learners: Vec<Box<dyn Fn(&Matrix, &[bool]) -> Result<HeadModel>>> = top
        .iter()
        .map(|e| {
            let spec = e.spec.clone();
            let s = spec.fit_seed(seed);
            Box::new(move |x: &Matrix, y: &[bool]| fit_candidate(&spec, x, y, s)) as Box<dyn Fn(&Matrix, &[bool]) -> Result<HeadModel>>
        })
        .collect();
    let prefit: Vec<HeadModel> = top.iter().map(|e| (*e.model).clone()).collect();
    let stack = fit_stacked_ensemble(&learners, xt, yt, DEFAULT_FOLDS, derive_seed(seed, tag_of("stack")), Some(prefit))?;
    let model = HeadModel::Stacked(Box::new(stack));
    let auc = roc_auc(&score_rows(&model, xv)?, yv)?;
    Ok(LeaderEntry {
        spec: CandidateSpec {
            family: Family::Stacked,
            params: HeadParams::Stacked {
                bases: top.iter().map(|e| e.spec.id()).collect(),
                folds: DEFAULT_FOLDS,
            },
            origin: Origin::Stack,
        },
        model: Arc::new(model),
        validation_auc: auc,
        fit_seconds: started.elapsed().as_secs_f64(),
        completion: board.entries.len() + board.failures.len(),
    })
}
