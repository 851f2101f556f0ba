//! Candidate head specifications: twelve fixed presets followed by an
//! endless seeded stream of random draws.
//!
//! | # | family                | settings                                        |
//! |---|-----------------------|-------------------------------------------------|
//! | 0 | xgbm_preset           | 100 rounds, shrinkage 0.3, depth 6              |
//! | 1 | xgbm_preset           | 200 rounds, shrinkage 0.1, depth 4              |
//! | 2 | xgbm_preset           | 60 rounds, shrinkage 0.3, depth 8, min leaf 3   |
//! | 3 | glm_grid              | l2 ∈ {1e-4, 1e-2, 1}, chosen by 3-fold CV       |
//! | 4 | random_forest_default | 50 trees, full depth                            |
//! | 5 | gbm_preset            | 100 rounds, shrinkage 0.1, depth 6              |
//! | 6 | gbm_preset            | 100 rounds, shrinkage 0.1, depth 7, min leaf 3  |
//! | 7 | gbm_preset            | 100 rounds, shrinkage 0.1, depth 8, min leaf 5  |
//! | 8 | gbm_preset            | 200 rounds, shrinkage 0.05, depth 5, min leaf 2 |
//! | 9 | gbm_preset            | 150 rounds, shrinkage 0.1, depth 3              |
//! |10 | mlp_default           | one hidden layer of 64, 20 epochs, lr 0.01      |
//! |11 | extra_trees           | 50 trees, full depth                            |
//!
//! Random draws cycle xgbm_random, gbm_random, mlp_random. Boosting draws:
//! depth 2–8, rounds 20–300, shrinkage 0.05–0.5, min leaf 1–10. MLP draws:
//! one or two hidden layers of width 16–256, 10–30 epochs, learning rate
//! log-uniform in 1e-3–3e-2. Forest sizes are limited to 20–200 trees.

use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    XgbmPreset,
    GbmPreset,
    GlmGrid,
    RandomForestDefault,
    ExtraTrees,
    MlpDefault,
    XgbmRandom,
    GbmRandom,
    MlpRandom,
    Stacked,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::XgbmPreset => "xgbm_preset",
            Family::GbmPreset => "gbm_preset",
            Family::GlmGrid => "glm_grid",
            Family::RandomForestDefault => "random_forest_default",
            Family::ExtraTrees => "extra_trees",
            Family::MlpDefault => "mlp_default",
            Family::XgbmRandom => "xgbm_random",
            Family::GbmRandom => "gbm_random",
            Family::MlpRandom => "mlp_random",
            Family::Stacked => "stacked",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadParams {
    Boost {
        rounds: usize,
        shrinkage: f64,
        max_depth: usize,
        min_samples_leaf: usize,
    },
    GlmGrid {
        l2: Vec<f64>,
        folds: usize,
    },
    Forest {
        n_trees: usize,
        max_depth: Option<usize>,
        min_samples_leaf: usize,
    },
    Mlp {
        hidden: Vec<usize>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
    },
    Stacked {
        bases: Vec<String>,
        folds: usize,
    },
}

impl HeadParams {
    /// `key=value` pairs joined by `;`, in a fixed key order.
    pub fn canonical(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join("|");
        let mut s = String::new();
        match self {
            HeadParams::Boost {
                rounds,
                shrinkage,
                max_depth,
                min_samples_leaf,
            } => write!(
                s,
                "rounds={rounds};shrinkage={shrinkage};max_depth={max_depth};min_samples_leaf={min_samples_leaf}"
            ),
            HeadParams::GlmGrid { l2, folds } => write!(s, "l2={};folds={folds}", list(l2)),
            HeadParams::Forest {
                n_trees,
                max_depth,
                min_samples_leaf,
            } => write!(
                s,
                "n_trees={n_trees};max_depth={};min_samples_leaf={min_samples_leaf}",
                max_depth.map_or("full".to_owned(), |d| d.to_string())
            ),
            HeadParams::Mlp {
                hidden,
                epochs,
                learning_rate,
                batch_size,
            } => write!(
                s,
                "hidden={};epochs={epochs};learning_rate={learning_rate};batch_size={batch_size}",
                hidden.iter().map(usize::to_string).collect::<Vec<_>>().join("|")
            ),
            HeadParams::Stacked { bases, folds } => write!(s, "bases={};folds={folds}", bases.join("|")),
        }
        .expect("writing to a String cannot fail");
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Origin {
    Preset(usize),
    Draw(usize),
    Stack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub family: Family,
    pub params: HeadParams,
    pub origin: Origin,
}

impl Eq for CandidateSpec {}

impl Hash for CandidateSpec {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.family.hash(state);
        self.params.canonical().hash(state);
        self.origin.hash(state);
    }
}

pub const DEPTH_RANGE: (usize, usize) = (2, 8);
pub const ROUNDS_RANGE: (usize, usize) = (20, 300);
pub const SHRINKAGE_RANGE: (f64, f64) = (0.05, 0.5);
pub const MIN_LEAF_RANGE: (usize, usize) = (1, 10);
pub const FOREST_SIZE_RANGE: (usize, usize) = (20, 200);
pub const HIDDEN_WIDTH_RANGE: (usize, usize) = (16, 256);
pub const MLP_EPOCH_RANGE: (usize, usize) = (10, 30);
pub const MLP_LR_RANGE: (f64, f64) = (1e-3, 3e-2);

pub const PRESET_COUNT: usize = 12;

impl CandidateSpec {
    /// `p00`..`p11` for presets, `r0000`.. for draws, `stack` for the
    /// stacked ensemble.
    pub fn id(&self) -> String {
        match self.origin {
            Origin::Preset(i) => format!("p{i:02}"),
            Origin::Draw(i) => format!("r{i:04}"),
            Origin::Stack => "stack".to_owned(),
        }
    }

    /// Seed for fitting this candidate, independent of fitting order.
    pub fn fit_seed(&self, base: u64) -> u64 {
        let stream = match self.origin {
            Origin::Preset(i) => i as u64,
            Origin::Draw(i) => (PRESET_COUNT + i) as u64,
            Origin::Stack => u64::MAX,
        };
        derive_seed(base, stream)
    }

    /// Whether two specs describe the same model up to origin.
    pub fn same_model(&self, other: &CandidateSpec) -> bool {
        self.family == other.family && self.params == other.params
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |v: usize, (lo, hi): (usize, usize)| (lo..=hi).contains(&v);
        let bad = |what: &str| Err(Error::Config(format!("{} {}: {what} out of range", self.id(), self.family.name())));
        match (&self.family, &self.params) {
            (
                Family::XgbmPreset | Family::GbmPreset | Family::XgbmRandom | Family::GbmRandom,
                HeadParams::Boost {
                    rounds,
                    shrinkage,
                    max_depth,
                    min_samples_leaf,
                },
            ) => {
                if !in_range(*max_depth, DEPTH_RANGE) {
                    return bad("max_depth");
                }
                if !in_range(*rounds, ROUNDS_RANGE) {
                    return bad("rounds");
                }
                if !(SHRINKAGE_RANGE.0..=SHRINKAGE_RANGE.1).contains(shrinkage) {
                    return bad("shrinkage");
                }
                if !in_range(*min_samples_leaf, MIN_LEAF_RANGE) {
                    return bad("min_samples_leaf");
                }
            }
            (Family::GlmGrid, HeadParams::GlmGrid { l2, folds }) => {
                if l2.is_empty() || l2.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return bad("l2");
                }
                if *folds < 2 {
                    return bad("folds");
                }
            }
            (
                Family::RandomForestDefault | Family::ExtraTrees,
                HeadParams::Forest {
                    n_trees,
                    min_samples_leaf,
                    ..
                },
            ) => {
                if !in_range(*n_trees, FOREST_SIZE_RANGE) {
                    return bad("n_trees");
                }
                if *min_samples_leaf == 0 {
                    return bad("min_samples_leaf");
                }
            }
            (
                Family::MlpDefault | Family::MlpRandom,
                HeadParams::Mlp {
                    hidden,
                    epochs,
                    learning_rate,
                    batch_size,
                },
            ) => {
                if hidden.is_empty() || hidden.len() > 2 || hidden.iter().any(|&h| !in_range(h, HIDDEN_WIDTH_RANGE)) {
                    return bad("hidden");
                }
                if !in_range(*epochs, MLP_EPOCH_RANGE) {
                    return bad("epochs");
                }
                if !(MLP_LR_RANGE.0..=MLP_LR_RANGE.1).contains(learning_rate) {
                    return bad("learning_rate");
                }
                if *batch_size == 0 {
                    return bad("batch_size");
                }
            }
            (Family::Stacked, HeadParams::Stacked { bases, folds }) => {
                if bases.len() < 2 || *folds < 2 {
                    return bad("bases or folds");
                }
            }
            _ => {
                return Err(Error::Config(format!(
                    "{}: parameters do not belong to family {}",
                    self.id(),
                    self.family.name()
                )))
            }
        }
        Ok(())
    }
}

fn boost(rounds: usize, shrinkage: f64, max_depth: usize, min_samples_leaf: usize) -> HeadParams {
    HeadParams::Boost {
        rounds,
        shrinkage,
        max_depth,
        min_samples_leaf,
    }
}

fn forest(n_trees: usize) -> HeadParams {
    HeadParams::Forest {
        n_trees,
        max_depth: None,
        min_samples_leaf: 1,
    }
}

fn preset(i: usize) -> CandidateSpec {
    let (family, params) = match i {
        0 => (Family::XgbmPreset, boost(100, 0.3, 6, 1)),
        1 => (Family::XgbmPreset, boost(200, 0.1, 4, 1)),
        2 => (Family::XgbmPreset, boost(60, 0.3, 8, 3)),
        3 => (
            Family::GlmGrid,
            HeadParams::GlmGrid {
                l2: vec![1e-4, 1e-2, 1.0],
                folds: 3,
            },
        ),
        4 => (Family::RandomForestDefault, forest(50)),
        5 => (Family::GbmPreset, boost(100, 0.1, 6, 1)),
        6 => (Family::GbmPreset, boost(100, 0.1, 7, 3)),
        7 => (Family::GbmPreset, boost(100, 0.1, 8, 5)),
        8 => (Family::GbmPreset, boost(200, 0.05, 5, 2)),
        9 => (Family::GbmPreset, boost(150, 0.1, 3, 1)),
        10 => (
            Family::MlpDefault,
            HeadParams::Mlp {
                hidden: vec![64],
                epochs: 20,
                learning_rate: 1e-2,
                batch_size: 10,
            },
        ),
        11 => (Family::ExtraTrees, forest(50)),
        _ => unreachable!("only {PRESET_COUNT} presets"),
    };
    CandidateSpec {
        family,
        params,
        origin: Origin::Preset(i),
    }
}

fn draw(seed: u64, j: usize) -> CandidateSpec {
    let mut rng = rng_from_seed(derive_seed(seed, j as u64));
    let boost_draw = |rng: &mut crate::rng::SeededRng| {
        boost(
            rng.random_range(ROUNDS_RANGE.0..=ROUNDS_RANGE.1),
            rng.random_range(SHRINKAGE_RANGE.0..=SHRINKAGE_RANGE.1),
            rng.random_range(DEPTH_RANGE.0..=DEPTH_RANGE.1),
            rng.random_range(MIN_LEAF_RANGE.0..=MIN_LEAF_RANGE.1),
        )
    };
    let (family, params) = match j % 3 {
        0 => (Family::XgbmRandom, boost_draw(&mut rng)),
        1 => (Family::GbmRandom, boost_draw(&mut rng)),
        _ => {
            let layers = rng.random_range(1..=2);
            let hidden = (0..layers)
                .map(|_| rng.random_range(HIDDEN_WIDTH_RANGE.0..=HIDDEN_WIDTH_RANGE.1))
                .collect();
            let (lo, hi) = (MLP_LR_RANGE.0.ln(), MLP_LR_RANGE.1.ln());
            let learning_rate = rng.random_range(lo..=hi).exp().clamp(MLP_LR_RANGE.0, MLP_LR_RANGE.1);
            (
                Family::MlpRandom,
                HeadParams::Mlp {
                    hidden,
                    epochs: rng.random_range(MLP_EPOCH_RANGE.0..=MLP_EPOCH_RANGE.1),
                    learning_rate,
                    batch_size: 10,
                },
            )
        }
    };
    CandidateSpec {
        family,
        params,
        origin: Origin::Draw(j),
    }
}

/// Deterministic, unbounded candidate stream.
pub fn candidate_space(seed: u64) -> impl Iterator<Item = CandidateSpec> {
    (0..).map(move |i| if i < PRESET_COUNT { preset(i) } else { draw(seed, i - PRESET_COUNT) })
}
