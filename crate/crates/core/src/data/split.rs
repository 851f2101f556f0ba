use serde::{Deserialize, Serialize};

use super::ProblemDataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, shuffle};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    pub fn name(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Val => "val",
            SplitPart::Test => "test",
        }
    }
}

/// Indices into a [`ProblemDataset`] for each part, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl DatasetSplit {
    pub fn part(&self, part: SplitPart) -> &[usize] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }

    pub fn ids(&self, dataset: &ProblemDataset, part: SplitPart) -> Vec<String> {
        self.part(part).iter().map(|&i| dataset.images[i].id.clone()).collect()
    }
}

/// Per class: shuffle with the seed, then train takes `floor(f_train·n)`,
/// val takes `floor(f_val·n)` and test takes the remainder.
pub fn stratified_split(dataset: &ProblemDataset, fractions: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be within [0, 1] and sum to 1"
        )));
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        fractions,
        seed,
    };
    for (class, defect) in [(0u64, false), (1u64, true)] {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.images[i].defect == defect)
            .collect();
        let n = members.len();
        if n < 3 {
            return Err(Error::Data(format!(
                "{}: class {} has {n} images, at least 3 are needed to split",
                dataset.name,
                if defect { "defect" } else { "no_defect" }
            )));
        }
        shuffle(&mut members, &mut rng_from_seed(derive_seed(seed, class)));
        // the small offset keeps e.g. 0.7 * 1000 from flooring to 699
        let n_train = ((fractions[0] * n as f64) + 1e-9).floor() as usize;
        let n_val = (((fractions[1] * n as f64) + 1e-9).floor() as usize).min(n - n_train);
        split.train.extend(&members[..n_train]);
        split.val.extend(&members[n_train..n_train + n_val]);
        split.test.extend(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}
