//! Defect / no-defect image datasets: directory loading, stratified
//! splitting, synthetic texture generation and mini-batching.

mod batch;
mod loader;
mod split;
mod synth;

pub use batch::normalize_and_batch;
pub use loader::{load_problem_directory, write_problem_directory, DatasetManifest, ManifestEntry};
pub use split::{stratified_split, DatasetSplit, SplitPart, DEFAULT_FRACTIONS};
pub use synth::{generate_synthetic_problem, synthetic_suite, DefectKind, SyntheticProblemSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFECT_DIR: &str = "defect";
pub const CLEAN_DIR: &str = "no_defect";

/// Default side length images are resized to.
pub const DEFAULT_IMAGE_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `"<class dir>/<file stem>"`, unique within a dataset.
    pub id: String,
    /// `1×H×W`, values in `[0, 1]`.
    pub pixels: Tensor,
    pub defect: bool,
}

impl LabeledImage {
    pub fn class_index(&self) -> usize {
        usize::from(self.defect)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemDataset {
    pub name: String,
    pub images: Vec<LabeledImage>,
}

impl ProblemDataset {
    pub fn new(name: impl Into<String>, images: Vec<LabeledImage>) -> Result<Self> {
        let name = name.into();
        let mut seen = std::collections::HashSet::new();
        for img in &images {
            if !seen.insert(img.id.as_str()) {
                return Err(Error::Data(format!("{name}: duplicate image id {}", img.id)));
            }
        }
        Ok(Self { name, images })
    }

    pub fn defect_count(&self) -> usize {
        self.images.iter().filter(|i| i.defect).count()
    }

    pub fn clean_count(&self) -> usize {
        self.images.len() - self.defect_count()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}
