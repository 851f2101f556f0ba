use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::search::LeaderRow;
use super::space::CandidateSpec;
use crate::classifiers::{HeadModel, ProbabilisticClassifier};
use crate::cnn::FeatureExtractor;
use crate::container::{Container, MAGIC_HEAD, MAGIC_NETWORK};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_scores, EvalReport};
use crate::tensor::Tensor;

/// A truncated network followed by the selected head.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoClassifierModel {
    extractor: FeatureExtractor,
    head: Arc<HeadModel>,
    spec: CandidateSpec,
    leaderboard: Vec<LeaderRow>,
    validation_auc: f64,
}

#[derive(Serialize, Deserialize)]
struct CompositeMeta {
    kind: String,
    input_dim: usize,
    spec: CandidateSpec,
    validation_auc: f64,
    leaderboard: Vec<LeaderRow>,
}

pub fn assemble_auto_classifier(
    extractor: FeatureExtractor,
    head: Arc<HeadModel>,
    spec: CandidateSpec,
    validation_auc: f64,
    leaderboard: Vec<LeaderRow>,
) -> Result<AutoClassifierModel> {
    let d = head.n_features();
    // d == 0 only for a boosted model without trees, which takes any width
    if d != 0 && d != extractor.dim {
        return Err(Error::Shape(format!(
            "head expects {d} features but the extractor produces {}",
            extractor.dim
        )));
    }
    Ok(AutoClassifierModel {
        extractor,
        head,
        spec,
        leaderboard,
        validation_auc,
    })
}

impl AutoClassifierModel {
    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn head(&self) -> &HeadModel {
        &self.head
    }

    pub fn spec(&self) -> &CandidateSpec {
        &self.spec
    }

    pub fn leaderboard(&self) -> &[LeaderRow] {
        &self.leaderboard
    }

    pub fn validation_auc(&self) -> f64 {
        self.validation_auc
    }

    pub fn predict_proba(&self, image: &Tensor) -> Result<f64> {
        self.head.predict_proba(&self.extractor.extract(image)?)
    }

    pub fn predict(&self, image: &Tensor) -> Result<bool> {
        Ok(self.predict_proba(image)? >= 0.5)
    }

    /// Extractor container followed by the head container; the head metadata
    /// also carries the winning spec and the leaderboard snapshot.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = CompositeMeta {
            kind: self.head.kind().to_owned(),
            input_dim: self.extractor.dim,
            spec: self.spec.clone(),
            validation_auc: self.validation_auc,
            leaderboard: self.leaderboard.clone(),
        };
        let head = self.head.to_container()?;
        let head = Container::new(
            MAGIC_HEAD,
            serde_json::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?,
            head.payload,
        );
        let mut out = self.extractor.to_container()?.to_bytes();
        out.extend(head.to_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (net, used) = Container::from_bytes(bytes, MAGIC_NETWORK)?;
        let (head, rest) = Container::from_bytes(&bytes[used..], MAGIC_HEAD)?;
        if used + rest != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after composite model",
                bytes.len() - used - rest
            )));
        }
        let meta: CompositeMeta =
            serde_json::from_str(&head.meta).map_err(|e| Error::Format(format!("composite metadata: {e}")))?;
        let extractor = FeatureExtractor::from_container(net)?;
        let model = HeadModel::from_container(&head)?;
        if meta.input_dim != extractor.dim {
            return Err(Error::Format(format!(
                "composite metadata names {} inputs, extractor gives {}",
                meta.input_dim, extractor.dim
            )));
        }
        assemble_auto_classifier(extractor, Arc::new(model), meta.spec, meta.validation_auc, meta.leaderboard)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Per-image wall-clock inference times, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceTiming {
    pub extractor_mean: f64,
    pub head_mean: f64,
    pub head_stddev: f64,
    pub total_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoEvaluation {
    pub report: EvalReport,
    pub timing: InferenceTiming,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn evaluate_auto_classifier(model: &AutoClassifierModel, images: &[&Tensor], truth: &[bool]) -> Result<AutoEvaluation> {
    if images.is_empty() {
        return Err(Error::Validation("test split is empty".into()));
    }
    if images.len() != truth.len() {
        return Err(Error::Shape(format!("{} images for {} labels", images.len(), truth.len())));
    }
    let mut scores = Vec::with_capacity(images.len());
    let mut ext = Vec::with_capacity(images.len());
    let mut head = Vec::with_capacity(images.len());
    for img in images {
        let t0 = Instant::now();
        let f = model.extractor.extract(img)?;
        let t1 = Instant::now();
        scores.push(model.head.predict_proba(&f)?);
        ext.push((t1 - t0).as_secs_f64());
        head.push(t1.elapsed().as_secs_f64());
    }
    let report = evaluate_scores(&scores, truth, 0.5)?;
    let (extractor_mean, _) = mean_std(&ext);
    let (head_mean, head_stddev) = mean_std(&head);
    Ok(AutoEvaluation {
        report,
        timing: InferenceTiming {
            extractor_mean,
            head_mean,
            head_stddev,
            total_mean: extractor_mean + head_mean,
        },
    })
}

/// Fails when any test id also appears among the ids the head was fit or
/// selected on.
pub fn check_disjoint_ids<'a>(test: &[String], seen: impl IntoIterator<Item = &'a String>) -> Result<()> {
    let seen: HashSet<&String> = seen.into_iter().collect();
    if let Some(id) = test.iter().find(|id| seen.contains(id)) {
        return Err(Error::Data(format!("test example {id} also appears in the search features")));
    }
    Ok(())
}
