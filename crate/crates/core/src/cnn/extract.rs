use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::TrainedNetwork;
use crate::container::{Container, MAGIC_FEATURES};
use crate::error::{Error, Result};
use crate::tensor::{Layer, LayerKind, Tensor};

/// The retained prefix of a trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    /// Name of the network the prefix was cut from.
    pub source: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub dim: usize,
    /// Set when the network had a single dense layer and the cut fell back to
    /// the flattened convolutional features.
    pub warning: Option<String>,
}

impl FeatureExtractor {
    pub fn extract(&self, input: &Tensor) -> Result<Vec<f64>> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "extractor from {} expects {:?}, got {:?}",
                self.source,
                self.input_shape,
                input.shape()
            )));
        }
        let mut x = input.clone();
        for l in &self.layers {
            x = l.infer(&x)?;
        }
        Ok(x.into_data())
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(|l| l.kind).collect()
    }
}

/// Drops all but the first dense layer of the classification component.
///
/// The classification component is the maximal trailing run of
/// flatten / fully-connected / relu / dropout / softmax layers. The extractor
/// keeps everything before its first fully-connected layer, that layer, and
/// the activation directly after it. Dropout layers are not carried over
/// (they are the identity at inference). With only one dense layer in the
/// component the cut happens right before it and a warning is recorded.
pub fn truncate_head(trained: &TrainedNetwork) -> FeatureExtractor {
    let net = &trained.network;
    let kinds: Vec<LayerKind> = net.layers.iter().map(|l| l.kind).collect();
    let start = net.spec.head_start();
    let dense: Vec<usize> = (start..kinds.len())
        .filter(|&i| matches!(kinds[i], LayerKind::FullyConnected { .. }))
        .collect();
    let first = dense[0];
    let (end, warning) = if dense.len() >= 2 {
        let mut end = first + 1;
        if kinds.get(end) == Some(&LayerKind::Relu) {
            end += 1;
        }
        (end, None)
    } else {
        (
            first,
            Some(format!(
                "{} has a single dense layer; features are taken before it",
                net.spec.name
            )),
        )
    };
    let layers: Vec<Layer> = net.layers[..end]
        .iter()
        .filter(|l| !matches!(l.kind, LayerKind::Dropout { .. }))
        .cloned()
        .collect();
    let dim = layers
        .last()
        .map_or_else(|| net.spec.input_shape.iter().product(), |l| l.output_shape.iter().product());
    FeatureExtractor {
        source: net.spec.name.clone(),
        input_shape: net.spec.input_shape.clone(),
        layers,
        dim,
        warning,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub network: String,
    pub dataset: String,
    pub split: String,
}

/// Extracted features, one row per example, with aligned labels and ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub dim: usize,
    /// Row-major `len() × dim`.
    pub data: Vec<f64>,
    pub labels: Vec<bool>,
    pub ids: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct TableMeta {
    dim: usize,
    rows: usize,
    labels: Vec<bool>,
    ids: Vec<String>,
    provenance: Provenance,
}

impl FeatureTable {
    pub fn new(dim: usize, data: Vec<f64>, labels: Vec<bool>, ids: Vec<String>, provenance: Provenance) -> Result<Self> {
        if data.len() != dim * labels.len() || ids.len() != labels.len() {
            return Err(Error::Shape(format!(
                "feature table with {} values, dim {dim}, {} labels, {} ids",
                data.len(),
                labels.len(),
                ids.len()
            )));
        }
        Ok(Self {
            dim,
            data,
            labels,
            ids,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.len())
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = TableMeta {
            dim: self.dim,
            rows: self.len(),
            labels: self.labels.clone(),
            ids: self.ids.clone(),
            provenance: self.provenance.clone(),
        };
        let meta = serde_json::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Container::new(MAGIC_FEATURES, meta, self.data.clone()))
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let meta: TableMeta = serde_json::from_str(&c.meta).map_err(|e| Error::Format(format!("feature table metadata: {e}")))?;
        if meta.rows != meta.labels.len() {
            return Err(Error::Format("feature table row count disagrees with labels".into()));
        }
        Self::new(meta.dim, c.payload, meta.labels, meta.ids, meta.provenance)
    }

    pub fn write_cache(&self, path: &Path) -> Result<()> {
        self.to_container()?.write_file(path)
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        Self::from_container(Container::read_file(path, MAGIC_FEATURES)?)
    }
}

/// Runs every input through the extractor.
pub fn extract_features(
    extractor: &FeatureExtractor,
    inputs: &[&Tensor],
    labels: &[bool],
    ids: &[String],
    provenance: Provenance,
) -> Result<FeatureTable> {
    if inputs.len() != labels.len() || ids.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} inputs, {} labels, {} ids",
            inputs.len(),
            labels.len(),
            ids.len()
        )));
    }
    let mut data = Vec::with_capacity(inputs.len() * extractor.dim);
    for x in inputs {
        data.extend(extractor.extract(x)?);
    }
    FeatureTable::new(extractor.dim, data, labels.to_vec(), ids.to_vec(), provenance)
}
