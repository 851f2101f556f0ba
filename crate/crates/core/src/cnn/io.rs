//! `ACNN` containers for trained networks and feature extractors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::extract::FeatureExtractor;
use super::train::{EpochRecord, TrainedNetwork};
use super::{Network, NetworkSpec};
use crate::container::{Container, PayloadReader, MAGIC_NETWORK};
use crate::error::{Error, Result};
use crate::tensor::{Layer, LayerKind, Tensor};

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum NetMeta {
    Network {
        spec: NetworkSpec,
        history: Vec<EpochRecord>,
        selected_epoch: usize,
        validation_auc: f64,
    },
    Extractor {
        source: String,
        input_shape: Vec<usize>,
        layers: Vec<LayerKind>,
        dim: usize,
        warning: Option<String>,
    },
}

pub(crate) fn params_payload(layers: &[Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.params.iter().flat_map(|p| p.data().iter().copied()))
        .collect()
}

pub(crate) fn fill_params(layers: &mut [Layer], payload: &[f64]) -> Result<()> {
    let mut r = PayloadReader::new(payload);
    for l in layers.iter_mut() {
        for p in &mut l.params {
            let vals = r.take(p.len())?;
            *p = Tensor::new(p.shape().to_vec(), vals.to_vec())?;
        }
    }
    r.finish()
}

fn meta_json(meta: &NetMeta) -> Result<String> {
    serde_json::to_string(meta).map_err(|e| Error::Format(e.to_string()))
}

impl TrainedNetwork {
    pub fn to_container(&self) -> Result<Container> {
        let meta = NetMeta::Network {
            spec: self.network.spec.clone(),
            history: self.history.clone(),
            selected_epoch: self.selected_epoch,
            validation_auc: self.validation_auc,
        };
        Ok(Container::new(MAGIC_NETWORK, meta_json(&meta)?, params_payload(&self.network.layers)))
    }

    pub fn from_container(c: Container) -> Result<Self> {
        match serde_json::from_str(&c.meta).map_err(|e| Error::Format(format!("network metadata: {e}")))? {
            NetMeta::Network {
                spec,
                history,
                selected_epoch,
                validation_auc,
            } => {
                let mut layers = spec.resolve()?;
                fill_params(&mut layers, &c.payload)?;
                Ok(Self {
                    network: Network { spec, layers },
                    history,
                    selected_epoch,
                    validation_auc,
                    train_seconds: 0.0,
                })
            }
            NetMeta::Extractor { .. } => Err(Error::Format("container holds a feature extractor, not a network".into())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write_file(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::read_file(path, MAGIC_NETWORK)?)
    }
}

impl FeatureExtractor {
    pub fn to_container(&self) -> Result<Container> {
        let meta = NetMeta::Extractor {
            source: self.source.clone(),
            input_shape: self.input_shape.clone(),
            layers: self.layer_kinds(),
            dim: self.dim,
            warning: self.warning.clone(),
        };
        Ok(Container::new(MAGIC_NETWORK, meta_json(&meta)?, params_payload(&self.layers)))
    }

    pub fn from_container(c: Container) -> Result<Self> {
        match serde_json::from_str(&c.meta).map_err(|e| Error::Format(format!("extractor metadata: {e}")))? {
            NetMeta::Extractor {
                source,
                input_shape,
                layers: kinds,
                dim,
                warning,
            } => {
                let mut shape = input_shape.clone();
                let mut layers = Vec::with_capacity(kinds.len());
                for k in kinds {
                    let l = Layer::new(k, &shape)?;
                    shape = l.output_shape.clone();
                    layers.push(l);
                }
                if shape.iter().product::<usize>() != dim {
                    return Err(Error::Format(format!("extractor output {shape:?} does not match dim {dim}")));
                }
                fill_params(&mut layers, &c.payload)?;
                Ok(Self {
                    source,
                    input_shape,
                    layers,
                    dim,
                    warning,
                })
            }
            NetMeta::Network { .. } => Err(Error::Format("container holds a network, not a feature extractor".into())),
        }
    }
}
