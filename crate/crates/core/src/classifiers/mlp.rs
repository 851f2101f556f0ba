use super::{check_binary, Matrix, Standardizer};
use crate::cnn::io::{fill_params, params_payload};
use crate::cnn::{build_network, train_with, Checkpoint, ExampleSet, Network, NetworkSpec, TrainConfig, POSITIVE_CLASS};
use crate::container::{PayloadReader, PayloadWriter};
use crate::error::{Error, Result};
use crate::tensor::{LayerKind, Tensor};

/// Dense network over standardised feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    pub scaler: Standardizer,
    pub hidden: Vec<usize>,
    pub network: Network,
    pub selected_epoch: usize,
}

pub fn mlp_spec(input_dim: usize, hidden: &[usize]) -> NetworkSpec {
    let mut layers = Vec::with_capacity(2 * hidden.len() + 2);
    for &h in hidden {
        layers.push(LayerKind::FullyConnected { out_dim: h });
        layers.push(LayerKind::Relu);
    }
    layers.push(LayerKind::FullyConnected { out_dim: 2 });
    layers.push(LayerKind::Softmax);
    NetworkSpec {
        name: "mlp-head".into(),
        layers,
        input_shape: vec![input_dim],
        classes: 2,
    }
}

impl MlpHead {
    pub fn n_features(&self) -> usize {
        self.scaler.dim()
    }

    pub fn predict_class_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z: Vec<f64> = x.iter().enumerate().map(|(j, &v)| self.scaler.apply(j, v)).collect();
        self.network.predict(&Tensor::vector(z))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_class_probs(x)?[POSITIVE_CLASS])
    }

    pub(crate) fn write(&self, w: &mut PayloadWriter) {
        self.scaler.write(w);
        w.push_usize(self.hidden.len());
        for &h in &self.hidden {
            w.push_usize(h);
        }
        w.push_usize(self.selected_epoch);
        w.push_slice(&params_payload(&self.network.layers));
    }

    pub(crate) fn read(r: &mut PayloadReader<'_>) -> Result<Self> {
        let scaler = Standardizer::read(r)?;
        let n_hidden = r.next_usize()?;
        let hidden = (0..n_hidden).map(|_| r.next_usize()).collect::<Result<Vec<_>>>()?;
        let selected_epoch = r.next_usize()?;
        let spec = mlp_spec(scaler.dim(), &hidden);
        let mut layers = spec.resolve()?;
        fill_params(&mut layers, &r.next_slice()?)?;
        Ok(Self {
            scaler,
            hidden,
            network: Network { spec, layers },
            selected_epoch,
        })
    }
}

/// Trains with the network trainer and keeps the final epoch: there is no
/// separate validation split at this level.
pub fn fit_mlp_head(x: &Matrix, labels: &[bool], hidden: &[usize], config: &TrainConfig) -> Result<MlpHead> {
    check_binary(x, labels)?;
    if hidden.len() > 2 || hidden.contains(&0) {
        return Err(Error::Config(format!("mlp head takes up to two non-empty hidden layers, got {hidden:?}")));
    }
    let scaler = Standardizer::fit(x);
    let z = scaler.transform(x);
    let inputs: Vec<Tensor> = (0..z.rows()).map(|i| Tensor::vector(z.row(i).to_vec())).collect();
    let classes: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
    let set = ExampleSet::new(inputs.iter().collect(), classes)?;
    let spec = mlp_spec(x.cols(), hidden);
    let net = build_network(&spec, config.seed)?;
    let trained = train_with(net, &set, &set, config, Checkpoint::FinalEpoch)?;
    Ok(MlpHead {
        scaler,
        hidden: hidden.to_vec(),
        network: trained.network,
        selected_epoch: trained.selected_epoch,
    })
}
