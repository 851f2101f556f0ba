//! Central finite-difference gradient checking.

use rand::Rng;

use super::{Layer, Mode, Tensor};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

const PROBE_SEED: u64 = 0x0bad_5eed;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of the scalar function
/// `f` at `x`; returns the worst relative error.
pub fn scalar_gradient_check<F>(f: F, x: &[f64], analytic: &[f64], eps: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe);
        probe[i] = x[i] - eps;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub input_error: f64,
    pub param_error: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.input_error.max(self.param_error)
    }
}

/// Checks a layer's backward pass (input and parameter gradients) against
/// central differences of `⟨forward(x), r⟩` for a fixed random projection `r`.
/// The layer is evaluated in [`Mode::Eval`], so dropout is the identity.
pub fn finite_difference_check(layer: &Layer, input: &Tensor, eps: f64) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let mut rng = rng_from_seed(PROBE_SEED);
    let out_len: usize = layer.output_shape.iter().product();
    let probe: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let probe_t = Tensor::new(layer.output_shape.clone(), probe.clone())?;

    let objective = |l: &Layer, x: &Tensor| -> f64 {
        let y = l.infer(x).expect("shapes validated above");
        y.data().iter().zip(&probe).map(|(a, b)| a * b).sum()
    };

    let (_, cache) = layer.forward(input, Mode::Eval, None)?;
    let (grad_in, grad_params) = layer.backward(&cache, &probe_t)?;

    let shape = input.shape().to_vec();
    let input_error = scalar_gradient_check(
        |x| objective(layer, &Tensor::new(shape.clone(), x.to_vec()).unwrap()),
        input.data(),
        grad_in.data(),
        eps,
    );

    let mut param_error: f64 = 0.0;
    for (p, grad) in grad_params.iter().enumerate() {
        let err = scalar_gradient_check(
            |theta| {
                let mut l = layer.clone();
                l.params[p].data_mut().copy_from_slice(theta);
                objective(&l, input)
            },
            layer.params[p].data(),
            grad.data(),
            eps,
        );
        param_error = param_error.max(err);
    }
    Ok(GradCheckReport {
        input_error,
        param_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::LayerKind;
    use crate::tensor::ops::{softmax, softmax_cross_entropy_grad, cross_entropy};

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = rng_from_seed(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn initialised(kind: LayerKind, input: &[usize], seed: u64) -> Layer {
        let mut l = Layer::new(kind, input).unwrap();
        l.init_params(&mut rng_from_seed(seed));
        for b in l.params.iter_mut().skip(1) {
            for (i, v) in b.data_mut().iter_mut().enumerate() {
                *v = 0.1 * i as f64 - 0.05;
            }
        }
        l
    }

    #[test]
    fn linear_layer_is_exact_for_any_eps() {
        let l = initialised(LayerKind::FullyConnected { out_dim: 3 }, &[4], 1);
        let x = random_tensor(&[4], 2);
        for eps in [1e-6, 1e-5, 1e-4] {
            let r = finite_difference_check(&l, &x, eps).unwrap();
            assert!(r.max_error() <= 1e-6, "eps {eps}: {r:?}");
        }
    }

    #[test]
    fn relu_away_from_kink() {
        let l = Layer::new(LayerKind::Relu, &[20]).unwrap();
        let mut x = random_tensor(&[20], 3);
        for v in x.data_mut() {
            *v = if *v >= 0.0 { *v + 0.1 } else { *v - 0.1 };
        }
        let r = finite_difference_check(&l, &x, 1e-5).unwrap();
        assert!(r.max_error() <= 1e-6, "{r:?}");
    }

    #[test]
    fn conv_random_instance() {
        let kind = LayerKind::Conv2d {
            out_channels: 2,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let l = initialised(kind, &[1, 5, 5], 4);
        let x = random_tensor(&[1, 5, 5], 5);
        let r = finite_difference_check(&l, &x, 1e-5).unwrap();
        assert!(r.max_error() <= 1e-4, "{r:?}");
    }

    #[test]
    fn softmax_cross_entropy_combined_gradient() {
        let z = [0.3, -1.1, 0.7];
        let grad = softmax_cross_entropy_grad(&softmax(&z), 2).unwrap();
        let err = scalar_gradient_check(|z| cross_entropy(&softmax(z), 2).unwrap(), &z, &grad, 1e-5);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let l = Layer::new(LayerKind::Relu, &[2]).unwrap();
        assert!(finite_difference_check(&l, &Tensor::filled(&[2], 1.0), 0.0).is_err());
    }
}
