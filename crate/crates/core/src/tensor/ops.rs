use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use rand::Rng;

/// Probability floor applied before taking the log in cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::Shape(format!(
            "matmul of {sa:?} and {sb:?}"
        )));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Output extent of a convolution or pooling window along one axis.
pub fn conv_output_dim(size: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Config("kernel and stride must be >= 1".into()));
    }
    let padded = size + 2 * padding;
    if padded < kernel {
        return Err(Error::Config(format!(
            "window {kernel} larger than padded extent {padded}"
        )));
    }
    if !(padded - kernel).is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "extent {size} with padding {padding}, window {kernel}, stride {stride} gives a non-integer output size"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn chw(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::Shape(format!("{what} must be C×H×W, got {s:?}"))),
    }
}

/// Range of output columns `ox` for which `ox*stride + k - pad` lands inside `[0, w)`.
fn valid_range(out: usize, w: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // ix = ox*stride + k - pad >= 0  =>  ox >= ceil((pad - k)/stride)
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    // ix < w  =>  ox*stride < w + pad - k
    let lim = w + pad;
    let hi = if lim <= k {
        0
    } else {
        ((lim - k - 1) / stride + 1).min(out)
    };
    (lo.min(hi), hi)
}

/// 2-D cross-correlation (no kernel flip) with zero padding.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (c_in, h, w) = chw(input, "conv2d input")?;
    let (c_out, k) = match kernels.shape() {
        [o, c, kh, kw] if *c == c_in && kh == kw => (*o, *kh),
        s => {
            return Err(Error::Shape(format!(
                "kernels {s:?} incompatible with input {:?}",
                input.shape()
            )))
        }
    };
    if bias.len() != c_out {
        return Err(Error::Shape(format!(
            "bias length {} for {c_out} output channels",
            bias.len()
        )));
    }
    let oh = conv_output_dim(h, k, stride, padding)?;
    let ow = conv_output_dim(w, k, stride, padding)?;
    let x = input.data();
    let kd = kernels.data();
    let mut out = vec![0.0; c_out * oh * ow];
    for oc in 0..c_out {
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        plane.fill(bias.data()[oc]);
        for ic in 0..c_in {
            let xin = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(oh, h, ky, stride, padding);
                for kx in 0..k {
                    let wv = kd[((oc * c_in + ic) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = valid_range(ow, w, kx, stride, padding);
                    if ox_hi <= ox_lo {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - padding;
                        let orow = &mut plane[oy * ow..(oy + 1) * ow];
                        let irow = &xin[iy * w..(iy + 1) * w];
                        if stride == 1 {
                            let ix0 = ox_lo + kx - padding;
                            let n = ox_hi - ox_lo;
                            for (o, &v) in orow[ox_lo..ox_hi].iter_mut().zip(&irow[ix0..ix0 + n]) {
                                *o += wv * v;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                orow[ox] += wv * irow[ox * stride + kx - padding];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], out)
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<Conv2dGrads> {
    let (c_in, h, w) = chw(input, "conv2d input")?;
    let (c_out, k) = match kernels.shape() {
        [o, c, kh, kw] if *c == c_in && kh == kw => (*o, *kh),
        s => return Err(Error::Shape(format!("kernels {s:?} for input {:?}", input.shape()))),
    };
    let oh = conv_output_dim(h, k, stride, padding)?;
    let ow = conv_output_dim(w, k, stride, padding)?;
    if grad_out.shape() != [c_out, oh, ow] {
        return Err(Error::Shape(format!(
            "upstream gradient {:?}, expected {:?}",
            grad_out.shape(),
            [c_out, oh, ow]
        )));
    }
    let x = input.data();
    let kd = kernels.data();
    let g = grad_out.data();
    let mut gx = vec![0.0; c_in * h * w];
    let mut gk = vec![0.0; kd.len()];
    let mut gb = vec![0.0; c_out];
    for oc in 0..c_out {
        let gplane = &g[oc * oh * ow..(oc + 1) * oh * ow];
        gb[oc] = gplane.iter().sum();
        for ic in 0..c_in {
            let xin = &x[ic * h * w..(ic + 1) * h * w];
            let gxin = &mut gx[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(oh, h, ky, stride, padding);
                for kx in 0..k {
                    let widx = ((oc * c_in + ic) * k + ky) * k + kx;
                    let wv = kd[widx];
                    let (ox_lo, ox_hi) = valid_range(ow, w, kx, stride, padding);
                    if ox_hi <= ox_lo {
                        continue;
                    }
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - padding;
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        let irow = &xin[iy * w..(iy + 1) * w];
                        let girow = &mut gxin[iy * w..(iy + 1) * w];
                        if stride == 1 {
                            let ix0 = ox_lo + kx - padding;
                            let n = ox_hi - ox_lo;
                            let gs = &grow[ox_lo..ox_hi];
                            for (&gv, &v) in gs.iter().zip(&irow[ix0..ix0 + n]) {
                                acc += gv * v;
                            }
                            for (gi, &gv) in girow[ix0..ix0 + n].iter_mut().zip(gs) {
                                *gi += wv * gv;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - padding;
                                acc += grow[ox] * irow[ix];
                                girow[ix] += wv * grow[ox];
                            }
                        }
                    }
                    gk[widx] = acc;
                }
            }
        }
    }
    Ok(Conv2dGrads {
        input: Tensor::new(vec![c_in, h, w], gx)?,
        kernels: Tensor::new(kernels.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![c_out], gb)?,
    })
}

/// Max pooling. Returns the output and, per output cell, the flat input index
/// of the first (row-major) maximal element in its window.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = chw(input, "maxpool input")?;
    let oh = conv_output_dim(h, window, stride, 0)?;
    let ow = conv_output_dim(w, window, stride, 0)?;
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for dy in 0..window {
                    let row = base + (oy * stride + dy) * w + ox * stride;
                    for dx in 0..window {
                        let v = x[row + dx];
                        if best_idx == usize::MAX || v > best {
                            best = v;
                            best_idx = row + dx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, arg))
}

pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::Shape(format!(
            "{} routing indices for {} gradient cells",
            argmax.len(),
            grad_out.len()
        )));
    }
    let mut gx = Tensor::zeros(input_shape);
    let d = gx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    Ok(gx)
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor {
        shape: input.shape().to_vec(),
        data,
    }
}

/// Subgradient at exactly zero is zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "relu gradient {:?} for input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// `W x + b`; the input is read as a flat vector whatever its shape.
pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (d_out, d_in) = match weights.shape() {
        [o, i] => (*o, *i),
        s => return Err(Error::Shape(format!("weights must be a matrix, got {s:?}"))),
    };
    if input.len() != d_in || bias.len() != d_out {
        return Err(Error::Shape(format!(
            "fully connected {d_in}->{d_out} given input of {} and bias of {}",
            input.len(),
            bias.len()
        )));
    }
    let x = input.data();
    let wd = weights.data();
    let out = (0..d_out)
        .map(|o| {
            let row = &wd[o * d_in..(o + 1) * d_in];
            bias.data()[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Tensor::new(vec![d_out], out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn fully_connected_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
    let (d_out, d_in) = match weights.shape() {
        [o, i] => (*o, *i),
        s => return Err(Error::Shape(format!("weights must be a matrix, got {s:?}"))),
    };
    if input.len() != d_in || grad_out.len() != d_out {
        return Err(Error::Shape(format!(
            "fully connected {d_in}->{d_out} backward given input {} and gradient {}",
            input.len(),
            grad_out.len()
        )));
    }
    let x = input.data();
    let wd = weights.data();
    let g = grad_out.data();
    let mut gx = vec![0.0; d_in];
    let mut gw = vec![0.0; d_out * d_in];
    for o in 0..d_out {
        let go = g[o];
        let row = &wd[o * d_in..(o + 1) * d_in];
        let grow = &mut gw[o * d_in..(o + 1) * d_in];
        for i in 0..d_in {
            grow[i] = go * x[i];
            gx[i] += go * row[i];
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weights: Tensor::new(vec![d_out, d_in], gw)?,
        bias: Tensor::new(vec![d_out], g.to_vec())?,
    })
}

/// Inverted dropout. In training mode returns the per-element multiplier
/// (0 or 1/(1-rate)) so the backward pass can reuse it.
pub fn dropout(input: &Tensor, rate: f64, train: bool, rng: &mut SeededRng) -> (Tensor, Option<Vec<f64>>) {
    if !train || rate == 0.0 {
        return (input.clone(), None);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    (
        Tensor {
            shape: input.shape().to_vec(),
            data,
        },
        Some(mask),
    )
}

/// Numerically stable softmax (max subtraction, then renormalisation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − ⟨g, p⟩)`.
pub fn softmax_backward(probs: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_out).map(|(p, g)| p * g).sum();
    probs.iter().zip(grad_out).map(|(p, g)| p * (g - dot)).collect()
}

pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or_else(|| {
        Error::Validation(format!("label {label} out of range for {} classes", probs.len()))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Gradient of softmax followed by cross-entropy with respect to the logits.
pub fn softmax_cross_entropy_grad(probs: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= probs.len() {
        return Err(Error::Validation(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let mut g = probs.to_vec();
    g[label] -= 1.0;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_values() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[5.0, 6.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
        let z = matmul(&a, &Tensor::zeros(&[2, 3])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let err = matmul(&a, &Tensor::zeros(&[3, 1])).unwrap_err().to_string();
        assert!(err.contains("[2, 2]") && err.contains("[3, 1]"), "{err}");
    }

    #[test]
    fn conv_identity_and_zero() {
        let x = t(&[1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let k = t(&[1, 1, 1, 1], &[1.0]);
        let b = t(&[1], &[0.0]);
        assert_eq!(conv2d(&x, &k, &b, 1, 0).unwrap(), x);
        let kz = Tensor::zeros(&[2, 1, 3, 3]);
        let y = conv2d(&x, &kz, &Tensor::zeros(&[2]), 1, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_shape_formula() {
        let x = Tensor::filled(&[1, 8, 8], 0.5);
        let y = conv2d(&x, &Tensor::filled(&[4, 1, 3, 3], 0.1), &Tensor::zeros(&[4]), 1, 1).unwrap();
        assert_eq!(y.shape(), &[4, 8, 8]);
        let y = conv2d(&x, &Tensor::filled(&[2, 1, 2, 2], 0.1), &Tensor::zeros(&[2]), 2, 0).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4]);
    }

    #[test]
    fn conv_rejects_bad_configs() {
        let x = Tensor::filled(&[1, 8, 8], 0.5);
        let k = Tensor::filled(&[1, 1, 3, 3], 0.1);
        assert!(matches!(conv2d(&x, &k, &Tensor::zeros(&[1]), 2, 0), Err(Error::Config(_))));
        let k2 = Tensor::filled(&[1, 2, 3, 3], 0.1);
        assert!(matches!(conv2d(&x, &k2, &Tensor::zeros(&[1]), 1, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_matches_direct_definition_with_stride_and_padding() {
        let mut rng = rng_from_seed(11);
        let x = Tensor::new(vec![2, 7, 7], (0..98).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let k = Tensor::new(vec![3, 2, 3, 3], (0..54).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let b = t(&[3], &[0.1, -0.2, 0.3]);
        let (stride, pad) = (2, 1);
        let y = conv2d(&x, &k, &b, stride, pad).unwrap();
        assert_eq!(y.shape(), &[3, 4, 4]);
        for oc in 0..3 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let mut s = b.data()[oc];
                    for ic in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if (0..7).contains(&iy) && (0..7).contains(&ix) {
                                    s += k.data()[((oc * 2 + ic) * 3 + ky) * 3 + kx]
                                        * x.data()[(ic * 7 + iy as usize) * 7 + ix as usize];
                                }
                            }
                        }
                    }
                    let got = y.data()[(oc * 4 + oy) * 4 + ox];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn maxpool_values_and_ties() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (y, arg) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);

        let c = Tensor::filled(&[1, 4, 4], 0.7);
        let (y, arg) = maxpool2d(&c, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
        let g = maxpool2d_backward(c.shape(), &arg, &Tensor::filled(&[1, 2, 2], 1.0)).unwrap();
        let mut expect = vec![0.0; 16];
        for idx in [0, 2, 8, 10] {
            expect[idx] = 1.0;
        }
        assert_eq!(g.data(), expect.as_slice());

        let (y, _) = maxpool2d(&x, 1, 1).unwrap();
        assert_eq!(y, x);
        assert!(maxpool2d(&Tensor::zeros(&[1, 5, 5]), 2, 2).is_err());
    }

    #[test]
    fn relu_convention() {
        let x = t(&[3], &[-1.0, 2.0, 0.0]);
        assert_eq!(relu(&x).data(), &[0.0, 2.0, 0.0]);
        let g = relu_backward(&x, &t(&[3], &[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 5.0, 0.0]);
    }

    #[test]
    fn dense_identity_and_constant() {
        let x = t(&[3], &[1.0, -2.0, 3.0]);
        assert_eq!(fully_connected(&x, &Tensor::identity(3), &Tensor::zeros(&[3])).unwrap(), x);
        let c = t(&[2], &[0.5, -0.5]);
        assert_eq!(fully_connected(&x, &Tensor::zeros(&[2, 3]), &c).unwrap(), c);
        assert!(fully_connected(&x, &Tensor::zeros(&[2, 4]), &c).is_err());
    }

    #[test]
    fn dropout_modes() {
        let mut rng = rng_from_seed(5);
        let x = Tensor::new(vec![100], (0..100).map(f64::from).collect()).unwrap();
        assert_eq!(dropout(&x, 0.0, true, &mut rng).0, x);
        assert_eq!(dropout(&x, 0.7, false, &mut rng).0, x);
        let (a, _) = dropout(&x, 0.5, true, &mut rng_from_seed(9));
        let (b, _) = dropout(&x, 0.5, true, &mut rng_from_seed(9));
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_preserves_mean_in_expectation() {
        let mut rng = rng_from_seed(2024);
        let x = Tensor::new(vec![10_000], (0..10_000).map(|i| 1.0 + (i % 7) as f64).collect()).unwrap();
        let (y, _) = dropout(&x, 0.5, true, &mut rng);
        let mx = x.data().iter().sum::<f64>() / 1e4;
        let my = y.data().iter().sum::<f64>() / 1e4;
        assert!((my - mx).abs() / mx < 0.05, "{mx} vs {my}");
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[1f64.ln(), 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        let a = softmax(&[0.3, -1.2, 2.5]);
        let b = softmax(&[100.3, 98.8, 102.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let big = softmax(&[1000.0, -1000.0, 0.0]);
        assert!(big.iter().all(|v| v.is_finite()));
        assert!((big.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert!((cross_entropy(&[0.5, 0.5], 0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - 27.631_021_115_928_547).abs() < 1e-9);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
        assert_eq!(softmax_cross_entropy_grad(&[0.2, 0.8], 1).unwrap(), vec![0.2, 0.8 - 1.0]);
    }
}
