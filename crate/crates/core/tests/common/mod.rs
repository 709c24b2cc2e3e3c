//! Naive reference implementations and a finite-difference checker shared by
//! the integration tests.

#![allow(dead_code)]

use fedfusion::classifier::CnnModel;
use fedfusion::nn::ops::{cross_entropy_loss, one_hot, softmax, softmax_cross_entropy_backward};
use fedfusion::nn::Layer;
use fedfusion::Tensor;
use rand::seq::index::sample;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU is differentiable at every entry.
pub fn away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values spaced 0.01 apart in random order, so every pooling
/// window has a unique maximum.
pub fn distinct_values(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let order = sample(rng, n, n).into_vec();
    let data = order.iter().map(|&k| k as f64 * 0.01 - n as f64 * 0.005).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn naive_dense(x: &[Vec<f64>], w: &[Vec<f64>], b: &[f64]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..b.len())
                .map(|j| {
                    let mut s = b[j];
                    for (i, xi) in row.iter().enumerate() {
                        s += xi * w[i][j];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// `x[batch][channel][position]`, `f[out][in][tap]`.
pub fn naive_conv1d(x: &[Vec<Vec<f64>>], f: &[Vec<Vec<f64>>], bias: &[f64], stride: usize) -> Vec<Vec<Vec<f64>>> {
    let len = x[0][0].len();
    let taps = f[0][0].len();
    let out_len = (len - taps) / stride + 1;
    x.iter()
        .map(|sample| {
            f.iter()
                .zip(bias)
                .map(|(filter, &b)| {
                    (0..out_len)
                        .map(|p| {
                            let mut s = b;
                            for (c, channel) in sample.iter().enumerate() {
                                for t in 0..taps {
                                    s += channel[p * stride + t] * filter[c][t];
                                }
                            }
                            s
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn naive_maxpool(x: &[Vec<Vec<f64>>], window: usize) -> Vec<Vec<Vec<f64>>> {
    x.iter()
        .map(|sample| {
            sample
                .iter()
                .map(|ch| {
                    ch.chunks_exact(window)
                        .map(|w| w.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Plain `exp(x) / Σ exp(x)` per row.
pub fn naive_softmax(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let e: Vec<f64> = row.iter().map(|v| v.exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

pub fn to_2d(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect()
}

pub fn to_3d(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let (c, l) = (t.shape()[1], t.shape()[2]);
    t.data()
        .chunks(c * l)
        .map(|s| s.chunks(l).map(<[f64]>::to_vec).collect())
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `|a - n| / max(|a|, |n|)`, zero when both are exactly zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradReport {
    pub coords: usize,
    pub worst: f64,
}

impl GradReport {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.coords += 1;
        self.worst = self.worst.max(rel_err(analytic, numeric));
    }
}

/// Up to `k` distinct indices below `n`.
fn coords(n: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    sample(rng, n, k.min(n)).into_vec()
}

fn central_difference(mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP)
}

/// Checks one layer under the scalar loss `Σ r ⊙ layer(x)` for a random `r`.
/// Samples up to `per_tensor` coordinates of the input and of every
/// parameter tensor.
pub fn check_layer(mut layer: Layer, x: &Tensor, per_tensor: usize, rng: &mut impl Rng) -> GradReport {
    let y = layer.forward(x).unwrap();
    let r = random_tensor(y.shape(), rng);
    let gx = layer.backward(&r).unwrap();
    let loss = |l: &Layer, input: &Tensor| -> f64 {
        let out = l.infer(input).unwrap();
        out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let mut report = GradReport::default();
    for i in coords(x.len(), per_tensor, rng) {
        let numeric = central_difference(|h| {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            loss(&layer, &xp)
        });
        report.record(gx.data()[i], numeric);
    }
    let n_params = layer.params().len();
    for p in 0..n_params {
        let grad = layer.params()[p].grad.clone();
        for j in coords(grad.len(), per_tensor, rng) {
            let numeric = central_difference(|h| {
                let mut probe = layer.clone();
                probe.params_mut()[p].value.data_mut()[j] += h;
                loss(&probe, x)
            });
            report.record(grad.data()[j], numeric);
        }
    }
    report
}

/// Softmax followed by mean cross-entropy, gradient with respect to logits.
pub fn check_softmax_ce(logits: &Tensor, labels: &[usize], per_tensor: usize, rng: &mut impl Rng) -> GradReport {
    let y = one_hot(labels, logits.shape()[1]).unwrap();
    let probs = softmax(logits).unwrap();
    let g = softmax_cross_entropy_backward(&probs, &y).unwrap();
    let mut report = GradReport::default();
    for i in coords(logits.len(), per_tensor, rng) {
        let numeric = central_difference(|h| {
            let mut z = logits.clone();
            z.data_mut()[i] += h;
            cross_entropy_loss(&softmax(&z).unwrap(), &y).unwrap()
        });
        report.record(g.data()[i], numeric);
    }
    report
}

/// Whole classifier under mean cross-entropy, input and parameter gradients.
pub fn check_cnn(model: &CnnModel, z: &Tensor, labels: &[usize], per_tensor: usize, rng: &mut impl Rng) -> GradReport {
    let y = one_hot(labels, fedfusion::NUM_CLASSES).unwrap();
    let mut m = model.clone();
    let logits = m.net_mut().forward(z).unwrap();
    let probs = softmax(&logits).unwrap();
    let gx = m
        .net_mut()
        .backward(&softmax_cross_entropy_backward(&probs, &y).unwrap())
        .unwrap();
    let gp = m.net().flat_grads();
    let loss = |model: &CnnModel, input: &Tensor| {
        cross_entropy_loss(&softmax(&model.logits(input).unwrap()).unwrap(), &y).unwrap()
    };
    let mut report = GradReport::default();
    for i in coords(z.len(), per_tensor, rng) {
        let numeric = central_difference(|h| {
            let mut zp = z.clone();
            zp.data_mut()[i] += h;
            loss(model, &zp)
        });
        report.record(gx.data()[i], numeric);
    }
    let flat = model.flat_params();
    for j in coords(flat.len(), per_tensor, rng) {
        let numeric = central_difference(|h| {
            let mut probe = model.clone();
            let mut p = flat.clone();
            p[j] += h;
            probe.load_flat(&p).unwrap();
            loss(&probe, z)
        });
        report.record(gp[j], numeric);
    }
    report
}
