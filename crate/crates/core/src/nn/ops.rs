//! Forward and backward kernels for each layer type.
//!
//! Kernels are pure functions over [`Tensor`]s; the stateful wrappers in
//! [`super::layer`] cache whatever the backward pass needs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

fn expect_rank(t: &Tensor, rank: usize, context: &'static str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::dim(context, t.shape(), &vec![0; rank]));
    }
    Ok(())
}

/// `out[i,j] = Σ_k x[i,k]·w[k,j] + b[j]`
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_rank(x, 2, "dense input")?;
    expect_rank(w, 2, "dense weight")?;
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let (win, dout) = (w.shape()[0], w.shape()[1]);
    if din != win {
        return Err(Error::dim("dense input vs weight", x.shape(), w.shape()));
    }
    if b.shape() != [dout] {
        return Err(Error::dim("dense bias", b.shape(), &[dout]));
    }
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut out = vec![0.0; n * dout];
    for i in 0..n {
        let orow = &mut out[i * dout..(i + 1) * dout];
        orow.copy_from_slice(bd);
        for k in 0..din {
            let xv = xd[i * din + k];
            if xv == 0.0 {
                continue;
            }
            let wrow = &wd[k * dout..(k + 1) * dout];
            for (o, &wv) in orow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    Tensor::new(vec![n, dout], out)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn dense_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[1];
    if grad_out.shape() != [n, dout] {
        return Err(Error::dim("dense grad", grad_out.shape(), &[n, dout]));
    }
    let (xd, wd, gd) = (x.data(), w.data(), grad_out.data());
    let mut gx = vec![0.0; n * din];
    let mut gw = vec![0.0; din * dout];
    let mut gb = vec![0.0; dout];
    for i in 0..n {
        let grow = &gd[i * dout..(i + 1) * dout];
        for (acc, &g) in gb.iter_mut().zip(grow) {
            *acc += g;
        }
        for k in 0..din {
            let wrow = &wd[k * dout..(k + 1) * dout];
            gx[i * din + k] = wrow.iter().zip(grow).map(|(a, b)| a * b).sum();
            let xv = xd[i * din + k];
            let gwrow = &mut gw[k * dout..(k + 1) * dout];
            for (acc, &g) in gwrow.iter_mut().zip(grow) {
                *acc += xv * g;
            }
        }
    }
    Ok((
        Tensor::new(vec![n, din], gx)?,
        Tensor::new(vec![din, dout], gw)?,
        Tensor::vector(gb),
    ))
}

pub fn conv1d_output_len(length: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel > length {
        return Err(Error::KernelTooLarge { kernel, length });
    }
    Ok((length - kernel) / stride + 1)
}

/// Valid (unpadded) 1D convolution:
/// `out[b,k,p] = Σ_c Σ_m filters[k,c,m]·x[b,c,p·stride+m] + bias[k]`.
pub fn conv1d_forward(x: &Tensor, filters: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    expect_rank(x, 3, "conv1d input")?;
    expect_rank(filters, 3, "conv1d filters")?;
    let &[n, ch, len] = x.shape() else { unreachable!() };
    let &[oc, fch, m] = filters.shape() else { unreachable!() };
    if ch != fch {
        return Err(Error::dim("conv1d channels", x.shape(), filters.shape()));
    }
    if bias.shape() != [oc] {
        return Err(Error::dim("conv1d bias", bias.shape(), &[oc]));
    }
    if stride == 0 {
        return Err(Error::dim("conv1d stride", &[stride], &[1]));
    }
    let olen = conv1d_output_len(len, m, stride)?;
    let (xd, fd, bd) = (x.data(), filters.data(), bias.data());
    let mut out = vec![0.0; n * oc * olen];
    for b in 0..n {
        for k in 0..oc {
            let orow = &mut out[(b * oc + k) * olen..(b * oc + k + 1) * olen];
            orow.fill(bd[k]);
            for c in 0..ch {
                let xrow = &xd[(b * ch + c) * len..(b * ch + c + 1) * len];
                let frow = &fd[(k * ch + c) * m..(k * ch + c + 1) * m];
                for (p, o) in orow.iter_mut().enumerate() {
                    let window = &xrow[p * stride..p * stride + m];
                    *o += frow.iter().zip(window).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }
    Tensor::new(vec![n, oc, olen], out)
}

/// Returns `(grad_x, grad_filters, grad_bias)`.
pub fn conv1d_backward(
    x: &Tensor,
    filters: &Tensor,
    grad_out: &Tensor,
    stride: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let &[n, ch, len] = x.shape() else {
        return Err(Error::dim("conv1d input", x.shape(), &[0, 0, 0]));
    };
    let &[oc, _, m] = filters.shape() else {
        return Err(Error::dim("conv1d filters", filters.shape(), &[0, 0, 0]));
    };
    let olen = conv1d_output_len(len, m, stride)?;
    if grad_out.shape() != [n, oc, olen] {
        return Err(Error::dim("conv1d grad", grad_out.shape(), &[n, oc, olen]));
    }
    let (xd, fd, gd) = (x.data(), filters.data(), grad_out.data());
    let mut gx = vec![0.0; n * ch * len];
    let mut gf = vec![0.0; oc * ch * m];
    let mut gb = vec![0.0; oc];
    for b in 0..n {
        for k in 0..oc {
            let grow = &gd[(b * oc + k) * olen..(b * oc + k + 1) * olen];
            gb[k] += grow.iter().sum::<f64>();
            for c in 0..ch {
                let xoff = (b * ch + c) * len;
                let foff = (k * ch + c) * m;
                for (p, &g) in grow.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let base = p * stride;
                    for j in 0..m {
                        gf[foff + j] += g * xd[xoff + base + j];
                        gx[xoff + base + j] += g * fd[foff + j];
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![n, ch, len], gx)?,
        Tensor::new(vec![oc, ch, m], gf)?,
        Tensor::vector(gb),
    ))
}

/// Non-overlapping max-pool; trailing positions that do not fill a window
/// are dropped. Returns the pooled tensor and, per output element, the flat
/// index into `x` of the first maximum in its window.
pub fn maxpool1d_forward(x: &Tensor, window: usize) -> Result<(Tensor, Vec<usize>)> {
    expect_rank(x, 3, "maxpool1d input")?;
    let &[n, ch, len] = x.shape() else { unreachable!() };
    if window == 0 || window > len {
        return Err(Error::EmptyOutput { window, length: len });
    }
    let olen = len / window;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * ch * olen);
    let mut argmax = Vec::with_capacity(n * ch * olen);
    for row in 0..n * ch {
        let base = row * len;
        for p in 0..olen {
            let start = base + p * window;
            let mut best = start;
            for i in start + 1..start + window {
                // strict comparison keeps the lowest index on ties
                if xd[i] > xd[best] {
                    best = i;
                }
            }
            out.push(xd[best]);
            argmax.push(best);
        }
    }
    Ok((Tensor::new(vec![n, ch, olen], out)?, argmax))
}

pub fn maxpool1d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::dim("maxpool1d grad", grad_out.shape(), &[argmax.len()]));
    }
    let mut gx = Tensor::zeros(input_shape);
    let gxd = gx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gxd[idx] += g;
    }
    Ok(gx)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient is zero wherever the input was `<= 0`.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_out.shape() {
        return Err(Error::dim("relu grad", x.shape(), grad_out.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    expect_rank(logits, 2, "softmax input")?;
    let classes = logits.shape()[1];
    let mut out = logits.data().to_vec();
    if classes == 0 {
        return Tensor::new(logits.shape().to_vec(), out);
    }
    for row in out.chunks_mut(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

fn check_one_hot(labels: &Tensor, shape: &[usize]) -> Result<()> {
    if labels.shape() != shape {
        return Err(Error::dim("labels vs probabilities", labels.shape(), shape));
    }
    let classes = shape[1];
    for (i, row) in labels.data().chunks(classes.max(1)).enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != classes {
            return Err(Error::Label(format!("label row {i} is not one-hot: {row:?}")));
        }
    }
    Ok(())
}

/// Mean over the batch of `-ln(max(p_true, 1e-12))`.
pub fn cross_entropy_loss(probs: &Tensor, labels: &Tensor) -> Result<f64> {
    expect_rank(probs, 2, "cross-entropy probabilities")?;
    check_one_hot(labels, probs.shape())?;
    let n = probs.shape()[0];
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = probs
        .data()
        .iter()
        .zip(labels.data())
        .filter(|(_, &y)| y == 1.0)
        .map(|(&p, _)| -p.max(PROB_FLOOR).ln())
        .sum();
    Ok(total / n as f64)
}

/// Gradient of mean cross-entropy with respect to the logits that produced
/// `probs` through softmax: `(p - y) / batch`.
pub fn softmax_cross_entropy_backward(probs: &Tensor, labels: &Tensor) -> Result<Tensor> {
    check_one_hot(labels, probs.shape())?;
    let n = probs.shape()[0].max(1) as f64;
    let data = probs
        .data()
        .iter()
        .zip(labels.data())
        .map(|(p, y)| (p - y) / n)
        .collect();
    Tensor::new(probs.shape().to_vec(), data)
}

pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("mse", pred.shape(), target.shape()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn mse_backward(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("mse", pred.shape(), target.shape()));
    }
    let scale = 2.0 / pred.len().max(1) as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| scale * (a - b))
        .collect();
    Tensor::new(pred.shape().to_vec(), data)
}

/// One-hot encodes class indices into a `n × classes` matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Label(format!("class {y} at row {i} out of range 0..{classes}")));
        }
        data[i * classes + y] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let w = t.row_len().max(1);
    t.data()
        .chunks(w)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
