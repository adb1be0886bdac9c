use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Output of a max reduction together with the flat input index chosen for
/// every output element (first row-major maximum on ties).
#[derive(Clone, Debug)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

fn pool_len(len: usize, k: usize, s: usize, p: usize, axis: &str) -> Result<usize> {
    if k == 0 || s == 0 {
        return Err(Error::shape("pooling kernel and stride must be >= 1"));
    }
    if p >= k {
        return Err(Error::shape(format!(
            "pooling padding {p} must be smaller than kernel {k}"
        )));
    }
    let padded = len + 2 * p;
    if padded < k || !(padded - k).is_multiple_of(s) {
        return Err(Error::shape(format!(
            "pooling {axis}: ({len} + 2*{p} - {k}) is not a non-negative multiple of stride {s}"
        )));
    }
    Ok((padded - k) / s + 1)
}

/// Input coordinates covered by output `o` along one axis.
fn window(o: usize, k: usize, s: usize, p: usize, len: usize) -> std::ops::Range<usize> {
    let start = (o * s).saturating_sub(p);
    let end = (o * s + k).saturating_sub(p).min(len);
    start..end
}

pub fn max_pool2d(x: &Tensor, k: usize, s: usize, p: usize) -> Result<Pooled> {
    let [n, c, h, w] = x.shape();
    let ho = pool_len(h, k, s, p, "height")?;
    let wo = pool_len(w, k, s, p, "width")?;
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut argmax = Vec::with_capacity(out.len());
    let mut idx = 0;
    for b in 0..n {
        for ch in 0..c {
            let base = x.offset(b, ch, 0, 0);
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for iy in window(oy, k, s, p, h) {
                        for ix in window(ox, k, s, p, w) {
                            let v = x.data()[base + iy * w + ix];
                            if best_i == usize::MAX || v > best {
                                best = v;
                                best_i = base + iy * w + ix;
                            }
                        }
                    }
                    out.data_mut()[idx] = best;
                    argmax.push(best_i);
                    idx += 1;
                }
            }
        }
    }
    Ok(Pooled {
        output: out,
        argmax,
    })
}

/// Routes each output gradient to the input element recorded in `argmax`.
pub fn max_backward(input_shape: Shape, argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::shape(
            "max-pool gradient does not match the recorded argmax",
        ));
    }
    let mut gx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        gx.data_mut()[i] += g;
    }
    Ok(gx)
}

/// Average over the valid (non-padding) elements of each window.
pub fn avg_pool2d(x: &Tensor, k: usize, s: usize, p: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    let ho = pool_len(h, k, s, p, "height")?;
    let wo = pool_len(w, k, s, p, "width")?;
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut idx = 0;
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            for oy in 0..ho {
                for ox in 0..wo {
                    let (ry, rx) = (window(oy, k, s, p, h), window(ox, k, s, p, w));
                    let count = (ry.len() * rx.len()) as f64;
                    let mut acc = 0.0;
                    for iy in ry {
                        for ix in rx.clone() {
                            acc += src[iy * w + ix];
                        }
                    }
                    out.data_mut()[idx] = acc / count;
                    idx += 1;
                }
            }
        }
    }
    Ok(out)
}

pub fn avg_pool2d_backward(
    input_shape: Shape,
    k: usize,
    s: usize,
    p: usize,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let [n, c, h, w] = input_shape;
    let ho = pool_len(h, k, s, p, "height")?;
    let wo = pool_len(w, k, s, p, "width")?;
    if grad_out.shape() != [n, c, ho, wo] {
        return Err(Error::shape("avg-pool gradient has the wrong shape"));
    }
    let mut gx = Tensor::zeros(input_shape);
    let mut idx = 0;
    for b in 0..n {
        for ch in 0..c {
            let base = gx.offset(b, ch, 0, 0);
            for oy in 0..ho {
                for ox in 0..wo {
                    let (ry, rx) = (window(oy, k, s, p, h), window(ox, k, s, p, w));
                    let g = grad_out.data()[idx] / (ry.len() * rx.len()) as f64;
                    for iy in ry {
                        for ix in rx.clone() {
                            gx.data_mut()[base + iy * w + ix] += g;
                        }
                    }
                    idx += 1;
                }
            }
        }
    }
    Ok(gx)
}

/// Max over channels, `(N, C, H, W) → (N, 1, H, W)`.
pub fn channel_max(x: &Tensor) -> Pooled {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, 1, h, w]);
    let mut argmax = Vec::with_capacity(n * h * w);
    for b in 0..n {
        for i in 0..h * w {
            let mut best_i = x.offset(b, 0, 0, 0) + i;
            for ch in 1..c {
                let j = x.offset(b, ch, 0, 0) + i;
                if x.data()[j] > x.data()[best_i] {
                    best_i = j;
                }
            }
            out.data_mut()[b * h * w + i] = x.data()[best_i];
            argmax.push(best_i);
        }
    }
    Pooled {
        output: out,
        argmax,
    }
}

/// Mean over channels, `(N, C, H, W) → (N, 1, H, W)`.
pub fn channel_avg(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, 1, h, w]);
    for b in 0..n {
        for i in 0..h * w {
            let s: f64 = (0..c).map(|ch| x.data()[x.offset(b, ch, 0, 0) + i]).sum();
            out.data_mut()[b * h * w + i] = s / c as f64;
        }
    }
    out
}

pub fn channel_avg_backward(input_shape: Shape, grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input_shape;
    if grad_out.shape() != [n, 1, h, w] {
        return Err(Error::shape("channel-avg gradient has the wrong shape"));
    }
    Ok(Tensor::from_fn(input_shape, |[b, _, y, x]| {
        grad_out.at(b, 0, y, x) / c as f64
    }))
}

/// Spatial max per channel, `(N, C, H, W) → (N, C, 1, 1)`.
pub fn global_max(x: &Tensor) -> Pooled {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, 1, 1]);
    let mut argmax = Vec::with_capacity(n * c);
    for b in 0..n {
        for ch in 0..c {
            let base = x.offset(b, ch, 0, 0);
            let plane = x.plane(b, ch);
            let mut best = 0;
            for i in 1..h * w {
                if plane[i] > plane[best] {
                    best = i;
                }
            }
            out.data_mut()[b * c + ch] = plane[best];
            argmax.push(base + best);
        }
    }
    Pooled {
        output: out,
        argmax,
    }
}

/// Spatial mean per channel, `(N, C, H, W) → (N, C, 1, 1)`.
pub fn global_avg(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let count = (h * w) as f64;
    Tensor::from_fn([n, c, 1, 1], |[b, ch, _, _]| {
        x.plane(b, ch).iter().sum::<f64>() / count
    })
}

pub fn global_avg_backward(input_shape: Shape, grad_out: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input_shape;
    if grad_out.shape() != [n, c, 1, 1] {
        return Err(Error::shape("global-avg gradient has the wrong shape"));
    }
    let count = (h * w) as f64;
    Ok(Tensor::from_fn(input_shape, |[b, ch, _, _]| {
        grad_out.at(b, ch, 0, 0) / count
    }))
}
