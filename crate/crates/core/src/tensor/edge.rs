use super::Tensor;
use crate::error::{Error, Result};

/// Horizontal Scharr derivative, normalized by 1/16 so a unit step responds with 1.
const SCHARR_X: [[f64; 3]; 3] = [
    [-3.0 / 16.0, 0.0, 3.0 / 16.0],
    [-10.0 / 16.0, 0.0, 10.0 / 16.0],
    [-3.0 / 16.0, 0.0, 3.0 / 16.0],
];

#[inline]
fn kx(dy: usize, dx: usize) -> f64 {
    SCHARR_X[dy][dx]
}

#[inline]
fn ky(dy: usize, dx: usize) -> f64 {
    SCHARR_X[dx][dy]
}

/// Mirror index without repeating the edge sample (`-1 → 1`, `n → n-2`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

#[derive(Clone, Debug)]
pub struct ScharrCache {
    gx: Tensor,
    gy: Tensor,
    magnitude: Tensor,
}

pub fn scharr_edge(x: &Tensor) -> Tensor {
    scharr_edge_forward(x).magnitude
}

/// Gradient magnitude `√(Gx² + Gy²)` per channel with reflect padding.
pub fn scharr_edge_forward(x: &Tensor) -> ScharrCache {
    let [n, c, h, w] = x.shape();
    let mut gx = Tensor::zeros(x.shape());
    let mut gy = Tensor::zeros(x.shape());
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let off = x.offset(b, ch, 0, 0);
            for y in 0..h {
                for xx in 0..w {
                    let (mut sx, mut sy) = (0.0, 0.0);
                    for dy in 0..3 {
                        let iy = reflect(y as isize + dy as isize - 1, h);
                        for dx in 0..3 {
                            let ix = reflect(xx as isize + dx as isize - 1, w);
                            let v = src[iy * w + ix];
                            sx += kx(dy, dx) * v;
                            sy += ky(dy, dx) * v;
                        }
                    }
                    gx.data_mut()[off + y * w + xx] = sx;
                    gy.data_mut()[off + y * w + xx] = sy;
                }
            }
        }
    }
    let magnitude = gx.zip_map(&gy, f64::hypot).expect("same shape");
    ScharrCache { gx, gy, magnitude }
}

impl ScharrCache {
    pub fn output(&self) -> &Tensor {
        &self.magnitude
    }
}

/// Input gradient; pixels with exactly zero magnitude pass no gradient.
pub fn scharr_edge_backward(cache: &ScharrCache, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != cache.magnitude.shape() {
        return Err(Error::shape("Scharr gradient has the wrong shape"));
    }
    let [n, c, h, w] = grad_out.shape();
    let mut g_in = Tensor::zeros(grad_out.shape());
    for b in 0..n {
        for ch in 0..c {
            let off = grad_out.offset(b, ch, 0, 0);
            for y in 0..h {
                for xx in 0..w {
                    let i = off + y * w + xx;
                    let m = cache.magnitude.data()[i];
                    if m == 0.0 {
                        continue;
                    }
                    let g = grad_out.data()[i];
                    let (ax, ay) = (g * cache.gx.data()[i] / m, g * cache.gy.data()[i] / m);
                    for dy in 0..3 {
                        let iy = reflect(y as isize + dy as isize - 1, h);
                        for dx in 0..3 {
                            let ix = reflect(xx as isize + dx as isize - 1, w);
                            g_in.data_mut()[off + iy * w + ix] += ax * kx(dy, dx) + ay * ky(dy, dx);
                        }
                    }
                }
            }
        }
    }
    Ok(g_in)
}
