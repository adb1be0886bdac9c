use rayon::prelude::*;

use super::params::{join, ParamKind, ParamVisitor, ParamVisitorMut, Parameterized};
use super::Tensor;
use crate::error::{Error, Result};

/// 2-D convolution parameters.
///
/// The weight is `(c_out, c_in, k, k)` for both the regular and the
/// transposed operator. A regular convolution never silently drops input:
/// the stride remainder of `(H + 2p − k)` may only cover trailing padding
/// (so 3×3/stride 2/pad 1 halves even sizes), otherwise it is a shape error.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
}

impl ConvParams {
    pub fn new(
        weight: Tensor,
        bias: Option<Vec<f64>>,
        stride: usize,
        padding: usize,
        transposed: bool,
    ) -> Result<Self> {
        let [c_out, _, kh, kw] = weight.shape();
        if kh != kw || kh == 0 {
            return Err(Error::shape(format!(
                "convolution kernel must be square and non-empty, got {kh}x{kw}"
            )));
        }
        if stride == 0 {
            return Err(Error::shape("convolution stride must be >= 1"));
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(Error::shape(format!(
                    "bias has {} entries for {c_out} output channels",
                    b.len()
                )));
            }
        }
        if !weight.all_finite() {
            return Err(Error::validation("convolution weight is not finite"));
        }
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            transposed,
        })
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Spatial output size for an input of `h × w`.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((self.output_len(h, "height")?, self.output_len(w, "width")?))
    }

    fn output_len(&self, len: usize, axis: &str) -> Result<usize> {
        let (k, s, p) = (self.kernel(), self.stride, self.padding);
        if self.transposed {
            if len == 0 {
                return Err(Error::shape(format!(
                    "transposed convolution on empty {axis}"
                )));
            }
            let full = (len - 1) * s + k;
            if full <= 2 * p {
                return Err(Error::shape(format!(
                    "transposed convolution {axis}: ({len}-1)*{s} - 2*{p} + {k} is not positive"
                )));
            }
            Ok(full - 2 * p)
        } else {
            let padded = len + 2 * p;
            if padded < k {
                return Err(Error::shape(format!(
                    "convolution {axis} {len} (+2*{p} padding) is smaller than kernel {k}"
                )));
            }
            // the last window may only skip trailing padding, never input pixels
            if (padded - k) % s > p {
                return Err(Error::shape(format!(
                    "convolution {axis}: stride {s} would drop input pixels of ({len} + 2*{p} - {k})"
                )));
            }
            Ok((padded - k) / s + 1)
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize)> {
        if x.c() != self.c_in() {
            return Err(Error::shape(format!(
                "convolution expects {} input channels, got {}",
                self.c_in(),
                x.c()
            )));
        }
        self.output_hw(x.h(), x.w())
    }
}

impl Parameterized for ConvParams {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_>) {
        let s = self.weight.shape();
        f(
            &join(prefix, "weight"),
            ParamKind::Learnable,
            &s,
            self.weight.data(),
        );
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), ParamKind::Learnable, &[b.len()], b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        let s = self.weight.shape();
        f(
            &join(prefix, "weight"),
            ParamKind::Learnable,
            &s,
            self.weight.data_mut(),
        );
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), ParamKind::Learnable, &[b.len()], b);
        }
    }
}

/// Maps output coordinate `o` and kernel tap `t` to an input coordinate of a
/// regular convolution, or `None` when it falls in the zero padding.
#[inline]
fn tap(o: usize, t: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let i = (o * stride + t).checked_sub(pad)?;
    (i < len).then_some(i)
}

/// Cross-correlation (`transposed == false`) or its adjoint (`transposed == true`).
pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let (ho, wo) = p.check_input(x)?;
    let [n, c_in, h, w] = x.shape();
    let c_out = p.c_out();
    let (k, s, pad) = (p.kernel(), p.stride, p.padding);
    let wt = p.weight.data();
    let mut out = Tensor::zeros([n, c_out, ho, wo]);
    if out.is_empty() {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(ho * wo)
        .enumerate()
        .for_each(|(plane, dst)| {
            let (b, o) = (plane / c_out, plane % c_out);
            if let Some(bias) = &p.bias {
                dst.fill(bias[o]);
            }
            for c in 0..c_in {
                let src = x.plane(b, c);
                for ki in 0..k {
                    for kj in 0..k {
                        let wv = wt[((o * c_in + c) * k + ki) * k + kj];
                        if p.transposed {
                            // input (i, j) lands on output (i*s - pad + ki, j*s - pad + kj)
                            for i in 0..h {
                                let Some(oy) = (i * s + ki).checked_sub(pad).filter(|&v| v < ho)
                                else {
                                    continue;
                                };
                                for j in 0..w {
                                    let Some(ox) =
                                        (j * s + kj).checked_sub(pad).filter(|&v| v < wo)
                                    else {
                                        continue;
                                    };
                                    dst[oy * wo + ox] += wv * src[i * w + j];
                                }
                            }
                        } else {
                            for oy in 0..ho {
                                let Some(iy) = tap(oy, ki, s, pad, h) else {
                                    continue;
                                };
                                let row = &src[iy * w..(iy + 1) * w];
                                let drow = &mut dst[oy * wo..(oy + 1) * wo];
                                for (ox, d) in drow.iter_mut().enumerate() {
                                    if let Some(ix) = tap(ox, kj, s, pad, w) {
                                        *d += wv * row[ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Vector–Jacobian product of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(x: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    let (ho, wo) = p.check_input(x)?;
    let [n, c_in, h, w] = x.shape();
    let c_out = p.c_out();
    if grad_out.shape() != [n, c_out, ho, wo] {
        return Err(Error::shape(format!(
            "convolution gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, c_out, ho, wo]
        )));
    }
    let (k, s, pad) = (p.kernel(), p.stride, p.padding);
    let wt = p.weight.data();
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(p.weight.shape());
    let gb = p.bias.as_ref().map(|_| {
        (0..c_out)
            .map(|o| {
                (0..n)
                    .map(|b| grad_out.plane(b, o).iter().sum::<f64>())
                    .sum()
            })
            .collect()
    });
    for b in 0..n {
        for o in 0..c_out {
            let g = grad_out.plane(b, o);
            for c in 0..c_in {
                let src = x.plane(b, c);
                let gx_off = x.offset(b, c, 0, 0);
                for ki in 0..k {
                    for kj in 0..k {
                        let widx = ((o * c_in + c) * k + ki) * k + kj;
                        let wv = wt[widx];
                        let mut acc = 0.0;
                        // (input index, output index) pairs linked by this tap
                        let mut link = |ii: usize, oi: usize| {
                            acc += g[oi] * src[ii];
                            gx.data_mut()[gx_off + ii] += g[oi] * wv;
                        };
                        if p.transposed {
                            for i in 0..h {
                                let Some(oy) = (i * s + ki).checked_sub(pad).filter(|&v| v < ho)
                                else {
                                    continue;
                                };
                                for j in 0..w {
                                    if let Some(ox) =
                                        (j * s + kj).checked_sub(pad).filter(|&v| v < wo)
                                    {
                                        link(i * w + j, oy * wo + ox);
                                    }
                                }
                            }
                        } else {
                            for oy in 0..ho {
                                let Some(iy) = tap(oy, ki, s, pad, h) else {
                                    continue;
                                };
                                for ox in 0..wo {
                                    if let Some(ix) = tap(ox, kj, s, pad, w) {
                                        link(iy * w + ix, oy * wo + ox);
                                    }
                                }
                            }
                        }
                        gw.data_mut()[widx] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PortableRng;

    fn identity_1x1(c: usize) -> ConvParams {
        let w = Tensor::from_fn([c, c, 1, 1], |[o, i, _, _]| if o == i { 1.0 } else { 0.0 });
        ConvParams::new(w, Some(vec![0.0; c]), 1, 0, false).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let mut rng = PortableRng::new(1);
        let x = Tensor::random_normal([2, 3, 4, 5], &mut rng);
        assert_eq!(conv2d(&x, &identity_1x1(3)).unwrap(), x);
    }

    #[test]
    fn box_filter_border() {
        let w = Tensor::full([1, 1, 3, 3], 1.0 / 9.0);
        let p = ConvParams::new(w, None, 1, 1, false).unwrap();
        let x = Tensor::full([1, 1, 5, 5], 2.0);
        let y = conv2d(&x, &p).unwrap();
        assert!((y.at(0, 0, 2, 2) - 2.0).abs() < 1e-12);
        assert!((y.at(0, 0, 0, 0) - 4.0 / 9.0 * 2.0).abs() < 1e-12);
        assert!((y.at(0, 0, 0, 2) - 6.0 / 9.0 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn strict_shapes() {
        let p = ConvParams::new(Tensor::zeros([4, 2, 3, 3]), None, 2, 1, false).unwrap();
        assert_eq!(p.output_hw(8, 6).unwrap(), (4, 3));
        let q = ConvParams::new(Tensor::zeros([4, 2, 3, 3]), None, 2, 0, false).unwrap();
        assert!(matches!(q.output_hw(8, 7), Err(Error::Shape(_))));
        assert_eq!(q.output_hw(7, 9).unwrap(), (3, 4));
        let r = ConvParams::new(Tensor::zeros([4, 2, 2, 2]), None, 2, 0, false).unwrap();
        assert!(matches!(r.output_hw(5, 4), Err(Error::Shape(_))));
        assert!(matches!(
            conv2d(&Tensor::zeros([1, 3, 8, 8]), &p),
            Err(Error::Shape(_))
        ));
        let t = ConvParams::new(Tensor::zeros([2, 2, 2, 2]), None, 2, 0, true).unwrap();
        assert_eq!(t.output_hw(4, 3).unwrap(), (8, 6));
        assert!(ConvParams::new(Tensor::zeros([1, 1, 3, 2]), None, 1, 0, false).is_err());
        assert!(ConvParams::new(Tensor::zeros([1, 1, 3, 3]), None, 0, 0, false).is_err());
        assert!(
            ConvParams::new(Tensor::zeros([2, 1, 3, 3]), Some(vec![0.0]), 1, 0, false).is_err()
        );
    }

    #[test]
    fn down_then_up_restores_dims() {
        let down = ConvParams::new(Tensor::full([3, 3, 2, 2], 0.1), None, 2, 0, false).unwrap();
        let up = ConvParams::new(Tensor::full([3, 3, 2, 2], 0.1), None, 2, 0, true).unwrap();
        let x = Tensor::full([1, 3, 6, 10], 1.0);
        let y = conv2d(&conv2d(&x, &down).unwrap(), &up).unwrap();
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn transposed_is_adjoint() {
        // <conv(x), y> == <x, convT(y)> with the same weights
        let mut rng = PortableRng::new(9);
        let w = Tensor::random_normal([3, 2, 3, 3], &mut rng);
        let fwd = ConvParams::new(w.clone(), None, 2, 1, false).unwrap();
        // adjoint maps c_out->c_in, so swap channel axes
        let wt = Tensor::from_fn([2, 3, 3, 3], |[i, o, a, b]| w.at(o, i, a, b));
        let adj = ConvParams::new(wt, None, 2, 1, true).unwrap();
        let x = Tensor::random_normal([1, 2, 7, 5], &mut rng);
        let y = Tensor::random_normal([1, 3, 4, 3], &mut rng);
        let lhs = conv2d(&x, &fwd).unwrap().dot(&y);
        let rhs = x.dot(&conv2d(&y, &adj).unwrap());
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn thread_count_does_not_change_bits() {
        let mut rng = PortableRng::new(4);
        let w = Tensor::random_normal([8, 4, 3, 3], &mut rng);
        let p = ConvParams::new(w, Some(vec![0.1; 8]), 1, 1, false).unwrap();
        let x = Tensor::random_normal([2, 4, 9, 9], &mut rng);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap();
        let a = one.install(|| conv2d(&x, &p).unwrap());
        let b = many.install(|| conv2d(&x, &p).unwrap());
        assert_eq!(a.data(), b.data());
    }
}
