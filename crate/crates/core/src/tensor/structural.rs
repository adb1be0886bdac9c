use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Concatenates along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat of zero tensors"))?;
    let [n, _, h, w] = first.shape();
    for p in parts {
        let [pn, _, ph, pw] = p.shape();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::shape(format!(
                "concat shapes differ outside the channel axis: {:?} vs {:?}",
                first.shape(),
                p.shape()
            )));
        }
    }
    let c: usize = parts.iter().map(|p| p.c()).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for p in parts {
            let hw = h * w;
            let start = b * p.c() * hw;
            data.extend_from_slice(&p.data()[start..start + p.c() * hw]);
        }
    }
    Tensor::new([n, c, h, w], data)
}

/// Splits along the channel axis into consecutive groups of the given sizes.
pub fn split_channels(x: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    let [n, c, h, w] = x.shape();
    if sizes.iter().sum::<usize>() != c {
        return Err(Error::shape(format!(
            "split sizes {sizes:?} do not add up to {c} channels"
        )));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(sizes.len());
    let mut start_c = 0;
    for &sc in sizes {
        let mut data = Vec::with_capacity(n * sc * hw);
        for b in 0..n {
            let start = (b * c + start_c) * hw;
            data.extend_from_slice(&x.data()[start..start + sc * hw]);
        }
        out.push(Tensor::new([n, sc, h, w], data)?);
        start_c += sc;
    }
    Ok(out)
}

/// Per axis the sizes must match or one of them must be 1.
pub fn broadcast_shape(a: Shape, b: Shape) -> Result<Shape> {
    let mut out = [0; 4];
    for i in 0..4 {
        out[i] = match (a[i], b[i]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::shape(format!(
                    "shapes {a:?} and {b:?} do not broadcast"
                )))
            }
        };
    }
    Ok(out)
}

fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let shape = broadcast_shape(a.shape(), b.shape())?;
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let pick = |s: Shape, idx: [usize; 4]| {
        let mut j = [0; 4];
        for i in 0..4 {
            j[i] = if s[i] == 1 { 0 } else { idx[i] };
        }
        ((j[0] * s[1] + j[1]) * s[2] + j[2]) * s[3] + j[3]
    };
    let (sa, sb) = (a.shape(), b.shape());
    Ok(Tensor::from_fn(shape, |idx| {
        f(a.data()[pick(sa, idx)], b.data()[pick(sb, idx)])
    }))
}

/// Sums `g` over the axes where `shape` is 1 (inverse of broadcasting).
pub fn reduce_to(g: &Tensor, shape: Shape) -> Result<Tensor> {
    if g.shape() == shape {
        return Ok(g.clone());
    }
    if broadcast_shape(g.shape(), shape)? != g.shape() {
        return Err(Error::shape(format!(
            "cannot reduce {:?} to {shape:?}",
            g.shape()
        )));
    }
    let mut out = Tensor::zeros(shape);
    let gs = g.shape();
    for n in 0..gs[0] {
        for c in 0..gs[1] {
            for y in 0..gs[2] {
                for x in 0..gs[3] {
                    let t = [n, c, y, x];
                    let mut j = [0; 4];
                    for i in 0..4 {
                        j[i] = if shape[i] == 1 { 0 } else { t[i] };
                    }
                    let o = out.offset(j[0], j[1], j[2], j[3]);
                    out.data_mut()[o] += g.at(n, c, y, x);
                }
            }
        }
    }
    Ok(out)
}

/// Broadcasting elementwise sum.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_zip(a, b, |x, y| x + y)
}

/// Broadcasting elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    broadcast_zip(a, b, |x, y| x * y)
}

pub fn add_backward(a_shape: Shape, b_shape: Shape, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((reduce_to(grad_out, a_shape)?, reduce_to(grad_out, b_shape)?))
}

pub fn mul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let ga = mul(grad_out, b)?;
    let gb = mul(grad_out, a)?;
    Ok((reduce_to(&ga, a.shape())?, reduce_to(&gb, b.shape())?))
}

pub fn scale(x: &Tensor, k: f64) -> Tensor {
    x.map(|v| v * k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PortableRng;

    #[test]
    fn split_inverts_concat() {
        let mut rng = PortableRng::new(5);
        let a = Tensor::random_normal([2, 3, 2, 4], &mut rng);
        let b = Tensor::random_normal([2, 1, 2, 4], &mut rng);
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), [2, 4, 2, 4]);
        assert_eq!(cat.at(1, 3, 1, 2), b.at(1, 0, 1, 2));
        assert_eq!(cat.at(1, 2, 0, 3), a.at(1, 2, 0, 3));
        let parts = split_channels(&cat, &[3, 1]).unwrap();
        assert_eq!(parts, vec![a, b]);
        assert!(split_channels(&cat, &[3, 2]).is_err());
        assert!(
            concat_channels(&[&Tensor::zeros([1, 1, 2, 2]), &Tensor::zeros([1, 1, 2, 3])]).is_err()
        );
    }

    #[test]
    fn channel_broadcast() {
        let gate = Tensor::new([1, 1, 1, 2], vec![2.0, 3.0]).unwrap();
        let x = Tensor::from_fn([1, 3, 1, 2], |[_, c, _, x]| (c * 2 + x) as f64);
        let y = mul(&gate, &x).unwrap();
        assert_eq!(y.data(), &[0.0, 3.0, 4.0, 9.0, 8.0, 15.0]);
    }

    #[test]
    fn spatial_broadcast() {
        let gate = Tensor::new([1, 2, 1, 1], vec![10.0, -1.0]).unwrap();
        let x = Tensor::full([1, 2, 2, 2], 1.5);
        let y = mul(&x, &gate).unwrap();
        assert_eq!(y.data(), &[15.0, 15.0, 15.0, 15.0, -1.5, -1.5, -1.5, -1.5]);
        assert!(mul(&Tensor::zeros([1, 2, 2, 2]), &Tensor::zeros([1, 3, 1, 1])).is_err());
    }

    #[test]
    fn broadcast_gradients_reduce() {
        let a = Tensor::full([1, 1, 2, 2], 2.0);
        let b = Tensor::full([1, 3, 2, 2], 5.0);
        let g = Tensor::full([1, 3, 2, 2], 1.0);
        let (ga, gb) = mul_backward(&a, &b, &g).unwrap();
        assert!(ga.data().iter().all(|&v| v == 15.0));
        assert!(gb.data().iter().all(|&v| v == 2.0));
        let (ga, _) = add_backward([1, 3, 1, 1], [1, 3, 2, 2], &g).unwrap();
        assert_eq!(ga.data(), &[4.0, 4.0, 4.0]);
    }
}
