use super::params::{join, ParamKind, ParamVisitor, ParamVisitorMut, Parameterized};
use super::Tensor;
use crate::error::{Error, Result};

/// Dense layer `y = W·x + b` with `W` stored row-major as `(d_out, d_in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    d_in: usize,
    d_out: usize,
}

impl LinearParams {
    pub fn new(d_out: usize, d_in: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != d_out * d_in || bias.len() != d_out {
            return Err(Error::shape(format!(
                "linear layer {d_out}x{d_in} got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::validation("linear layer parameters are not finite"));
        }
        Ok(Self {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    pub fn zeros(d_out: usize, d_in: usize) -> Self {
        Self {
            weight: vec![0.0; d_out * d_in],
            bias: vec![0.0; d_out],
            d_in,
            d_out,
        }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }
}

impl Parameterized for LinearParams {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_>) {
        f(
            &join(prefix, "weight"),
            ParamKind::Learnable,
            &[self.d_out, self.d_in],
            &self.weight,
        );
        f(
            &join(prefix, "bias"),
            ParamKind::Learnable,
            &[self.d_out],
            &self.bias,
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        f(
            &join(prefix, "weight"),
            ParamKind::Learnable,
            &[self.d_out, self.d_in],
            &mut self.weight,
        );
        f(
            &join(prefix, "bias"),
            ParamKind::Learnable,
            &[self.d_out],
            &mut self.bias,
        );
    }
}

/// Applies the layer to each batch item flattened to `C·H·W` features;
/// the result has shape `(N, d_out, 1, 1)`.
pub fn fully_connected(x: &Tensor, p: &LinearParams) -> Result<Tensor> {
    let n = x.n();
    let d_in = x.len() / n.max(1);
    if d_in != p.d_in {
        return Err(Error::shape(format!(
            "linear layer expects {} features, got {d_in}",
            p.d_in
        )));
    }
    let mut out = Tensor::zeros([n, p.d_out, 1, 1]);
    for b in 0..n {
        let xs = &x.data()[b * d_in..(b + 1) * d_in];
        for o in 0..p.d_out {
            let row = &p.weight[o * d_in..(o + 1) * d_in];
            out.data_mut()[b * p.d_out + o] =
                p.bias[o] + row.iter().zip(xs).map(|(w, v)| w * v).sum::<f64>();
        }
    }
    Ok(out)
}

/// Input gradient (shaped like `x`) and parameter gradients.
pub fn fully_connected_backward(
    x: &Tensor,
    p: &LinearParams,
    grad_out: &Tensor,
) -> Result<(Tensor, LinearParams)> {
    let n = x.n();
    let d_in = x.len() / n.max(1);
    if d_in != p.d_in || grad_out.shape() != [n, p.d_out, 1, 1] {
        return Err(Error::shape("linear layer gradient has the wrong shape"));
    }
    let mut gx = Tensor::zeros(x.shape());
    let mut grads = LinearParams::zeros(p.d_out, p.d_in);
    for b in 0..n {
        let xs = &x.data()[b * d_in..(b + 1) * d_in];
        for o in 0..p.d_out {
            let g = grad_out.data()[b * p.d_out + o];
            grads.bias[o] += g;
            for i in 0..d_in {
                grads.weight[o * d_in + i] += g * xs[i];
                gx.data_mut()[b * d_in + i] += g * p.weight[o * d_in + i];
            }
        }
    }
    Ok((gx, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer() {
        let p =
            LinearParams::new(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.], vec![0.; 3]).unwrap();
        let x = Tensor::new([2, 3, 1, 1], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(fully_connected(&x, &p).unwrap(), x);
    }

    #[test]
    fn hand_multiply() {
        let p = LinearParams::new(2, 2, vec![1., 1., 1., -1.], vec![0., 0.]).unwrap();
        let x = Tensor::new([1, 2, 1, 1], vec![2., 3.]).unwrap();
        assert_eq!(fully_connected(&x, &p).unwrap().data(), &[5., -1.]);
    }

    #[test]
    fn shape_mismatch() {
        let p = LinearParams::zeros(2, 4);
        assert!(matches!(
            fully_connected(&Tensor::zeros([1, 3, 1, 1]), &p),
            Err(Error::Shape(_))
        ));
        assert!(fully_connected(&Tensor::zeros([1, 1, 2, 2]), &p).is_ok());
        assert!(LinearParams::new(2, 2, vec![0.; 3], vec![0.; 2]).is_err());
    }
}
