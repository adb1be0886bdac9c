use super::Tensor;
use crate::error::Result;

#[inline]
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Gradient of the sigmoid given its *output* `y`.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    y.zip_map(grad_out, |s, g| g * s * (1.0 - s))
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid_scalar(v))
}

/// Gradient of SiLU given its *input* `x`.
pub fn silu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    x.zip_map(grad_out, |v, g| {
        let s = sigmoid_scalar(v);
        g * s * (1.0 + v * (1.0 - s))
    })
}

/// Elementwise two-way softmax: `α = e^a / (e^a + e^b)`, `β = e^b / (e^a + e^b)`.
pub fn softmax_pair(a: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    let alpha = a.zip_map(b, |x, y| sigmoid_scalar(x - y))?;
    let beta = a.zip_map(b, |x, y| sigmoid_scalar(y - x))?;
    Ok((alpha, beta))
}

/// Gradients with respect to `(a, b)` given the outputs `(α, β)` and their cotangents.
pub fn softmax_pair_backward(
    alpha: &Tensor,
    beta: &Tensor,
    grad_alpha: &Tensor,
    grad_beta: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let ab = alpha.zip_map(beta, |a, b| a * b)?;
    let diff = grad_alpha.zip_map(grad_beta, |ga, gb| ga - gb)?;
    let ga = ab.zip_map(&diff, |p, d| p * d)?;
    let gb = ga.map(|v| -v);
    Ok((ga, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::full([1, 1, 1, 1], v)
    }

    #[test]
    fn known_values() {
        assert_eq!(silu(&scalar(0.0)).data()[0], 0.0);
        assert_eq!(sigmoid(&scalar(0.0)).data()[0], 0.5);
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((silu(&scalar(1.0)).data()[0] - expected).abs() < 1e-15);
        assert!((silu(&scalar(1.0)).data()[0] - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        let t = Tensor::new([1, 1, 1, 2], vec![-1000.0, 1000.0]).unwrap();
        let s = sigmoid(&t);
        assert_eq!(s.data(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_pair_symmetric() {
        for v in [-3.0, 0.0, 2.5, 700.0] {
            let (a, b) = softmax_pair(&scalar(v), &scalar(v)).unwrap();
            assert_eq!((a.data()[0], b.data()[0]), (0.5, 0.5));
        }
    }

    #[test]
    fn softmax_pair_sums_to_one() {
        let a = Tensor::new([1, 4, 1, 1], vec![-20.0, -1.0, 0.3, 15.0]).unwrap();
        let b = Tensor::new([1, 4, 1, 1], vec![3.0, 2.0, -0.7, 14.0]).unwrap();
        let (al, be) = softmax_pair(&a, &b).unwrap();
        for i in 0..4 {
            assert!((al.data()[i] + be.data()[i] - 1.0).abs() < 1e-15);
            assert!(al.data()[i] > 0.0 && be.data()[i] > 0.0);
        }
    }
}
