//! Minimal dense rank-4 tensor kernel with hand-written vector–Jacobian
//! products for every operator the fusion network uses.
//!
//! Layout is `(batch, channels, height, width)`, row-major, `f64`. Forward
//! kernels that parallelize do so over whole output planes, so every output
//! element is reduced in the same order regardless of thread count.

mod activation;
mod block;
pub mod container;
mod conv;
mod edge;
pub mod gradcheck;
mod linear;
mod norm;
mod params;
mod pool;
mod structural;

pub(crate) use activation::sigmoid_scalar;
pub use activation::{
    sigmoid, sigmoid_backward, silu, silu_backward, softmax_pair, softmax_pair_backward,
};
pub use block::{BlockCache, ConvBlock};
pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvParams};
pub use edge::{scharr_edge, scharr_edge_backward, scharr_edge_forward, ScharrCache};
pub use linear::{fully_connected, fully_connected_backward, LinearParams};
pub use norm::{
    batch_norm, batch_norm_backward, batch_norm_forward, BatchNormParams, BnCache, BnMode,
};
pub(crate) use params::join as params_join;
pub use params::{collect_params, ParamKind, ParamVisitor, ParamVisitorMut, Parameterized};
pub use pool::{
    avg_pool2d, avg_pool2d_backward, channel_avg, channel_avg_backward, channel_max, global_avg,
    global_avg_backward, global_max, max_backward, max_pool2d, Pooled,
};
pub use structural::{
    add, add_backward, broadcast_shape, concat_channels, mul, mul_backward, reduce_to, scale,
    split_channels,
};

use crate::error::{Error, Result};
use crate::rng::PortableRng;

/// Shape `[batch, channels, height, width]`.
pub type Shape = [usize; 4];

/// Element type of a serialized tensor payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        let len = shape_len(shape)?;
        if data.len() != len {
            return Err(Error::shape(format!(
                "tensor {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for n in 0..shape[0] {
            for c in 0..shape[1] {
                for y in 0..shape[2] {
                    for x in 0..shape[3] {
                        data.push(f([n, c, y, x]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// Uniform entries in `[lo, hi)` drawn in storage order.
    pub fn random_uniform(shape: Shape, rng: &mut PortableRng, lo: f64, hi: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: (0..len).map(|_| rng.range(lo, hi)).collect(),
        }
    }

    pub fn random_normal(shape: Shape, rng: &mut PortableRng) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: (0..len).map(|_| rng.normal()).collect(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    /// Contiguous `(height, width)` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Accumulates `other` into `self` (same shape).
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "accumulate shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

fn shape_len(shape: Shape) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::shape(format!("tensor shape {shape:?} overflows")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::new([1, 2, 2, 2], vec![0.0; 8]).is_ok());
        assert!(matches!(
            Tensor::new([1, 2, 2, 2], vec![0.0; 7]),
            Err(Error::Shape(_))
        ));
        assert!(Tensor::new([usize::MAX, 2, 1, 1], vec![]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::from_fn([2, 3, 4, 5], |[n, c, y, x]| {
            (n * 1000 + c * 100 + y * 10 + x) as f64
        });
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.data()[t.offset(1, 0, 2, 1)], 1021.0);
        assert_eq!(t.plane(0, 1)[6], 111.0);
    }
}
