use crate::error::Result;
use crate::rng::PortableRng;
use crate::tensor::{
    BatchNormParams, BnMode, ConvBlock, ConvParams, LinearParams, ParamKind, Parameterized, Tensor,
};

/// Batch-norm settings shared by every block of a network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnSettings {
    pub eps: f64,
    pub mode: BnMode,
}

impl Default for BnSettings {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            mode: BnMode::RunningStats,
        }
    }
}

fn block(
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    transposed: bool,
    bn: Option<BnSettings>,
    bias: bool,
) -> Result<ConvBlock> {
    let conv = ConvParams::new(
        Tensor::zeros([c_out, c_in, k, k]),
        bias.then(|| vec![0.0; c_out]),
        stride,
        padding,
        transposed,
    )?;
    ConvBlock::new(
        conv,
        bn.map(|b| BatchNormParams::identity(c_out, b.eps, b.mode)),
    )
}

/// `k×k` convolution with batch norm and no bias, zero-initialized.
pub(crate) fn conv_bn(
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    bn: BnSettings,
) -> Result<ConvBlock> {
    block(c_in, c_out, k, stride, padding, false, Some(bn), false)
}

/// Transposed `k×k` convolution with batch norm.
pub(crate) fn up_bn(
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    bn: BnSettings,
) -> Result<ConvBlock> {
    block(c_in, c_out, k, stride, 0, true, Some(bn), false)
}

/// Convolution with bias and no normalization.
pub(crate) fn conv_bias(c_in: usize, c_out: usize, k: usize, padding: usize) -> Result<ConvBlock> {
    block(c_in, c_out, k, 1, padding, false, None, true)
}

pub(crate) fn plain_conv(c_in: usize, c_out: usize) -> Result<ConvParams> {
    ConvParams::new(
        Tensor::zeros([c_out, c_in, 1, 1]),
        Some(vec![0.0; c_out]),
        1,
        0,
        false,
    )
}

pub(crate) fn linear(d_out: usize, d_in: usize) -> LinearParams {
    LinearParams::zeros(d_out, d_in)
}

/// Fills every learnable `*.weight` array, in visit order and storage order,
/// with `U(−b, b)`, `b = √(6 / fan_in)`, where `fan_in` is the product of all
/// dims after the first. Biases and batch-norm parameters are left as they are.
pub fn kaiming_uniform<P: Parameterized + ?Sized>(params: &mut P, rng: &mut PortableRng) {
    params.visit_mut("", &mut |name, kind, dims, data| {
        if kind != ParamKind::Learnable || !name.ends_with("weight") || dims.len() < 2 {
            return;
        }
        let fan_in: usize = dims[1..].iter().product();
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        for v in data.iter_mut() {
            *v = rng.range(-bound, bound);
        }
    });
}

/// Sets each block's batch-norm mode.
pub(crate) fn set_mode(blocks: &mut [&mut ConvBlock], mode: BnMode) {
    for b in blocks {
        b.set_bn_mode(mode);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::collect_params;

    #[test]
    fn kaiming_bounds_and_determinism() {
        let mut a = conv_bn(4, 8, 3, 1, 1, BnSettings::default()).unwrap();
        let mut b = a.clone();
        kaiming_uniform(&mut a, &mut PortableRng::new(5));
        kaiming_uniform(&mut b, &mut PortableRng::new(5));
        assert_eq!(a, b);
        let bound = (6.0f64 / 36.0).sqrt();
        assert!(a.conv.weight.data().iter().all(|v| v.abs() <= bound));
        assert!(a.conv.weight.data().iter().any(|v| v.abs() > bound / 2.0));
        let bn = &a.bn.as_ref().unwrap();
        assert!(bn.gamma.iter().all(|&g| g == 1.0));
        let names: Vec<String> = collect_params(&a).into_iter().map(|p| p.0).collect();
        assert_eq!(names[0], "conv.weight");
    }
}
