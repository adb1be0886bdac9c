use super::activation::{silu, silu_backward};
use super::conv::{conv2d, conv2d_backward, ConvParams};
use super::norm::{batch_norm_backward, batch_norm_forward, BatchNormParams, BnCache, BnMode};
use super::params::{join, ParamVisitor, ParamVisitorMut, Parameterized};
use super::Tensor;
use crate::error::{Error, Result};

/// Convolution (regular or transposed) → optional batch norm → SiLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv: ConvParams,
    pub bn: Option<BatchNormParams>,
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    input: Tensor,
    bn: Option<BnCache>,
    pre_activation: Tensor,
}

impl ConvBlock {
    pub fn new(conv: ConvParams, bn: Option<BatchNormParams>) -> Result<Self> {
        if let Some(bn) = &bn {
            if bn.channels() != conv.c_out() {
                return Err(Error::shape(format!(
                    "batch norm over {} channels after a convolution with {} outputs",
                    bn.channels(),
                    conv.c_out()
                )));
            }
            bn.validate()?;
        }
        Ok(Self { conv, bn })
    }

    pub fn c_in(&self) -> usize {
        self.conv.c_in()
    }

    pub fn c_out(&self) -> usize {
        self.conv.c_out()
    }

    pub fn set_bn_mode(&mut self, mode: BnMode) {
        if let Some(bn) = &mut self.bn {
            bn.mode = mode;
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_cached(x).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, BlockCache)> {
        let z = conv2d(x, &self.conv)?;
        let (pre, bn_cache) = match &self.bn {
            Some(bn) => {
                let (y, c) = batch_norm_forward(&z, bn)?;
                (y, Some(c))
            }
            None => (z, None),
        };
        let y = silu(&pre);
        Ok((
            y,
            BlockCache {
                input: x.clone(),
                bn: bn_cache,
                pre_activation: pre,
            },
        ))
    }

    /// Input gradient and a block-shaped parameter gradient.
    pub fn backward(&self, cache: &BlockCache, grad_out: &Tensor) -> Result<(Tensor, ConvBlock)> {
        let g_pre = silu_backward(&cache.pre_activation, grad_out)?;
        let (g_conv, bn_grads) = match (&self.bn, &cache.bn) {
            (Some(bn), Some(c)) => {
                let (g, gb) = batch_norm_backward(bn, c, &g_pre)?;
                (g, Some(gb))
            }
            _ => (g_pre, None),
        };
        let cg = conv2d_backward(&cache.input, &self.conv, &g_conv)?;
        let conv = ConvParams {
            weight: cg.weight,
            bias: cg.bias,
            ..self.conv.clone()
        };
        Ok((cg.input, ConvBlock { conv, bn: bn_grads }))
    }
}

impl Parameterized for ConvBlock {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}
