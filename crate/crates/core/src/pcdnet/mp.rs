//! Material perception on the polarization branch.
//!
//! The spatial variant (MSP) is a two-level down/up bottleneck. The channel
//! variant (MCP) downsamples once, mixes channels and applies the perception
//! matrix `ℳ(x) = x + x ⊗ σ(M₂·M₁·avg(x))` before upsampling again.

use super::config::MpKind;
use super::layers::{conv_bn, linear, set_mode, up_bn, BnSettings};
use crate::error::{Error, Result};
use crate::tensor::params_join as join;
use crate::tensor::{
    fully_connected, fully_connected_backward, global_avg, global_avg_backward, mul, reduce_to,
    sigmoid, sigmoid_backward, BlockCache, BnMode, ConvBlock, LinearParams, ParamVisitor,
    ParamVisitorMut, Parameterized, Tensor,
};

#[derive(Clone, Debug, PartialEq)]
pub enum MpWeights {
    Spatial {
        down1: ConvBlock,
        down2: ConvBlock,
        up1: ConvBlock,
        up2: ConvBlock,
    },
    Channel {
        down: ConvBlock,
        mix: ConvBlock,
        m1: LinearParams,
        m2: LinearParams,
        up: ConvBlock,
    },
}

impl MpWeights {
    pub fn new(kind: MpKind, channels: usize, reduction: usize, bn: BnSettings) -> Result<Self> {
        let c = channels;
        Ok(match kind {
            MpKind::Spatial => MpWeights::Spatial {
                down1: conv_bn(c, c, 3, 2, 1, bn)?,
                down2: conv_bn(c, c, 3, 2, 1, bn)?,
                up1: up_bn(c, c, 2, 2, bn)?,
                up2: up_bn(c, c, 2, 2, bn)?,
            },
            MpKind::Channel => {
                if reduction == 0 || c / reduction == 0 {
                    return Err(Error::Config(format!(
                        "reduction {reduction} leaves no channels out of {c}"
                    )));
                }
                let r = c / reduction;
                MpWeights::Channel {
                    down: conv_bn(c, c, 3, 2, 1, bn)?,
                    mix: conv_bn(c, c, 1, 1, 0, bn)?,
                    m1: linear(r, c),
                    m2: linear(c, r),
                    up: up_bn(c, c, 2, 2, bn)?,
                }
            }
        })
    }

    pub fn kind(&self) -> MpKind {
        match self {
            MpWeights::Spatial { .. } => MpKind::Spatial,
            MpWeights::Channel { .. } => MpKind::Channel,
        }
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        match self {
            MpWeights::Spatial { .. } => 4,
            MpWeights::Channel { .. } => 2,
        }
    }

    pub fn set_bn_mode(&mut self, mode: BnMode) {
        match self {
            MpWeights::Spatial {
                down1,
                down2,
                up1,
                up2,
            } => set_mode(&mut [down1, down2, up1, up2], mode),
            MpWeights::Channel { down, mix, up, .. } => set_mode(&mut [down, mix, up], mode),
        }
    }
}

impl Parameterized for MpWeights {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_>) {
        match self {
            MpWeights::Spatial {
                down1,
                down2,
                up1,
                up2,
            } => {
                down1.visit(&join(prefix, "down1"), f);
                down2.visit(&join(prefix, "down2"), f);
                up1.visit(&join(prefix, "up1"), f);
                up2.visit(&join(prefix, "up2"), f);
            }
            MpWeights::Channel {
                down,
                mix,
                m1,
                m2,
                up,
            } => {
                down.visit(&join(prefix, "down"), f);
                mix.visit(&join(prefix, "mix"), f);
                m1.visit(&join(prefix, "m1"), f);
                m2.visit(&join(prefix, "m2"), f);
                up.visit(&join(prefix, "up"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        match self {
            MpWeights::Spatial {
                down1,
                down2,
                up1,
                up2,
            } => {
                down1.visit_mut(&join(prefix, "down1"), f);
                down2.visit_mut(&join(prefix, "down2"), f);
                up1.visit_mut(&join(prefix, "up1"), f);
                up2.visit_mut(&join(prefix, "up2"), f);
            }
            MpWeights::Channel {
                down,
                mix,
                m1,
                m2,
                up,
            } => {
                down.visit_mut(&join(prefix, "down"), f);
                mix.visit_mut(&join(prefix, "mix"), f);
                m1.visit_mut(&join(prefix, "m1"), f);
                m2.visit_mut(&join(prefix, "m2"), f);
                up.visit_mut(&join(prefix, "up"), f);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct PerceptionCache {
    x: Tensor,
    pooled: Tensor,
    hidden: Tensor,
    gate: Tensor,
}

/// `ℳ(x) = x + x ⊗ σ(M₂(M₁(global_avg x)))`, no activation between the two
/// matrices.
pub fn perception(x: &Tensor, m1: &LinearParams, m2: &LinearParams) -> Result<Tensor> {
    perception_cached(x, m1, m2).map(|(y, _)| y)
}

pub fn perception_cached(
    x: &Tensor,
    m1: &LinearParams,
    m2: &LinearParams,
) -> Result<(Tensor, PerceptionCache)> {
    let pooled = global_avg(x);
    let hidden = fully_connected(&pooled, m1)?;
    let gate = sigmoid(&fully_connected(&hidden, m2)?);
    let y = mul(x, &gate)?.zip_map(x, |a, b| a + b)?;
    Ok((
        y,
        PerceptionCache {
            x: x.clone(),
            pooled,
            hidden,
            gate,
        },
    ))
}

pub fn perception_backward(
    m1: &LinearParams,
    m2: &LinearParams,
    cache: &PerceptionCache,
    grad: &Tensor,
) -> Result<(Tensor, LinearParams, LinearParams)> {
    let mut gx = mul(grad, &cache.gate)?;
    gx.add_assign(grad)?;
    let g_gate = reduce_to(&grad.zip_map(&cache.x, |g, x| g * x)?, cache.gate.shape())?;
    let g_z2 = sigmoid_backward(&cache.gate, &g_gate)?;
    let (g_hidden, g_m2) = fully_connected_backward(&cache.hidden, m2, &g_z2)?;
    let (g_pooled, g_m1) = fully_connected_backward(&cache.pooled, m1, &g_hidden)?;
    gx.add_assign(&global_avg_backward(cache.x.shape(), &g_pooled)?)?;
    Ok((gx, g_m1, g_m2))
}

#[derive(Clone, Debug)]
pub enum MpCache {
    Spatial([BlockCache; 4]),
    Channel {
        down: BlockCache,
        mix: BlockCache,
        perception: PerceptionCache,
        up: BlockCache,
    },
}

fn check_size(x: &Tensor, w: &MpWeights) -> Result<()> {
    let m = w.size_multiple();
    if !x.h().is_multiple_of(m) || !x.w().is_multiple_of(m) {
        return Err(Error::shape(format!(
            "material perception ({}) needs H and W divisible by {m}, got {}x{}",
            w.kind(),
            x.h(),
            x.w()
        )));
    }
    Ok(())
}

pub fn mp_forward(x: &Tensor, w: &MpWeights) -> Result<Tensor> {
    mp_forward_cached(x, w).map(|(y, _)| y)
}

/// Spatial variant; rejects channel weights.
pub fn msp_forward(x: &Tensor, w: &MpWeights) -> Result<Tensor> {
    match w {
        MpWeights::Spatial { .. } => mp_forward(x, w),
        _ => Err(Error::Config(
            "MSP called with channel-perception weights".into(),
        )),
    }
}

/// Channel variant; rejects spatial weights.
pub fn mcp_forward(x: &Tensor, w: &MpWeights) -> Result<Tensor> {
    match w {
        MpWeights::Channel { .. } => mp_forward(x, w),
        _ => Err(Error::Config(
            "MCP called with spatial-perception weights".into(),
        )),
    }
}

pub fn mp_forward_cached(x: &Tensor, w: &MpWeights) -> Result<(Tensor, MpCache)> {
    check_size(x, w)?;
    match w {
        MpWeights::Spatial {
            down1,
            down2,
            up1,
            up2,
        } => {
            let (a, c1) = down1.forward_cached(x)?;
            let (b, c2) = down2.forward_cached(&a)?;
            let (c, c3) = up1.forward_cached(&b)?;
            let (y, c4) = up2.forward_cached(&c)?;
            Ok((y, MpCache::Spatial([c1, c2, c3, c4])))
        }
        MpWeights::Channel {
            down,
            mix,
            m1,
            m2,
            up,
        } => {
            let (a, cd) = down.forward_cached(x)?;
            let (b, cm) = mix.forward_cached(&a)?;
            let (c, cp) = perception_cached(&b, m1, m2)?;
            let (y, cu) = up.forward_cached(&c)?;
            Ok((
                y,
                MpCache::Channel {
                    down: cd,
                    mix: cm,
                    perception: cp,
                    up: cu,
                },
            ))
        }
    }
}

pub fn mp_backward(w: &MpWeights, cache: &MpCache, grad: &Tensor) -> Result<(Tensor, MpWeights)> {
    match (w, cache) {
        (
            MpWeights::Spatial {
                down1,
                down2,
                up1,
                up2,
            },
            MpCache::Spatial([c1, c2, c3, c4]),
        ) => {
            let (g, gu2) = up2.backward(c4, grad)?;
            let (g, gu1) = up1.backward(c3, &g)?;
            let (g, gd2) = down2.backward(c2, &g)?;
            let (g, gd1) = down1.backward(c1, &g)?;
            Ok((
                g,
                MpWeights::Spatial {
                    down1: gd1,
                    down2: gd2,
                    up1: gu1,
                    up2: gu2,
                },
            ))
        }
        (
            MpWeights::Channel {
                down,
                mix,
                m1,
                m2,
                up,
            },
            MpCache::Channel {
                down: cd,
                mix: cm,
                perception: cp,
                up: cu,
            },
        ) => {
            let (g, gup) = up.backward(cu, grad)?;
            let (g, gm1, gm2) = perception_backward(m1, m2, cp, &g)?;
            let (g, gmix) = mix.backward(cm, &g)?;
            let (g, gdown) = down.backward(cd, &g)?;
            Ok((
                g,
                MpWeights::Channel {
                    down: gdown,
                    mix: gmix,
                    m1: gm1,
                    m2: gm2,
                    up: gup,
                },
            ))
        }
        _ => Err(Error::shape(
            "material-perception cache does not match its weights",
        )),
    }
}

/// Output of `ℳ` alone with `m2` bias forced to a large negative value:
/// the gate closes and `ℳ(x) ≈ x`.
#[doc(hidden)]
pub fn closed_gate(x: &Tensor, m1: &LinearParams, m2: &LinearParams) -> Result<Tensor> {
    let mut m2 = m2.clone();
    m2.bias.iter_mut().for_each(|b| *b = -1e3);
    perception(x, m1, &m2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcdnet::layers::kaiming_uniform;
    use crate::rng::PortableRng;

    fn init(kind: MpKind, c: usize) -> MpWeights {
        let mut w = MpWeights::new(kind, c, 4, BnSettings::default()).unwrap();
        kaiming_uniform(&mut w, &mut PortableRng::new(9));
        w
    }

    #[test]
    fn shapes_are_preserved() {
        let mut rng = PortableRng::new(1);
        let x = Tensor::random_normal([2, 8, 8, 12], &mut rng);
        for kind in [MpKind::Spatial, MpKind::Channel] {
            let y = mp_forward(&x, &init(kind, 8)).unwrap();
            assert_eq!(y.shape(), x.shape(), "{kind}");
        }
    }

    #[test]
    fn size_preconditions() {
        let x = Tensor::zeros([1, 8, 6, 6]);
        assert!(matches!(
            mp_forward(&x, &init(MpKind::Spatial, 8)),
            Err(Error::Shape(_))
        ));
        assert!(mp_forward(&x, &init(MpKind::Channel, 8)).is_ok());
        assert!(mp_forward(&Tensor::zeros([1, 8, 5, 6]), &init(MpKind::Channel, 8)).is_err());
        assert!(msp_forward(&x, &init(MpKind::Channel, 8)).is_err());
        assert!(mcp_forward(&Tensor::zeros([1, 8, 8, 8]), &init(MpKind::Spatial, 8)).is_err());
    }

    #[test]
    fn perception_gate_limits() {
        let mut rng = PortableRng::new(2);
        let x = Tensor::random_normal([1, 8, 3, 3], &mut rng);
        let MpWeights::Channel { m1, m2, .. } = init(MpKind::Channel, 8) else {
            unreachable!()
        };
        assert!(closed_gate(&x, &m1, &m2).unwrap().max_abs_diff(&x) < 1e-12);
        let mut open = m2.clone();
        open.bias.iter_mut().for_each(|b| *b = 1e3);
        let y = perception(&x, &m1, &open).unwrap();
        assert!(y.max_abs_diff(&x.map(|v| 2.0 * v)) < 1e-12);
    }
}
