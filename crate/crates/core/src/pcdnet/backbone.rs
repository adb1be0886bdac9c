//! Dual-branch encoder. Each stage downsamples both branches with a stride-2
//! block followed by a stride-1 block, applies material perception to the
//! polarization branch, and emits one pyramid level: the fused map on fusion
//! stages, the branch sum elsewhere. The branches themselves continue
//! unfused into the next stage.

use super::cddq::{
    cddq_backward, cddq_forward_cached, CddqCache, CddqOptions, CddqOutput, CddqWeights,
};
use super::config::NetworkConfig;
use super::layers::{conv_bn, BnSettings};
use super::mp::{mp_backward, mp_forward_cached, MpCache, MpWeights};
use crate::error::{Error, Result};
use crate::tensor::params_join as join;
use crate::tensor::{
    BlockCache, BnMode, ConvBlock, ParamVisitor, ParamVisitorMut, Parameterized, Tensor,
};

#[derive(Clone, Debug, PartialEq)]
pub struct StageWeights {
    pub rgb_down: ConvBlock,
    pub rgb_mix: ConvBlock,
    pub pol_down: ConvBlock,
    pub pol_mix: ConvBlock,
    pub mp: Option<MpWeights>,
    pub cddq: Option<CddqWeights>,
}

impl StageWeights {
    pub fn width(&self) -> usize {
        self.rgb_mix.c_out()
    }

    pub fn set_bn_mode(&mut self, mode: BnMode) {
        for b in [
            &mut self.rgb_down,
            &mut self.rgb_mix,
            &mut self.pol_down,
            &mut self.pol_mix,
        ] {
            b.set_bn_mode(mode);
        }
        if let Some(mp) = &mut self.mp {
            mp.set_bn_mode(mode);
        }
        if let Some(c) = &mut self.cddq {
            c.set_bn_mode(mode);
        }
    }
}

impl Parameterized for StageWeights {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.rgb_down.visit(&join(prefix, "rgb_down"), f);
        self.rgb_mix.visit(&join(prefix, "rgb_mix"), f);
        self.pol_down.visit(&join(prefix, "pol_down"), f);
        self.pol_mix.visit(&join(prefix, "pol_mix"), f);
        self.mp.visit(&join(prefix, "mp"), f);
        self.cddq.visit(&join(prefix, "cddq"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        self.rgb_down.visit_mut(&join(prefix, "rgb_down"), f);
        self.rgb_mix.visit_mut(&join(prefix, "rgb_mix"), f);
        self.pol_down.visit_mut(&join(prefix, "pol_down"), f);
        self.pol_mix.visit_mut(&join(prefix, "pol_mix"), f);
        self.mp.visit_mut(&join(prefix, "mp"), f);
        self.cddq.visit_mut(&join(prefix, "cddq"), f);
    }
}

/// Zero-initialized stages for `cfg`, taking `c_pi` polarization channels in.
pub fn build_stages(cfg: &NetworkConfig) -> Result<Vec<StageWeights>> {
    cfg.validate()?;
    let bn = BnSettings {
        eps: cfg.bn_eps,
        mode: cfg.bn_mode,
    };
    let mut rgb_in = 3;
    let mut pol_in = cfg.c_pi;
    let mut stages = Vec::with_capacity(cfg.stages());
    for (i, &c) in cfg.widths.iter().enumerate() {
        stages.push(StageWeights {
            rgb_down: conv_bn(rgb_in, c, 3, 2, 1, bn)?,
            rgb_mix: conv_bn(c, c, 3, 1, 1, bn)?,
            pol_down: conv_bn(pol_in, c, 3, 2, 1, bn)?,
            pol_mix: conv_bn(c, c, 3, 1, 1, bn)?,
            mp: if cfg.use_mp {
                Some(MpWeights::new(
                    cfg.mp_assignment[i],
                    c,
                    cfg.mp_reduction,
                    bn,
                )?)
            } else {
                None
            },
            cddq: if cfg.is_fusion_stage(i) {
                Some(CddqWeights::new(c, c, cfg.fc_hidden, bn)?)
            } else {
                None
            },
        });
        rgb_in = c;
        pol_in = c;
    }
    Ok(stages)
}

#[derive(Clone, Debug)]
pub struct BackboneOutput {
    /// One map per stage, finest first.
    pub levels: Vec<Tensor>,
    /// Fusion diagnostics of each fusion stage.
    pub fusion: Vec<Option<CddqOutput>>,
}

#[derive(Clone, Debug)]
struct StageCache {
    rgb_down: BlockCache,
    rgb_mix: BlockCache,
    pol_down: BlockCache,
    pol_mix: BlockCache,
    mp: Option<MpCache>,
    cddq: Option<CddqCache>,
}

#[derive(Clone, Debug)]
pub struct BackboneCache {
    stages: Vec<StageCache>,
}

pub fn backbone_forward(
    rgb: &Tensor,
    f_pol: &Tensor,
    stages: &[StageWeights],
    opts: CddqOptions,
) -> Result<BackboneOutput> {
    backbone_forward_cached(rgb, f_pol, stages, opts).map(|(o, _)| o)
}

pub fn backbone_forward_cached(
    rgb: &Tensor,
    f_pol: &Tensor,
    stages: &[StageWeights],
    opts: CddqOptions,
) -> Result<(BackboneOutput, BackboneCache)> {
    if rgb.shape()[2..] != f_pol.shape()[2..] || rgb.n() != f_pol.n() {
        return Err(Error::shape(format!(
            "RGB {:?} and polarization features {:?} are not aligned",
            rgb.shape(),
            f_pol.shape()
        )));
    }
    let mut r = rgb.clone();
    let mut p = f_pol.clone();
    let mut levels = Vec::with_capacity(stages.len());
    let mut fusion = Vec::with_capacity(stages.len());
    let mut caches = Vec::with_capacity(stages.len());
    for s in stages {
        let (r1, rgb_down) = s.rgb_down.forward_cached(&r)?;
        let (r2, rgb_mix) = s.rgb_mix.forward_cached(&r1)?;
        let (p1, pol_down) = s.pol_down.forward_cached(&p)?;
        let (mut p2, pol_mix) = s.pol_mix.forward_cached(&p1)?;
        let mp = match &s.mp {
            Some(w) => {
                let (y, c) = mp_forward_cached(&p2, w)?;
                p2 = y;
                Some(c)
            }
            None => None,
        };
        let cddq = match &s.cddq {
            Some(w) => {
                let (o, c) = cddq_forward_cached(&r2, &p2, w, opts)?;
                levels.push(o.fused.clone());
                fusion.push(Some(o));
                Some(c)
            }
            None => {
                levels.push(r2.zip_map(&p2, |a, b| a + b)?);
                fusion.push(None);
                None
            }
        };
        caches.push(StageCache {
            rgb_down,
            rgb_mix,
            pol_down,
            pol_mix,
            mp,
            cddq,
        });
        r = r2;
        p = p2;
    }
    Ok((
        BackboneOutput { levels, fusion },
        BackboneCache { stages: caches },
    ))
}

/// Gradients `(rgb, f_pol, stages)` from one cotangent per pyramid level.
pub fn backbone_backward(
    stages: &[StageWeights],
    cache: &BackboneCache,
    level_grads: &[Tensor],
) -> Result<(Tensor, Tensor, Vec<StageWeights>)> {
    if level_grads.len() != stages.len() || cache.stages.len() != stages.len() {
        return Err(Error::shape("one gradient per pyramid level is required"));
    }
    let mut grads = Vec::with_capacity(stages.len());
    let mut carry: Option<(Tensor, Tensor)> = None;
    for ((s, c), g) in stages.iter().zip(&cache.stages).zip(level_grads).rev() {
        let (mut gr, mut gp, g_cddq) = match (&s.cddq, &c.cddq) {
            (Some(w), Some(cc)) => {
                let (a, b, gw) = cddq_backward(w, cc, g)?;
                (a, b, Some(gw))
            }
            _ => (g.clone(), g.clone(), None),
        };
        if let Some((cr, cp)) = carry.take() {
            gr.add_assign(&cr)?;
            gp.add_assign(&cp)?;
        }
        let g_mp = match (&s.mp, &c.mp) {
            (Some(w), Some(mc)) => {
                let (g, gw) = mp_backward(w, mc, &gp)?;
                gp = g;
                Some(gw)
            }
            _ => None,
        };
        let (gp, g_pol_mix) = s.pol_mix.backward(&c.pol_mix, &gp)?;
        let (gp, g_pol_down) = s.pol_down.backward(&c.pol_down, &gp)?;
        let (gr, g_rgb_mix) = s.rgb_mix.backward(&c.rgb_mix, &gr)?;
        let (gr, g_rgb_down) = s.rgb_down.backward(&c.rgb_down, &gr)?;
        grads.push(StageWeights {
            rgb_down: g_rgb_down,
            rgb_mix: g_rgb_mix,
            pol_down: g_pol_down,
            pol_mix: g_pol_mix,
            mp: g_mp,
            cddq: g_cddq,
        });
        carry = Some((gr, gp));
    }
    grads.reverse();
    let (gr, gp) = carry.ok_or_else(|| Error::shape("backbone has no stages"))?;
    Ok((gr, gp, grads))
}
