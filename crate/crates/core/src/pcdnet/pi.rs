//! Polarization integration: fuses AoLP and DoLP into one feature map.
//!
//! ```text
//! F_φρ = φ ⊗ (ϑ_attn[avg_c ρ, max_c ρ] + σ(maxpool₅(ϑ_pool ρ)))
//! F_pol = ϑ_out[ϑ_φ(F_φρ), ϑ_edge(ρ + Scharr(ρ))]
//! ```

use super::layers::{conv_bn, set_mode, BnSettings};
use crate::error::{Error, Result};
use crate::tensor::params_join as join;
use crate::tensor::{
    channel_avg, channel_avg_backward, channel_max, concat_channels, max_backward, max_pool2d,
    scharr_edge_backward, scharr_edge_forward, sigmoid, sigmoid_backward, split_channels,
    BlockCache, BnMode, ConvBlock, ParamVisitor, ParamVisitorMut, Parameterized, Pooled,
    ScharrCache, Tensor,
};

#[derive(Clone, Debug, PartialEq)]
pub struct PiWeights {
    pub conv_attn: ConvBlock,
    pub conv_pool: ConvBlock,
    pub conv_phi: ConvBlock,
    pub conv_edge: ConvBlock,
    pub conv_out: ConvBlock,
}

impl PiWeights {
    /// Zero-initialized weights producing `c_pi` output channels.
    pub fn new(c_pi: usize, bn: BnSettings) -> Result<Self> {
        if c_pi == 0 || !c_pi.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "c_pi must be positive and even, got {c_pi}"
            )));
        }
        let half = c_pi / 2;
        Ok(Self {
            conv_attn: conv_bn(2, 3, 3, 1, 1, bn)?,
            conv_pool: conv_bn(3, 3, 3, 1, 1, bn)?,
            conv_phi: conv_bn(3, half, 3, 1, 1, bn)?,
            conv_edge: conv_bn(3, half, 3, 1, 1, bn)?,
            conv_out: conv_bn(c_pi, c_pi, 3, 1, 1, bn)?,
        })
    }

    pub fn c_pi(&self) -> usize {
        self.conv_out.c_out()
    }

    pub fn set_bn_mode(&mut self, mode: BnMode) {
        set_mode(
            &mut [
                &mut self.conv_attn,
                &mut self.conv_pool,
                &mut self.conv_phi,
                &mut self.conv_edge,
                &mut self.conv_out,
            ],
            mode,
        );
    }
}

impl Parameterized for PiWeights {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.conv_attn.visit(&join(prefix, "conv_attn"), f);
        self.conv_pool.visit(&join(prefix, "conv_pool"), f);
        self.conv_phi.visit(&join(prefix, "conv_phi"), f);
        self.conv_edge.visit(&join(prefix, "conv_edge"), f);
        self.conv_out.visit(&join(prefix, "conv_out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        self.conv_attn.visit_mut(&join(prefix, "conv_attn"), f);
        self.conv_pool.visit_mut(&join(prefix, "conv_pool"), f);
        self.conv_phi.visit_mut(&join(prefix, "conv_phi"), f);
        self.conv_edge.visit_mut(&join(prefix, "conv_edge"), f);
        self.conv_out.visit_mut(&join(prefix, "conv_out"), f);
    }
}

#[derive(Clone, Debug)]
pub struct PiOutput {
    pub f_pol: Tensor,
    /// Intermediate AoLP–DoLP product, exposed for inspection.
    pub f_phi_rho: Tensor,
}

#[derive(Clone, Debug)]
pub struct PiCache {
    aolp: Tensor,
    dolp_shape: [usize; 4],
    cmax: Pooled,
    attn: BlockCache,
    pool_in: Tensor,
    pool: BlockCache,
    pooled: Pooled,
    gate: Tensor,
    mix: Tensor,
    scharr: ScharrCache,
    phi: BlockCache,
    edge: BlockCache,
    out: BlockCache,
}

fn check_inputs(aolp: &Tensor, dolp: &Tensor) -> Result<()> {
    if aolp.shape() != dolp.shape() {
        return Err(Error::shape(format!(
            "AoLP {:?} and DoLP {:?} differ in shape",
            aolp.shape(),
            dolp.shape()
        )));
    }
    if aolp.c() != 3 {
        return Err(Error::shape(format!(
            "polarization maps need 3 channels, got {}",
            aolp.c()
        )));
    }
    Ok(())
}

/// `aolp` must already be normalized to `[0, 1)`.
pub fn pi_forward(aolp: &Tensor, dolp: &Tensor, w: &PiWeights) -> Result<PiOutput> {
    pi_forward_cached(aolp, dolp, w).map(|(o, _)| o)
}

pub fn pi_forward_cached(
    aolp: &Tensor,
    dolp: &Tensor,
    w: &PiWeights,
) -> Result<(PiOutput, PiCache)> {
    check_inputs(aolp, dolp)?;
    let cavg = channel_avg(dolp);
    let cmax = channel_max(dolp);
    let (attn_out, attn) = w
        .conv_attn
        .forward_cached(&concat_channels(&[&cavg, &cmax.output])?)?;
    let (pool_in, pool) = w.conv_pool.forward_cached(dolp)?;
    let pooled = max_pool2d(&pool_in, 5, 1, 2)?;
    let gate = sigmoid(&pooled.output);
    let mix = attn_out.zip_map(&gate, |a, b| a + b)?;
    let f_phi_rho = aolp.zip_map(&mix, |p, m| p * m)?;
    let scharr = scharr_edge_forward(dolp);
    let edged = dolp.zip_map(scharr.output(), |r, e| r + e)?;
    let (u, phi) = w.conv_phi.forward_cached(&f_phi_rho)?;
    let (v, edge) = w.conv_edge.forward_cached(&edged)?;
    let (f_pol, out) = w.conv_out.forward_cached(&concat_channels(&[&u, &v])?)?;
    Ok((
        PiOutput { f_pol, f_phi_rho },
        PiCache {
            aolp: aolp.clone(),
            dolp_shape: dolp.shape(),
            cmax,
            attn,
            pool_in,
            pool,
            pooled,
            gate,
            mix,
            scharr,
            phi,
            edge,
            out,
        },
    ))
}

/// Gradients `(AoLP, DoLP, weights)` of a cotangent on `f_pol`.
pub fn pi_backward(
    w: &PiWeights,
    cache: &PiCache,
    grad: &Tensor,
) -> Result<(Tensor, Tensor, PiWeights)> {
    let (g_cat, g_out) = w.conv_out.backward(&cache.out, grad)?;
    let half = w.conv_phi.c_out();
    let parts = split_channels(&g_cat, &[half, half])?;
    let (g_edged, g_edge) = w.conv_edge.backward(&cache.edge, &parts[1])?;
    let mut g_dolp = g_edged.clone();
    g_dolp.add_assign(&scharr_edge_backward(&cache.scharr, &g_edged)?)?;
    let (g_fpr, g_phi) = w.conv_phi.backward(&cache.phi, &parts[0])?;
    let g_aolp = g_fpr.zip_map(&cache.mix, |g, m| g * m)?;
    let g_mix = g_fpr.zip_map(&cache.aolp, |g, p| g * p)?;
    let g_pooled = sigmoid_backward(&cache.gate, &g_mix)?;
    let g_pool_in = max_backward(cache.pool_in.shape(), &cache.pooled.argmax, &g_pooled)?;
    let (g_d, g_pool) = w.conv_pool.backward(&cache.pool, &g_pool_in)?;
    g_dolp.add_assign(&g_d)?;
    let (g_attn_in, g_attn) = w.conv_attn.backward(&cache.attn, &g_mix)?;
    let stats = split_channels(&g_attn_in, &[1, 1])?;
    g_dolp.add_assign(&channel_avg_backward(cache.dolp_shape, &stats[0])?)?;
    g_dolp.add_assign(&max_backward(
        cache.dolp_shape,
        &cache.cmax.argmax,
        &stats[1],
    )?)?;
    Ok((
        g_aolp,
        g_dolp,
        PiWeights {
            conv_attn: g_attn,
            conv_pool: g_pool,
            conv_phi: g_phi,
            conv_edge: g_edge,
            conv_out: g_out,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcdnet::layers::kaiming_uniform;
    use crate::rng::PortableRng;

    fn weights(seed: u64) -> PiWeights {
        let mut w = PiWeights::new(8, BnSettings::default()).unwrap();
        kaiming_uniform(&mut w, &mut PortableRng::new(seed));
        w
    }

    #[test]
    fn output_shapes() {
        let mut rng = PortableRng::new(1);
        let a = Tensor::random_uniform([2, 3, 12, 10], &mut rng, 0.0, 1.0);
        let d = Tensor::random_uniform([2, 3, 12, 10], &mut rng, 0.0, 1.0);
        let o = pi_forward(&a, &d, &weights(2)).unwrap();
        assert_eq!(o.f_pol.shape(), [2, 8, 12, 10]);
        assert_eq!(o.f_phi_rho.shape(), [2, 3, 12, 10]);
        assert!(o.f_pol.all_finite());
    }

    #[test]
    fn zero_aolp_zeroes_the_product() {
        let mut rng = PortableRng::new(3);
        let a = Tensor::zeros([1, 3, 8, 8]);
        let d = Tensor::random_uniform([1, 3, 8, 8], &mut rng, 0.0, 1.0);
        let o = pi_forward(&a, &d, &weights(4)).unwrap();
        assert!(o.f_phi_rho.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let w = weights(0);
        let a = Tensor::zeros([1, 3, 8, 8]);
        assert!(pi_forward(&a, &Tensor::zeros([1, 3, 8, 6]), &w).is_err());
        assert!(pi_forward(
            &Tensor::zeros([1, 1, 8, 8]),
            &Tensor::zeros([1, 1, 8, 8]),
            &w
        )
        .is_err());
        assert!(PiWeights::new(5, BnSettings::default()).is_err());
    }
}
