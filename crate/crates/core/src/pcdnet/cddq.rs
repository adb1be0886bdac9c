//! Cross-domain dual-quantification fusion of the RGB and polarization
//! branches.
//!
//! Difference mining (SDMD):
//! ```text
//! η     = σ(ϑ_a(gmax F) + ϑ_b(gavg F))
//! F′    = η ⊗ F
//! μ     = σ(ϑ_μ[avg_c F′, max_c F′])
//! F*rgb = F + μ ⊗ F′
//! F*pol = P + ϑ_g(avgpool₃ μ) ⊗ P
//! ```
//! Weight allocation (CWDA):
//! ```text
//! z     = σ(W₂ · silu(W₁ · [gavg F*rgb, gavg F*pol]))
//! α, β  = softmax over the pair (z_rgb, z_pol), per channel
//! out   = ϑ_fuse[α ⊗ F*rgb, β ⊗ F*pol]
//! ```

use super::layers::{conv_bias, conv_bn, linear, set_mode, BnSettings};
use crate::error::{Error, Result};
use crate::tensor::params_join as join;
use crate::tensor::{
    avg_pool2d, avg_pool2d_backward, channel_avg, channel_avg_backward, channel_max,
    concat_channels, fully_connected, fully_connected_backward, global_avg, global_avg_backward,
    global_max, max_backward, mul, mul_backward, sigmoid, sigmoid_backward, silu, silu_backward,
    softmax_pair, softmax_pair_backward, split_channels, BlockCache, BnMode, ConvBlock,
    LinearParams, ParamVisitor, ParamVisitorMut, Parameterized, Pooled, Tensor,
};

#[derive(Clone, Debug, PartialEq)]
pub struct CddqWeights {
    pub conv_eta_max: ConvBlock,
    pub conv_eta_avg: ConvBlock,
    pub conv_mu: ConvBlock,
    pub conv_pol_gate: ConvBlock,
    pub fc1: LinearParams,
    pub fc2: LinearParams,
    pub conv_fuse: ConvBlock,
}

impl CddqWeights {
    /// Branches of width `c`, fused output of width `c_out`.
    pub fn new(c: usize, c_out: usize, hidden: Option<usize>, bn: BnSettings) -> Result<Self> {
        let hidden = hidden.unwrap_or(c);
        if c == 0 || c_out == 0 || hidden == 0 {
            return Err(Error::Config("fusion widths must be positive".into()));
        }
        Ok(Self {
            conv_eta_max: conv_bias(c, c, 1, 0)?,
            conv_eta_avg: conv_bias(c, c, 1, 0)?,
            conv_mu: conv_bn(2, 1, 7, 1, 3, bn)?,
            conv_pol_gate: conv_bn(1, c, 3, 1, 1, bn)?,
            fc1: linear(hidden, 2 * c),
            fc2: linear(2 * c, hidden),
            conv_fuse: conv_bn(2 * c, c_out, 1, 1, 0, bn)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.conv_eta_max.c_in()
    }

    pub fn set_bn_mode(&mut self, mode: BnMode) {
        set_mode(
            &mut [
                &mut self.conv_eta_max,
                &mut self.conv_eta_avg,
                &mut self.conv_mu,
                &mut self.conv_pol_gate,
                &mut self.conv_fuse,
            ],
            mode,
        );
    }
}

impl Parameterized for CddqWeights {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.conv_eta_max.visit(&join(prefix, "conv_eta_max"), f);
        self.conv_eta_avg.visit(&join(prefix, "conv_eta_avg"), f);
        self.conv_mu.visit(&join(prefix, "conv_mu"), f);
        self.conv_pol_gate.visit(&join(prefix, "conv_pol_gate"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
        self.conv_fuse.visit(&join(prefix, "conv_fuse"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        self.conv_eta_max
            .visit_mut(&join(prefix, "conv_eta_max"), f);
        self.conv_eta_avg
            .visit_mut(&join(prefix, "conv_eta_avg"), f);
        self.conv_mu.visit_mut(&join(prefix, "conv_mu"), f);
        self.conv_pol_gate
            .visit_mut(&join(prefix, "conv_pol_gate"), f);
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
        self.conv_fuse.visit_mut(&join(prefix, "conv_fuse"), f);
    }
}

/// Ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CddqOptions {
    /// Off: both branches pass through unchanged.
    pub sdmd: bool,
    /// Off: the branches are concatenated and fused with `α = β = 1`.
    pub cwda: bool,
}

impl Default for CddqOptions {
    fn default() -> Self {
        Self {
            sdmd: true,
            cwda: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdmdOutput {
    pub f_rgb: Tensor,
    pub f_pol: Tensor,
    /// Spatial difference map `(N, 1, H, W)`.
    pub mu: Tensor,
    /// Channel weights `(N, C, 1, 1)`.
    pub eta: Tensor,
}

#[derive(Clone, Debug)]
pub struct SdmdCache {
    f: Tensor,
    p: Tensor,
    gmax: Pooled,
    eta_max: BlockCache,
    eta_avg: BlockCache,
    eta: Tensor,
    f_prime: Tensor,
    cmax: Pooled,
    mu_block: BlockCache,
    mu: Tensor,
    gate: Tensor,
    gate_block: BlockCache,
}

fn check_pair(f_rgb: &Tensor, f_pol: &Tensor, c: usize) -> Result<()> {
    if f_rgb.shape() != f_pol.shape() {
        return Err(Error::shape(format!(
            "fusion branches differ in shape: {:?} vs {:?}",
            f_rgb.shape(),
            f_pol.shape()
        )));
    }
    if f_rgb.c() != c {
        return Err(Error::shape(format!(
            "fusion expects {c} channels, got {}",
            f_rgb.c()
        )));
    }
    Ok(())
}

pub fn sdmd_forward(f_rgb: &Tensor, f_pol: &Tensor, w: &CddqWeights) -> Result<SdmdOutput> {
    sdmd_forward_cached(f_rgb, f_pol, w).map(|(o, _)| o)
}

pub fn sdmd_forward_cached(
    f: &Tensor,
    p: &Tensor,
    w: &CddqWeights,
) -> Result<(SdmdOutput, SdmdCache)> {
    check_pair(f, p, w.channels())?;
    let gmax = global_max(f);
    let (a, eta_max) = w.conv_eta_max.forward_cached(&gmax.output)?;
    let (b, eta_avg) = w.conv_eta_avg.forward_cached(&global_avg(f))?;
    let eta = sigmoid(&a.zip_map(&b, |x, y| x + y)?);
    let f_prime = mul(f, &eta)?;
    let cmax = channel_max(&f_prime);
    let stats = concat_channels(&[&channel_avg(&f_prime), &cmax.output])?;
    let (z, mu_block) = w.conv_mu.forward_cached(&stats)?;
    let mu = sigmoid(&z);
    let rgb = mul(&mu, &f_prime)?.zip_map(f, |d, x| x + d)?;
    let (gate, gate_block) = w.conv_pol_gate.forward_cached(&avg_pool2d(&mu, 3, 1, 1)?)?;
    let pol = gate.zip_map(p, |g, x| x + g * x)?;
    Ok((
        SdmdOutput {
            f_rgb: rgb,
            f_pol: pol,
            mu: mu.clone(),
            eta: eta.clone(),
        },
        SdmdCache {
            f: f.clone(),
            p: p.clone(),
            gmax,
            eta_max,
            eta_avg,
            eta,
            f_prime,
            cmax,
            mu_block,
            mu,
            gate,
            gate_block,
        },
    ))
}

/// Gradients `(F, P, weights)` from cotangents on `F*rgb` and `F*pol`. Only
/// the SDMD blocks of the returned weights are non-zero.
pub fn sdmd_backward(
    w: &CddqWeights,
    cache: &SdmdCache,
    g_rgb: &Tensor,
    g_pol: &Tensor,
) -> Result<(Tensor, Tensor, CddqWeights)> {
    let gp = g_pol.zip_map(&cache.gate, |g, s| g + g * s)?;
    let g_gate = g_pol.zip_map(&cache.p, |g, x| g * x)?;
    let (g_pooled, g_pol_gate) = w.conv_pol_gate.backward(&cache.gate_block, &g_gate)?;
    let mut g_mu = avg_pool2d_backward(cache.mu.shape(), 3, 1, 1, &g_pooled)?;

    let mut gf = g_rgb.clone();
    let (g_mu2, mut g_fp) = mul_backward(&cache.mu, &cache.f_prime, g_rgb)?;
    g_mu.add_assign(&g_mu2)?;
    let g_z = sigmoid_backward(&cache.mu, &g_mu)?;
    let (g_stats, g_conv_mu) = w.conv_mu.backward(&cache.mu_block, &g_z)?;
    let parts = split_channels(&g_stats, &[1, 1])?;
    let fp_shape = cache.f_prime.shape();
    g_fp.add_assign(&channel_avg_backward(fp_shape, &parts[0])?)?;
    g_fp.add_assign(&max_backward(fp_shape, &cache.cmax.argmax, &parts[1])?)?;

    let (g_f, g_eta) = mul_backward(&cache.f, &cache.eta, &g_fp)?;
    gf.add_assign(&g_f)?;
    let g_pre = sigmoid_backward(&cache.eta, &g_eta)?;
    let (g_gmax, g_eta_max) = w.conv_eta_max.backward(&cache.eta_max, &g_pre)?;
    let (g_gavg, g_eta_avg) = w.conv_eta_avg.backward(&cache.eta_avg, &g_pre)?;
    gf.add_assign(&max_backward(cache.f.shape(), &cache.gmax.argmax, &g_gmax)?)?;
    gf.add_assign(&global_avg_backward(cache.f.shape(), &g_gavg)?)?;

    let mut grads = zero_like(w);
    grads.conv_eta_max = g_eta_max;
    grads.conv_eta_avg = g_eta_avg;
    grads.conv_mu = g_conv_mu;
    grads.conv_pol_gate = g_pol_gate;
    Ok((gf, gp, grads))
}

#[derive(Clone, Debug)]
pub struct CwdaOutput {
    pub fused: Tensor,
    /// Per-channel branch weights `(N, C, 1, 1)`; `α + β = 1`.
    pub alpha: Tensor,
    pub beta: Tensor,
}

#[derive(Clone, Debug)]
pub struct CwdaCache {
    f: Tensor,
    p: Tensor,
    pooled: Tensor,
    h1: Tensor,
    s1: Tensor,
    z: Tensor,
    alpha: Tensor,
    beta: Tensor,
    fuse: BlockCache,
}

pub fn cwda_forward(f_rgb: &Tensor, f_pol: &Tensor, w: &CddqWeights) -> Result<CwdaOutput> {
    cwda_forward_cached(f_rgb, f_pol, w).map(|(o, _)| o)
}

pub fn cwda_forward_cached(
    f: &Tensor,
    p: &Tensor,
    w: &CddqWeights,
) -> Result<(CwdaOutput, CwdaCache)> {
    let c = w.channels();
    check_pair(f, p, c)?;
    let pooled = concat_channels(&[&global_avg(f), &global_avg(p)])?;
    let h1 = fully_connected(&pooled, &w.fc1)?;
    let s1 = silu(&h1);
    let z = sigmoid(&fully_connected(&s1, &w.fc2)?);
    let halves = split_channels(&z, &[c, c])?;
    let (alpha, beta) = softmax_pair(&halves[0], &halves[1])?;
    let cat = concat_channels(&[&mul(f, &alpha)?, &mul(p, &beta)?])?;
    let (fused, fuse) = w.conv_fuse.forward_cached(&cat)?;
    Ok((
        CwdaOutput {
            fused,
            alpha: alpha.clone(),
            beta: beta.clone(),
        },
        CwdaCache {
            f: f.clone(),
            p: p.clone(),
            pooled,
            h1,
            s1,
            z,
            alpha,
            beta,
            fuse,
        },
    ))
}

/// Gradients `(F*rgb, F*pol, weights)`; only the CWDA blocks are non-zero.
pub fn cwda_backward(
    w: &CddqWeights,
    cache: &CwdaCache,
    grad: &Tensor,
) -> Result<(Tensor, Tensor, CddqWeights)> {
    let c = w.channels();
    let (g_cat, g_fuse) = w.conv_fuse.backward(&cache.fuse, grad)?;
    let parts = split_channels(&g_cat, &[c, c])?;
    let (mut gf, g_alpha) = mul_backward(&cache.f, &cache.alpha, &parts[0])?;
    let (mut gp, g_beta) = mul_backward(&cache.p, &cache.beta, &parts[1])?;
    let (g_za, g_zb) = softmax_pair_backward(&cache.alpha, &cache.beta, &g_alpha, &g_beta)?;
    let g_z = concat_channels(&[&g_za, &g_zb])?;
    let g_h2 = sigmoid_backward(&cache.z, &g_z)?;
    let (g_s1, g_fc2) = fully_connected_backward(&cache.s1, &w.fc2, &g_h2)?;
    let g_h1 = silu_backward(&cache.h1, &g_s1)?;
    let (g_pooled, g_fc1) = fully_connected_backward(&cache.pooled, &w.fc1, &g_h1)?;
    let pooled = split_channels(&g_pooled, &[c, c])?;
    gf.add_assign(&global_avg_backward(cache.f.shape(), &pooled[0])?)?;
    gp.add_assign(&global_avg_backward(cache.p.shape(), &pooled[1])?)?;
    let mut grads = zero_like(w);
    grads.fc1 = g_fc1;
    grads.fc2 = g_fc2;
    grads.conv_fuse = g_fuse;
    Ok((gf, gp, grads))
}

#[derive(Clone, Debug)]
pub struct CddqOutput {
    pub fused: Tensor,
    /// Present when difference mining is enabled.
    pub sdmd: Option<SdmdOutput>,
    /// `(α, β)`, present when weight allocation is enabled.
    pub weights: Option<(Tensor, Tensor)>,
}

#[derive(Clone, Debug)]
pub struct CddqCache {
    sdmd: Option<SdmdCache>,
    cwda: Option<CwdaCache>,
    plain: Option<BlockCache>,
}

pub fn cddq_forward(
    f_rgb: &Tensor,
    f_pol: &Tensor,
    w: &CddqWeights,
    opts: CddqOptions,
) -> Result<CddqOutput> {
    cddq_forward_cached(f_rgb, f_pol, w, opts).map(|(o, _)| o)
}

pub fn cddq_forward_cached(
    f_rgb: &Tensor,
    f_pol: &Tensor,
    w: &CddqWeights,
    opts: CddqOptions,
) -> Result<(CddqOutput, CddqCache)> {
    check_pair(f_rgb, f_pol, w.channels())?;
    let (rgb, pol, sdmd_out, sdmd_cache) = if opts.sdmd {
        let (o, c) = sdmd_forward_cached(f_rgb, f_pol, w)?;
        (o.f_rgb.clone(), o.f_pol.clone(), Some(o), Some(c))
    } else {
        (f_rgb.clone(), f_pol.clone(), None, None)
    };
    if opts.cwda {
        let (o, c) = cwda_forward_cached(&rgb, &pol, w)?;
        Ok((
            CddqOutput {
                fused: o.fused,
                sdmd: sdmd_out,
                weights: Some((o.alpha, o.beta)),
            },
            CddqCache {
                sdmd: sdmd_cache,
                cwda: Some(c),
                plain: None,
            },
        ))
    } else {
        let (fused, c) = w
            .conv_fuse
            .forward_cached(&concat_channels(&[&rgb, &pol])?)?;
        Ok((
            CddqOutput {
                fused,
                sdmd: sdmd_out,
                weights: None,
            },
            CddqCache {
                sdmd: sdmd_cache,
                cwda: None,
                plain: Some(c),
            },
        ))
    }
}

/// Gradients `(F_rgb, F_pol, weights)` of a cotangent on the fused output.
pub fn cddq_backward(
    w: &CddqWeights,
    cache: &CddqCache,
    grad: &Tensor,
) -> Result<(Tensor, Tensor, CddqWeights)> {
    let c = w.channels();
    let (g_rgb, g_pol, mut grads) = match (&cache.cwda, &cache.plain) {
        (Some(cc), _) => cwda_backward(w, cc, grad)?,
        (None, Some(pc)) => {
            let (g_cat, g_fuse) = w.conv_fuse.backward(pc, grad)?;
            let parts = split_channels(&g_cat, &[c, c])?;
            let mut grads = zero_like(w);
            grads.conv_fuse = g_fuse;
            let mut it = parts.into_iter();
            (
                it.next().expect("two parts"),
                it.next().expect("two parts"),
                grads,
            )
        }
        _ => return Err(Error::shape("fusion cache is empty")),
    };
    match &cache.sdmd {
        Some(sc) => {
            let (gf, gp, sg) = sdmd_backward(w, sc, &g_rgb, &g_pol)?;
            grads.conv_eta_max = sg.conv_eta_max;
            grads.conv_eta_avg = sg.conv_eta_avg;
            grads.conv_mu = sg.conv_mu;
            grads.conv_pol_gate = sg.conv_pol_gate;
            Ok((gf, gp, grads))
        }
        None => Ok((g_rgb, g_pol, grads)),
    }
}

fn zero_like(w: &CddqWeights) -> CddqWeights {
    let mut z = w.clone();
    z.visit_mut("", &mut |_, _, _, data| {
        data.iter_mut().for_each(|v| *v = 0.0)
    });
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcdnet::layers::kaiming_uniform;
    use crate::rng::PortableRng;

    fn weights(c: usize) -> CddqWeights {
        let mut w = CddqWeights::new(c, c, None, BnSettings::default()).unwrap();
        kaiming_uniform(&mut w, &mut PortableRng::new(17));
        w
    }

    fn pair(seed: u64, shape: [usize; 4]) -> (Tensor, Tensor) {
        let mut rng = PortableRng::new(seed);
        (
            Tensor::random_normal(shape, &mut rng),
            Tensor::random_normal(shape, &mut rng),
        )
    }

    #[test]
    fn alpha_beta_sum_to_one() {
        let (f, p) = pair(1, [2, 8, 6, 6]);
        let o = cwda_forward(&f, &p, &weights(8)).unwrap();
        let s = o.alpha.zip_map(&o.beta, |a, b| a + b).unwrap();
        assert!(s.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(o.alpha.data().iter().all(|&a| a > 0.0 && a < 1.0));
        assert_eq!(o.alpha.shape(), [2, 8, 1, 1]);
    }

    #[test]
    fn sdmd_shapes_and_ranges() {
        let (f, p) = pair(2, [1, 8, 6, 10]);
        let o = sdmd_forward(&f, &p, &weights(8)).unwrap();
        assert_eq!(o.mu.shape(), [1, 1, 6, 10]);
        assert_eq!(o.eta.shape(), [1, 8, 1, 1]);
        assert!(o
            .mu
            .data()
            .iter()
            .chain(o.eta.data())
            .all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(o.f_rgb.shape(), f.shape());
    }

    #[test]
    fn ablations_change_the_output() {
        let (f, p) = pair(3, [1, 8, 6, 6]);
        let w = weights(8);
        let full = cddq_forward(&f, &p, &w, CddqOptions::default()).unwrap();
        assert!(full.sdmd.is_some() && full.weights.is_some());
        let no_sdmd = cddq_forward(
            &f,
            &p,
            &w,
            CddqOptions {
                sdmd: false,
                cwda: true,
            },
        )
        .unwrap();
        let no_cwda = cddq_forward(
            &f,
            &p,
            &w,
            CddqOptions {
                sdmd: true,
                cwda: false,
            },
        )
        .unwrap();
        assert!(no_sdmd.sdmd.is_none() && no_cwda.weights.is_none());
        assert!(full.fused.max_abs_diff(&no_sdmd.fused) > 1e-6);
        assert!(full.fused.max_abs_diff(&no_cwda.fused) > 1e-6);
        let plain = cddq_forward(
            &f,
            &p,
            &w,
            CddqOptions {
                sdmd: false,
                cwda: false,
            },
        )
        .unwrap();
        let expected = w
            .conv_fuse
            .forward(&concat_channels(&[&f, &p]).unwrap())
            .unwrap();
        assert_eq!(plain.fused, expected);
    }

    #[test]
    fn mismatched_branches_rejected() {
        let w = weights(8);
        let (f, _) = pair(4, [1, 8, 6, 6]);
        assert!(
            cddq_forward(&f, &Tensor::zeros([1, 8, 6, 4]), &w, CddqOptions::default()).is_err()
        );
        assert!(cddq_forward(
            &Tensor::zeros([1, 4, 6, 6]),
            &Tensor::zeros([1, 4, 6, 6]),
            &w,
            CddqOptions::default()
        )
        .is_err());
    }
}
