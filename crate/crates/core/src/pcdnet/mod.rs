//! Polarization–RGB fusion detector: polarization integration, a dual-branch
//! encoder with material perception and cross-domain fusion, and an
//! anchor-based head.

mod backbone;
pub mod cases;
mod cddq;
mod config;
mod head;
mod layers;
mod mp;
mod pi;

use std::f64::consts::PI;
use std::path::Path;

pub use backbone::{
    backbone_backward, backbone_forward, backbone_forward_cached, build_stages, BackboneCache,
    BackboneOutput, StageWeights,
};
pub use cddq::{
    cddq_backward, cddq_forward, cddq_forward_cached, cwda_backward, cwda_forward,
    cwda_forward_cached, sdmd_backward, sdmd_forward, sdmd_forward_cached, CddqCache, CddqOptions,
    CddqOutput, CddqWeights, CwdaCache, CwdaOutput, SdmdCache, SdmdOutput,
};
pub use config::{parse_mp_assignment, MpKind, NetworkConfig};
pub use head::{build_head, decode_level, nms, Detection, TW_CLAMP};
pub use layers::{kaiming_uniform, BnSettings};
pub use mp::{
    closed_gate, mcp_forward, mp_backward, mp_forward, mp_forward_cached, msp_forward, perception,
    perception_backward, perception_cached, MpCache, MpWeights, PerceptionCache,
};
pub use pi::{pi_backward, pi_forward, pi_forward_cached, PiCache, PiOutput, PiWeights};

use crate::error::{Error, Result};
use crate::rng::PortableRng;
use crate::tensor::container::{load_params, save_params};
use crate::tensor::params_join as join;
use crate::tensor::{
    conv2d, conv2d_backward, BnMode, ConvParams, ParamVisitor, ParamVisitorMut, Parameterized,
    Tensor,
};

/// Network inputs, each `(N, 3, H, W)`. AoLP is normalized to `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkInput {
    pub rgb: Tensor,
    pub aolp: Tensor,
    pub dolp: Tensor,
}

impl NetworkInput {
    pub fn new(rgb: Tensor, aolp: Tensor, dolp: Tensor) -> Result<Self> {
        if rgb.shape() != aolp.shape() || rgb.shape() != dolp.shape() {
            return Err(Error::Alignment(format!(
                "RGB {:?}, AoLP {:?} and DoLP {:?} must share a shape",
                rgb.shape(),
                aolp.shape(),
                dolp.shape()
            )));
        }
        if rgb.c() != 3 {
            return Err(Error::shape(format!(
                "inputs need 3 channels, got {}",
                rgb.c()
            )));
        }
        Ok(Self { rgb, aolp, dolp })
    }

    /// Takes AoLP in radians `[0, π)` and divides by π.
    pub fn from_radians(rgb: Tensor, aolp: Tensor, dolp: Tensor) -> Result<Self> {
        Self::new(rgb, aolp.map(|v| v / PI), dolp)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    pub pi: PiWeights,
    pub stages: Vec<StageWeights>,
    pub head: Vec<ConvParams>,
}

impl Parameterized for NetworkWeights {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.pi.visit(&join(prefix, "pi"), f);
        self.stages.visit(&join(prefix, "stages"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        self.pi.visit_mut(&join(prefix, "pi"), f);
        self.stages.visit_mut(&join(prefix, "stages"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

#[derive(Clone, Debug)]
pub struct NetworkOutput {
    pub pi: PiOutput,
    pub backbone: BackboneOutput,
    /// Raw head maps `(N, 5A, H_l, W_l)`, finest level first.
    pub head: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct NetworkCache {
    pi: PiCache,
    backbone: BackboneCache,
    levels: Vec<Tensor>,
}

/// Gradients with respect to the three inputs.
#[derive(Clone, Debug)]
pub struct InputGrads {
    pub rgb: Tensor,
    pub aolp: Tensor,
    pub dolp: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    weights: NetworkWeights,
}

impl Network {
    /// Zero weights with identity batch norm.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let bn = BnSettings {
            eps: config.bn_eps,
            mode: config.bn_mode,
        };
        let weights = NetworkWeights {
            pi: PiWeights::new(config.c_pi, bn)?,
            stages: build_stages(&config)?,
            head: build_head(&config.widths, &config.anchors)?,
        };
        Ok(Self { config, weights })
    }

    /// Kaiming-uniform initialization seeded by `config.seed`.
    pub fn init(config: NetworkConfig) -> Result<Self> {
        let mut net = Self::new(config)?;
        let mut rng = PortableRng::new(net.config.seed);
        kaiming_uniform(&mut net.weights, &mut rng);
        Ok(net)
    }

    pub fn load(config: NetworkConfig, weights: &Path) -> Result<Self> {
        let mut net = Self::new(config)?;
        load_params(&mut net.weights, weights)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_params(&self.weights, path)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut NetworkWeights {
        &mut self.weights
    }

    pub fn set_bn_mode(&mut self, mode: BnMode) {
        self.config.bn_mode = mode;
        self.weights.pi.set_bn_mode(mode);
        for s in &mut self.weights.stages {
            s.set_bn_mode(mode);
        }
    }

    pub fn cddq_options(&self) -> CddqOptions {
        CddqOptions {
            sdmd: self.config.use_sdmd,
            cwda: self.config.use_cwda,
        }
    }

    fn check_input(&self, input: &NetworkInput) -> Result<()> {
        let m = self.config.size_multiple();
        let [_, c, h, w] = input.rgb.shape();
        if c != 3
            || input.aolp.shape() != input.rgb.shape()
            || input.dolp.shape() != input.rgb.shape()
        {
            return Err(Error::Alignment(
                "network inputs must all be (N, 3, H, W) and aligned".into(),
            ));
        }
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::shape(format!(
                "input {h}x{w} must be a non-empty multiple of {m} in both dimensions"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &NetworkInput) -> Result<NetworkOutput> {
        self.forward_cached(input).map(|(o, _)| o)
    }

    pub fn forward_cached(&self, input: &NetworkInput) -> Result<(NetworkOutput, NetworkCache)> {
        self.check_input(input)?;
        let (pi, pi_cache) = pi_forward_cached(&input.aolp, &input.dolp, &self.weights.pi)?;
        let (bb, bb_cache) = backbone_forward_cached(
            &input.rgb,
            &pi.f_pol,
            &self.weights.stages,
            self.cddq_options(),
        )?;
        let head = bb
            .levels
            .iter()
            .zip(&self.weights.head)
            .map(|(l, h)| conv2d(l, h))
            .collect::<Result<Vec<_>>>()?;
        let levels = bb.levels.clone();
        Ok((
            NetworkOutput {
                pi,
                backbone: bb,
                head,
            },
            NetworkCache {
                pi: pi_cache,
                backbone: bb_cache,
                levels,
            },
        ))
    }

    /// Gradients of cotangents on the raw head maps.
    pub fn backward(
        &self,
        cache: &NetworkCache,
        head_grads: &[Tensor],
    ) -> Result<(InputGrads, NetworkWeights)> {
        if head_grads.len() != self.weights.head.len() {
            return Err(Error::shape("one gradient per head level is required"));
        }
        let mut level_grads = Vec::with_capacity(head_grads.len());
        let mut g_head = Vec::with_capacity(head_grads.len());
        for ((l, h), g) in cache.levels.iter().zip(&self.weights.head).zip(head_grads) {
            let cg = conv2d_backward(l, h, g)?;
            level_grads.push(cg.input);
            g_head.push(ConvParams {
                weight: cg.weight,
                bias: cg.bias,
                ..h.clone()
            });
        }
        let (g_rgb, g_pol, g_stages) =
            backbone_backward(&self.weights.stages, &cache.backbone, &level_grads)?;
        let (g_aolp, g_dolp, g_pi) = pi_backward(&self.weights.pi, &cache.pi, &g_pol)?;
        Ok((
            InputGrads {
                rgb: g_rgb,
                aolp: g_aolp,
                dolp: g_dolp,
            },
            NetworkWeights {
                pi: g_pi,
                stages: g_stages,
                head: g_head,
            },
        ))
    }

    /// Full inference: decode every level, then suppress overlaps.
    pub fn detect(&self, input: &NetworkInput, image_ids: &[u64]) -> Result<Vec<Detection>> {
        let out = self.forward(input)?;
        let (h, w) = (input.rgb.h(), input.rgb.w());
        let mut all = Vec::new();
        for (i, raw) in out.head.iter().enumerate() {
            let stride = h as f64 / raw.h() as f64;
            all.extend(decode_level(
                raw,
                stride,
                &self.config.anchors[i],
                (h, w),
                self.config.score_thresh,
                image_ids,
            )?);
        }
        Ok(nms(&all, self.config.nms_iou))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::collect_params;

    fn input(seed: u64, n: usize, h: usize, w: usize) -> NetworkInput {
        let mut rng = PortableRng::new(seed);
        let s = [n, 3, h, w];
        NetworkInput::new(
            Tensor::random_uniform(s, &mut rng, 0.0, 1.0),
            Tensor::random_uniform(s, &mut rng, 0.0, 1.0),
            Tensor::random_uniform(s, &mut rng, 0.0, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn forward_shapes() {
        let net = Network::init(NetworkConfig::default()).unwrap();
        let out = net.forward(&input(1, 1, 32, 64)).unwrap();
        assert_eq!(out.pi.f_pol.shape(), [1, 16, 32, 64]);
        let shapes: Vec<_> = out.head.iter().map(|t| t.shape()).collect();
        assert_eq!(shapes, vec![[1, 15, 16, 32], [1, 15, 8, 16], [1, 15, 4, 8]]);
    }

    #[test]
    fn rejects_bad_sizes() {
        let net = Network::init(NetworkConfig::default()).unwrap();
        assert!(matches!(
            net.forward(&input(1, 1, 48, 40)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn init_is_seeded() {
        let a = Network::init(NetworkConfig::default()).unwrap();
        let b = Network::init(NetworkConfig::default()).unwrap();
        let c = Network::init(NetworkConfig {
            seed: 1,
            ..NetworkConfig::default()
        })
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let names: Vec<String> = collect_params(a.weights())
            .into_iter()
            .map(|p| p.0)
            .collect();
        assert_eq!(names[0], "pi.conv_attn.conv.weight");
        assert!(names.iter().any(|n| n == "stages.2.mp.m1.weight"));
        assert!(names.iter().any(|n| n == "head.0.bias"));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.rgbpw");
        let net = Network::init(NetworkConfig::default()).unwrap();
        net.save(&path).unwrap();
        let back = Network::load(NetworkConfig::default(), &path).unwrap();
        assert_eq!(back, net);
        let x = input(3, 1, 32, 32);
        assert_eq!(
            net.detect(&x, &[0]).unwrap(),
            back.detect(&x, &[0]).unwrap()
        );
        let other = NetworkConfig {
            c_pi: 8,
            ..NetworkConfig::default()
        };
        assert!(matches!(
            Network::load(other, &path),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn detections_are_sane() {
        let net = Network::init(NetworkConfig::default()).unwrap();
        let dets = net.detect(&input(5, 2, 32, 32), &[10, 11]).unwrap();
        for d in &dets {
            assert!(d.score >= 0.25 && d.score <= 1.0);
            assert!(d.image_id == 10 || d.image_id == 11);
            assert!(d.bbox.x >= 0.0 && d.bbox.x + d.bbox.w <= 32.0 + 1e-9);
        }
    }
}
