//! Named gradient-check cases for every differentiable operator and module,
//! shared by the test suite and the `gradcheck` command. All batch norms run
//! on batch statistics so their full backward path is exercised.

use super::*;
use crate::tensor::gradcheck::{
    grad_check_with, Case, Differentiable, GradCheckOptions, GradReport,
};
use crate::tensor::{
    avg_pool2d, avg_pool2d_backward, batch_norm_backward, batch_norm_forward, channel_avg,
    channel_avg_backward, channel_max, concat_channels, fully_connected, fully_connected_backward,
    global_avg, global_avg_backward, global_max, max_backward, max_pool2d, mul, mul_backward,
    scharr_edge, scharr_edge_backward, scharr_edge_forward, sigmoid, sigmoid_backward, silu,
    silu_backward, softmax_pair, softmax_pair_backward, split_channels, BatchNormParams,
    LinearParams, ParamKind,
};

pub const CASE_NAMES: &[&str] = &[
    "conv2d",
    "conv2d_transposed",
    "batch_norm",
    "linear",
    "sigmoid",
    "silu",
    "softmax_pair",
    "max_pool",
    "avg_pool",
    "channel_max",
    "channel_avg",
    "global_max",
    "global_avg",
    "scharr",
    "concat_split",
    "mul_broadcast",
    "pi",
    "msp",
    "mcp",
    "perception",
    "sdmd",
    "cwda",
    "cddq",
    "backbone",
    "network",
];

const BATCH: BnSettings = BnSettings {
    eps: 1e-5,
    mode: BnMode::BatchStats,
};

/// Coordinate budget per case; the composite modules sample more sparsely.
pub fn options_for(name: &str) -> GradCheckOptions {
    let max_coords = match name {
        "network" => 4,
        "backbone" => 8,
        "pi" | "msp" | "mcp" | "sdmd" | "cwda" | "cddq" => 16,
        _ => 64,
    };
    GradCheckOptions {
        max_coords,
        ..GradCheckOptions::default()
    }
}

/// Kaiming weights plus non-trivial biases and batch-norm affine terms.
fn randomize<P: Parameterized>(p: &mut P, rng: &mut PortableRng) {
    kaiming_uniform(p, rng);
    p.visit_mut("", &mut |name, kind, _, data| {
        if kind != ParamKind::Learnable {
            return;
        }
        let (lo, hi) = if name.ends_with("gamma") {
            (0.5, 1.5)
        } else if name.ends_with("beta") || name.ends_with("bias") {
            (-0.5, 0.5)
        } else {
            return;
        };
        data.iter_mut().for_each(|v| *v = rng.range(lo, hi));
    });
}

fn normal(shape: [usize; 4], rng: &mut PortableRng) -> Tensor {
    Tensor::random_normal(shape, rng)
}

fn unary(
    name: &str,
    x: Tensor,
    f: impl Fn(&Tensor) -> Result<Tensor> + Send + Sync + 'static,
    b: impl Fn(&Tensor, &Tensor) -> Result<Tensor> + Send + Sync + 'static,
) -> Box<dyn Differentiable> {
    Box::new(Case::new(
        name,
        vec![x],
        (),
        move |i, _| Ok(vec![f(&i[0])?]),
        move |i, _, g| Ok((vec![b(&i[0], &g[0])?], ())),
    ))
}

/// Builds the named case with seeded inputs and parameters.
pub fn build(name: &str, seed: u64) -> Result<Box<dyn Differentiable>> {
    let mut rng = PortableRng::new(seed);
    let r = &mut rng;
    Ok(match name {
        "conv2d" => {
            let mut conv = layers::conv_bias(3, 4, 3, 1)?.conv;
            conv.stride = 2;
            randomize(&mut conv, r);
            Box::new(Case::new(
                name,
                vec![normal([2, 3, 6, 6], r)],
                conv,
                |i, p| Ok(vec![conv2d(&i[0], p)?]),
                |i, p, g| {
                    let cg = conv2d_backward(&i[0], p, &g[0])?;
                    let gp = ConvParams {
                        weight: cg.weight,
                        bias: cg.bias,
                        ..p.clone()
                    };
                    Ok((vec![cg.input], gp))
                },
            ))
        }
        "conv2d_transposed" => {
            let mut conv =
                ConvParams::new(Tensor::zeros([2, 3, 2, 2]), Some(vec![0.0; 2]), 2, 0, true)?;
            randomize(&mut conv, r);
            Box::new(Case::new(
                name,
                vec![normal([1, 3, 3, 4], r)],
                conv,
                |i, p| Ok(vec![conv2d(&i[0], p)?]),
                |i, p, g| {
                    let cg = conv2d_backward(&i[0], p, &g[0])?;
                    let gp = ConvParams {
                        weight: cg.weight,
                        bias: cg.bias,
                        ..p.clone()
                    };
                    Ok((vec![cg.input], gp))
                },
            ))
        }
        "batch_norm" => {
            let mut bn = BatchNormParams::identity(3, 1e-5, BnMode::BatchStats);
            randomize(&mut bn, r);
            Box::new(Case::new(
                name,
                vec![normal([2, 3, 4, 3], r)],
                bn,
                |i, p| Ok(vec![batch_norm_forward(&i[0], p)?.0]),
                |i, p, g| {
                    let (_, cache) = batch_norm_forward(&i[0], p)?;
                    let (gx, gp) = batch_norm_backward(p, &cache, &g[0])?;
                    Ok((vec![gx], gp))
                },
            ))
        }
        "linear" => {
            let w: Vec<f64> = (0..15).map(|_| r.normal()).collect();
            let b: Vec<f64> = (0..3).map(|_| r.normal()).collect();
            Box::new(Case::new(
                name,
                vec![normal([2, 5, 1, 1], r)],
                LinearParams::new(3, 5, w, b)?,
                |i, p| Ok(vec![fully_connected(&i[0], p)?]),
                |i, p, g| {
                    let (gx, gp) = fully_connected_backward(&i[0], p, &g[0])?;
                    Ok((vec![gx], gp))
                },
            ))
        }
        "sigmoid" => unary(
            name,
            normal([1, 2, 3, 3], r),
            |x| Ok(sigmoid(x)),
            |x, g| sigmoid_backward(&sigmoid(x), g),
        ),
        "silu" => unary(
            name,
            normal([1, 2, 3, 3], r),
            |x| Ok(silu(x)),
            silu_backward,
        ),
        "softmax_pair" => Box::new(Case::new(
            name,
            vec![normal([1, 4, 2, 2], r), normal([1, 4, 2, 2], r)],
            (),
            |i, _| {
                let (a, b) = softmax_pair(&i[0], &i[1])?;
                Ok(vec![a, b])
            },
            |i, _, g| {
                let (a, b) = softmax_pair(&i[0], &i[1])?;
                let (ga, gb) = softmax_pair_backward(&a, &b, &g[0], &g[1])?;
                Ok((vec![ga, gb], ()))
            },
        )),
        "max_pool" => unary(
            name,
            normal([1, 2, 6, 6], r),
            |x| Ok(max_pool2d(x, 5, 1, 2)?.output),
            |x, g| max_backward(x.shape(), &max_pool2d(x, 5, 1, 2)?.argmax, g),
        ),
        "avg_pool" => unary(
            name,
            normal([1, 2, 5, 6], r),
            |x| avg_pool2d(x, 3, 1, 1),
            |x, g| avg_pool2d_backward(x.shape(), 3, 1, 1, g),
        ),
        "channel_max" => unary(
            name,
            normal([2, 4, 3, 3], r),
            |x| Ok(channel_max(x).output),
            |x, g| max_backward(x.shape(), &channel_max(x).argmax, g),
        ),
        "channel_avg" => unary(
            name,
            normal([2, 4, 3, 3], r),
            |x| Ok(channel_avg(x)),
            |x, g| channel_avg_backward(x.shape(), g),
        ),
        "global_max" => unary(
            name,
            normal([2, 3, 4, 4], r),
            |x| Ok(global_max(x).output),
            |x, g| max_backward(x.shape(), &global_max(x).argmax, g),
        ),
        "global_avg" => unary(
            name,
            normal([2, 3, 4, 4], r),
            |x| Ok(global_avg(x)),
            |x, g| global_avg_backward(x.shape(), g),
        ),
        "scharr" => unary(
            name,
            normal([1, 2, 5, 6], r),
            |x| Ok(scharr_edge(x)),
            |x, g| scharr_edge_backward(&scharr_edge_forward(x), g),
        ),
        "concat_split" => Box::new(Case::new(
            name,
            vec![normal([1, 2, 3, 3], r), normal([1, 3, 3, 3], r)],
            (),
            |i, _| {
                let cat = concat_channels(&[&i[0], &i[1]])?;
                split_channels(&cat.map(|v| v * v), &[1, 4])
            },
            |i, _, g| {
                let cat = concat_channels(&[&i[0], &i[1]])?;
                let gcat = concat_channels(&[&g[0], &g[1]])?.zip_map(&cat, |g, x| 2.0 * g * x)?;
                Ok((split_channels(&gcat, &[2, 3])?, ()))
            },
        )),
        "mul_broadcast" => Box::new(Case::new(
            name,
            vec![normal([2, 3, 4, 4], r), normal([2, 3, 1, 1], r)],
            (),
            |i, _| Ok(vec![mul(&i[0], &i[1])?]),
            |i, _, g| {
                let (ga, gb) = mul_backward(&i[0], &i[1], &g[0])?;
                Ok((vec![ga, gb], ()))
            },
        )),
        "pi" => {
            let mut w = PiWeights::new(8, BATCH)?;
            randomize(&mut w, r);
            let s = [1, 3, 10, 12];
            Box::new(Case::new(
                name,
                vec![
                    Tensor::random_uniform(s, r, 0.0, 1.0),
                    Tensor::random_uniform(s, r, 0.0, 1.0),
                ],
                w,
                |i, w| Ok(vec![pi_forward(&i[0], &i[1], w)?.f_pol]),
                |i, w, g| {
                    let (_, c) = pi_forward_cached(&i[0], &i[1], w)?;
                    let (ga, gd, gw) = pi_backward(w, &c, &g[0])?;
                    Ok((vec![ga, gd], gw))
                },
            ))
        }
        "msp" | "mcp" => {
            let kind = if name == "msp" {
                MpKind::Spatial
            } else {
                MpKind::Channel
            };
            let mut w = MpWeights::new(kind, 8, 4, BATCH)?;
            randomize(&mut w, r);
            Box::new(Case::new(
                name,
                vec![normal([1, 8, 8, 8], r)],
                w,
                |i, w| Ok(vec![mp_forward(&i[0], w)?]),
                |i, w, g| {
                    let (_, c) = mp_forward_cached(&i[0], w)?;
                    let (gx, gw) = mp_backward(w, &c, &g[0])?;
                    Ok((vec![gx], gw))
                },
            ))
        }
        "perception" => {
            let mut w = vec![layers::linear(2, 8), layers::linear(8, 2)];
            randomize(&mut w, r);
            Box::new(Case::new(
                name,
                vec![normal([2, 8, 3, 3], r)],
                w,
                |i, w| Ok(vec![perception(&i[0], &w[0], &w[1])?]),
                |i, w, g| {
                    let (_, c) = perception_cached(&i[0], &w[0], &w[1])?;
                    let (gx, g1, g2) = perception_backward(&w[0], &w[1], &c, &g[0])?;
                    Ok((vec![gx], vec![g1, g2]))
                },
            ))
        }
        "sdmd" | "cwda" | "cddq" => {
            let mut w = CddqWeights::new(8, 8, Some(6), BATCH)?;
            randomize(&mut w, r);
            let inputs = vec![normal([1, 8, 6, 6], r), normal([1, 8, 6, 6], r)];
            match name {
                "sdmd" => Box::new(Case::new(
                    name,
                    inputs,
                    w,
                    |i, w| {
                        let o = sdmd_forward(&i[0], &i[1], w)?;
                        Ok(vec![o.f_rgb, o.f_pol])
                    },
                    |i, w, g| {
                        let (_, c) = sdmd_forward_cached(&i[0], &i[1], w)?;
                        let (gf, gp, gw) = sdmd_backward(w, &c, &g[0], &g[1])?;
                        Ok((vec![gf, gp], gw))
                    },
                )),
                "cwda" => Box::new(Case::new(
                    name,
                    inputs,
                    w,
                    |i, w| Ok(vec![cwda_forward(&i[0], &i[1], w)?.fused]),
                    |i, w, g| {
                        let (_, c) = cwda_forward_cached(&i[0], &i[1], w)?;
                        let (gf, gp, gw) = cwda_backward(w, &c, &g[0])?;
                        Ok((vec![gf, gp], gw))
                    },
                )),
                _ => Box::new(Case::new(
                    name,
                    inputs,
                    w,
                    |i, w| {
                        Ok(vec![
                            cddq_forward(&i[0], &i[1], w, CddqOptions::default())?.fused,
                        ])
                    },
                    |i, w, g| {
                        let (_, c) = cddq_forward_cached(&i[0], &i[1], w, CddqOptions::default())?;
                        let (gf, gp, gw) = cddq_backward(w, &c, &g[0])?;
                        Ok((vec![gf, gp], gw))
                    },
                )),
            }
        }
        "backbone" => {
            let mut cfg = small_config();
            cfg.c_pi = 4;
            cfg.widths = vec![4, 8];
            cfg.mp_assignment = vec![MpKind::Spatial, MpKind::Channel];
            cfg.fusion_stages = vec![1];
            cfg.anchors = vec![vec![[4.0, 4.0]], vec![[8.0, 8.0]]];
            let mut st = build_stages(&cfg)?;
            randomize(&mut st, r);
            Box::new(Case::new(
                name,
                vec![normal([1, 3, 16, 16], r), normal([1, 4, 16, 16], r)],
                st,
                |i, st| Ok(backbone_forward(&i[0], &i[1], st, CddqOptions::default())?.levels),
                |i, st, g| {
                    let (_, c) = backbone_forward_cached(&i[0], &i[1], st, CddqOptions::default())?;
                    let (gr, gp, gw) = backbone_backward(st, &c, g)?;
                    Ok((vec![gr, gp], gw))
                },
            ))
        }
        "network" => {
            let cfg = small_config();
            let mut net = Network::new(cfg.clone())?;
            randomize(&mut net.weights, r);
            let s = [1, 3, 32, 32];
            let inputs = vec![
                Tensor::random_uniform(s, r, 0.0, 1.0),
                Tensor::random_uniform(s, r, 0.0, 1.0),
                Tensor::random_uniform(s, r, 0.0, 1.0),
            ];
            let fwd_cfg = cfg.clone();
            Box::new(Case::new(
                name,
                inputs,
                net.weights,
                move |i, w| {
                    let net = Network {
                        config: fwd_cfg.clone(),
                        weights: w.clone(),
                    };
                    let x = NetworkInput::new(i[0].clone(), i[1].clone(), i[2].clone())?;
                    Ok(net.forward(&x)?.head)
                },
                move |i, w, g| {
                    let net = Network {
                        config: cfg.clone(),
                        weights: w.clone(),
                    };
                    let x = NetworkInput::new(i[0].clone(), i[1].clone(), i[2].clone())?;
                    let (_, c) = net.forward_cached(&x)?;
                    let (gi, gw) = net.backward(&c, g)?;
                    Ok((vec![gi.rgb, gi.aolp, gi.dolp], gw))
                },
            ))
        }
        other => {
            return Err(Error::Validation(format!(
                "unknown gradient-check case `{other}`; known: {}",
                CASE_NAMES.join(", ")
            )))
        }
    })
}

/// Default network configuration with batch statistics.
fn small_config() -> NetworkConfig {
    NetworkConfig {
        bn_mode: BnMode::BatchStats,
        ..NetworkConfig::default()
    }
}

pub fn run(name: &str, seed: u64) -> Result<GradReport> {
    let mut case = build(name, seed)?;
    grad_check_with(case.as_mut(), seed, &options_for(name))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(name: &str) {
        let report = run(name, 7).unwrap();
        assert!(report.pass, "{report}");
    }

    macro_rules! cases {
        ($($t:ident),*) => {$(
            #[test]
            fn $t() {
                check(stringify!($t));
            }
        )*};
    }

    cases!(
        conv2d,
        conv2d_transposed,
        batch_norm,
        linear,
        sigmoid,
        silu,
        softmax_pair,
        max_pool,
        avg_pool,
        channel_max,
        channel_avg,
        global_max,
        global_avg,
        scharr,
        concat_split,
        mul_broadcast,
        pi,
        msp,
        mcp,
        perception,
        sdmd,
        cwda,
        cddq,
        backbone
    );

    #[test]
    fn unknown_case() {
        assert!(build("nope", 0).is_err());
    }
}
