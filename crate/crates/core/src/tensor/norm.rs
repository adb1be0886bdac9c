use super::params::{join, ParamKind, ParamVisitor, ParamVisitorMut, Parameterized};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum BnMode {
    /// Normalize with the mean/variance of the current batch.
    #[serde(rename = "batch")]
    BatchStats,
    /// Normalize with the stored running buffers (inference).
    #[default]
    #[serde(rename = "running")]
    RunningStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub mode: BnMode,
}

impl BatchNormParams {
    /// γ = 1, β = 0, running mean 0, running variance 1.
    pub fn identity(channels: usize, eps: f64, mode: BnMode) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps,
            mode,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::shape("batch-norm vectors differ in length"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::validation("batch-norm eps must be positive"));
        }
        if self.running_var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::validation(
                "batch-norm running variance must be >= 0",
            ));
        }
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        let c = self.channels();
        Self {
            gamma: vec![0.0; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![0.0; c],
            eps: self.eps,
            mode: self.mode,
        }
    }
}

impl Parameterized for BatchNormParams {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_>) {
        let d = [self.channels()];
        f(
            &join(prefix, "gamma"),
            ParamKind::Learnable,
            &d,
            &self.gamma,
        );
        f(&join(prefix, "beta"), ParamKind::Learnable, &d, &self.beta);
        f(
            &join(prefix, "running_mean"),
            ParamKind::Buffer,
            &d,
            &self.running_mean,
        );
        f(
            &join(prefix, "running_var"),
            ParamKind::Buffer,
            &d,
            &self.running_var,
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        let d = [self.channels()];
        f(
            &join(prefix, "gamma"),
            ParamKind::Learnable,
            &d,
            &mut self.gamma,
        );
        f(
            &join(prefix, "beta"),
            ParamKind::Learnable,
            &d,
            &mut self.beta,
        );
        f(
            &join(prefix, "running_mean"),
            ParamKind::Buffer,
            &d,
            &mut self.running_mean,
        );
        f(
            &join(prefix, "running_var"),
            ParamKind::Buffer,
            &d,
            &mut self.running_var,
        );
    }
}

#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    mode: BnMode,
}

pub fn batch_norm(x: &Tensor, p: &BatchNormParams) -> Result<Tensor> {
    batch_norm_forward(x, p).map(|(y, _)| y)
}

pub fn batch_norm_forward(x: &Tensor, p: &BatchNormParams) -> Result<(Tensor, BnCache)> {
    p.validate()?;
    let [n, c, h, w] = x.shape();
    if c != p.channels() {
        return Err(Error::shape(format!(
            "batch norm has {} channels, input has {c}",
            p.channels()
        )));
    }
    let count = (n * h * w) as f64;
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(c);
    for ch in 0..c {
        let (mean, var) = match p.mode {
            BnMode::RunningStats => (p.running_mean[ch], p.running_var[ch]),
            BnMode::BatchStats => {
                let mean = (0..n)
                    .map(|b| x.plane(b, ch).iter().sum::<f64>())
                    .sum::<f64>()
                    / count;
                let var = (0..n)
                    .map(|b| {
                        x.plane(b, ch)
                            .iter()
                            .map(|v| (v - mean).powi(2))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    / count;
                (mean, var)
            }
        };
        let is = 1.0 / (var + p.eps).sqrt();
        inv_std.push(is);
        for b in 0..n {
            let off = x.offset(b, ch, 0, 0);
            for i in 0..h * w {
                let xh = (x.data()[off + i] - mean) * is;
                xhat.data_mut()[off + i] = xh;
                y.data_mut()[off + i] = xh * p.gamma[ch] + p.beta[ch];
            }
        }
    }
    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            mode: p.mode,
        },
    ))
}

/// Returns the input gradient and a parameter-shaped gradient (γ, β filled,
/// buffers zero).
pub fn batch_norm_backward(
    p: &BatchNormParams,
    cache: &BnCache,
    grad_out: &Tensor,
) -> Result<(Tensor, BatchNormParams)> {
    let [n, c, h, w] = grad_out.shape();
    if grad_out.shape() != cache.xhat.shape() {
        return Err(Error::shape(
            "batch-norm gradient shape differs from its input",
        ));
    }
    let count = (n * h * w) as f64;
    let mut gx = Tensor::zeros(grad_out.shape());
    let mut grads = p.zeros_like();
    for ch in 0..c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for b in 0..n {
            let off = grad_out.offset(b, ch, 0, 0);
            for i in 0..h * w {
                let g = grad_out.data()[off + i];
                sum_g += g;
                sum_gx += g * cache.xhat.data()[off + i];
            }
        }
        grads.gamma[ch] = sum_gx;
        grads.beta[ch] = sum_g;
        let scale = p.gamma[ch] * cache.inv_std[ch];
        for b in 0..n {
            let off = grad_out.offset(b, ch, 0, 0);
            for i in 0..h * w {
                let g = grad_out.data()[off + i];
                gx.data_mut()[off + i] = match cache.mode {
                    BnMode::RunningStats => g * scale,
                    BnMode::BatchStats => {
                        scale / count * (count * g - sum_g - cache.xhat.data()[off + i] * sum_gx)
                    }
                };
            }
        }
    }
    Ok((gx, grads))
}
