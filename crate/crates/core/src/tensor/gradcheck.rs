//! Finite-difference verification of analytic vector–Jacobian products.
//!
//! The scalar probe is `L = Σᵢ ⟨cᵢ, outᵢ⟩` with seeded Gaussian cotangents
//! `cᵢ`. Each variable coordinate is compared against the central difference
//! `(L(x+h) − L(x−h)) / 2h`; the error metric is
//! `|a − n| / max(1, |a|, |n|)`. Variables larger than `max_coords` are
//! checked on a seeded coordinate sample plus one random unit direction.

use std::fmt;

use super::params::{ParamKind, Parameterized};
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::PortableRng;

/// An operator instance with fixed inputs and parameters whose variables can
/// be perturbed in place.
pub trait Differentiable {
    fn name(&self) -> &str;
    fn forward(&self) -> Result<Vec<Tensor>>;
    /// Gradient of `Σ⟨cotangents[i], outputs[i]⟩` for each variable, in
    /// [`Differentiable::variables`] order.
    fn backward(&self, cotangents: &[Tensor]) -> Result<Vec<Vec<f64>>>;
    /// `(name, length)` of every differentiable variable.
    fn variables(&self) -> Vec<(String, usize)>;
    fn get_var(&self, var: usize) -> Vec<f64>;
    fn set_var(&mut self, var: usize, values: &[f64]);
}

pub type ForwardFn<P> = dyn Fn(&[Tensor], &P) -> Result<Vec<Tensor>> + Send + Sync;
pub type BackwardFn<P> = dyn Fn(&[Tensor], &P, &[Tensor]) -> Result<(Vec<Tensor>, P)> + Send + Sync;

/// A [`Differentiable`] built from closures over input tensors and a
/// parameter set. Variables are the inputs followed by every learnable
/// parameter array.
pub struct Case<P> {
    name: String,
    pub inputs: Vec<Tensor>,
    pub params: P,
    forward: Box<ForwardFn<P>>,
    backward: Box<BackwardFn<P>>,
}

impl<P: Parameterized> Case<P> {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Tensor>,
        params: P,
        forward: impl Fn(&[Tensor], &P) -> Result<Vec<Tensor>> + Send + Sync + 'static,
        backward: impl Fn(&[Tensor], &P, &[Tensor]) -> Result<(Vec<Tensor>, P)> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            inputs,
            params,
            forward: Box::new(forward),
            backward: Box::new(backward),
        }
    }

    fn learnables(p: &P) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        p.visit("", &mut |name, kind, _, data| {
            if kind == ParamKind::Learnable {
                out.push((name.to_string(), data.to_vec()));
            }
        });
        out
    }
}

impl<P: Parameterized> Differentiable for Case<P> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forward(&self) -> Result<Vec<Tensor>> {
        (self.forward)(&self.inputs, &self.params)
    }

    fn backward(&self, cotangents: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        let (gin, gparams) = (self.backward)(&self.inputs, &self.params, cotangents)?;
        if gin.len() != self.inputs.len() {
            return Err(Error::shape(
                "backward returned the wrong number of input gradients",
            ));
        }
        let mut out: Vec<Vec<f64>> = gin.into_iter().map(Tensor::into_data).collect();
        out.extend(Self::learnables(&gparams).into_iter().map(|(_, d)| d));
        Ok(out)
    }

    fn variables(&self) -> Vec<(String, usize)> {
        let mut vars: Vec<(String, usize)> = self
            .inputs
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("input{i}"), t.len()))
            .collect();
        vars.extend(
            Self::learnables(&self.params)
                .into_iter()
                .map(|(n, d)| (n, d.len())),
        );
        vars
    }

    fn get_var(&self, var: usize) -> Vec<f64> {
        if var < self.inputs.len() {
            return self.inputs[var].data().to_vec();
        }
        Self::learnables(&self.params)
            .swap_remove(var - self.inputs.len())
            .1
    }

    fn set_var(&mut self, var: usize, values: &[f64]) {
        if var < self.inputs.len() {
            self.inputs[var].data_mut().copy_from_slice(values);
            return;
        }
        let mut target = var - self.inputs.len();
        self.params.visit_mut("", &mut |_, kind, _, data| {
            if kind == ParamKind::Learnable {
                if target == 0 {
                    data.copy_from_slice(values);
                }
                target = target.wrapping_sub(1);
            }
        });
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Per-variable coordinate budget before switching to sampling.
    pub max_coords: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-5,
            max_coords: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub max_rel_err: f64,
    /// Location of the largest error, e.g. `conv.weight[17]`.
    pub worst: String,
    pub checked: usize,
    pub pass: bool,
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} max_rel_err={:.3e} checked={} worst={} {}",
            self.name,
            self.max_rel_err,
            self.checked,
            self.worst,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

fn probe(op: &dyn Differentiable, cot: &[Tensor]) -> Result<f64> {
    let outs = op.forward()?;
    Ok(outs.iter().zip(cot).map(|(o, c)| o.dot(c)).sum())
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

pub fn grad_check(op: &mut dyn Differentiable, seed: u64) -> Result<GradReport> {
    grad_check_with(op, seed, &GradCheckOptions::default())
}

pub fn grad_check_with(
    op: &mut dyn Differentiable,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradReport> {
    let mut rng = PortableRng::new(seed);
    let outs = op.forward()?;
    let cot: Vec<Tensor> = outs
        .iter()
        .map(|o| Tensor::random_normal(o.shape(), &mut rng))
        .collect();
    let analytic = op.backward(&cot)?;
    let vars = op.variables();
    if analytic.len() != vars.len() {
        return Err(Error::shape(format!(
            "backward produced {} gradients for {} variables",
            analytic.len(),
            vars.len()
        )));
    }
    let h = opts.step;
    let mut max_err = 0.0f64;
    let mut worst = String::from("-");
    let mut checked = 0;
    let mut record = |err: f64, at: String, checked: &mut usize| {
        *checked += 1;
        if err > max_err || err.is_nan() {
            max_err = if err.is_nan() { f64::INFINITY } else { err };
            worst = at;
        }
    };
    for (v, ((name, len), grad)) in vars.iter().zip(&analytic).enumerate() {
        if grad.len() != *len {
            return Err(Error::shape(format!(
                "gradient of {name} has {} entries, expected {len}",
                grad.len()
            )));
        }
        let base = op.get_var(v);
        let sampled = *len > opts.max_coords;
        let coords: Vec<usize> = if sampled {
            let mut idx: Vec<usize> = (0..*len).collect();
            for i in 0..opts.max_coords {
                let j = i + rng.int_range(0, (*len - i - 1) as u64) as usize;
                idx.swap(i, j);
            }
            idx.truncate(opts.max_coords);
            idx
        } else {
            (0..*len).collect()
        };
        let mut work = base.clone();
        for i in coords {
            work[i] = base[i] + h;
            op.set_var(v, &work);
            let lp = probe(op, &cot)?;
            work[i] = base[i] - h;
            op.set_var(v, &work);
            let lm = probe(op, &cot)?;
            work[i] = base[i];
            let numeric = (lp - lm) / (2.0 * h);
            record(
                rel_err(grad[i], numeric),
                format!("{name}[{i}]"),
                &mut checked,
            );
        }
        if sampled {
            let mut dir: Vec<f64> = (0..*len).map(|_| rng.normal()).collect();
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|d| *d /= norm);
            let shifted = |sign: f64| -> Vec<f64> {
                base.iter()
                    .zip(&dir)
                    .map(|(b, d)| b + sign * h * d)
                    .collect()
            };
            op.set_var(v, &shifted(1.0));
            let lp = probe(op, &cot)?;
            op.set_var(v, &shifted(-1.0));
            let lm = probe(op, &cot)?;
            let numeric = (lp - lm) / (2.0 * h);
            let a: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            record(rel_err(a, numeric), format!("{name}[dir]"), &mut checked);
        }
        op.set_var(v, &base);
    }
    Ok(GradReport {
        name: op.name().to_string(),
        max_rel_err: max_err,
        worst,
        checked,
        pass: max_err < opts.tolerance,
    })
}
