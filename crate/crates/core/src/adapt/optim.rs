//! Parameter update rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamSet, Tensor};

/// Generator and discriminator optimiser settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSpec {
    pub gen_lr: f64,
    pub gen_momentum: f64,
    /// Exponent of the polynomial decay applied to the generator rate.
    pub poly_power: f64,
    pub gen_weight_decay: f64,
    pub disc_lr: f64,
    pub disc_betas: [f64; 2],
    pub disc_eps: f64,
}

impl Default for OptimSpec {
    fn default() -> Self {
        OptimSpec {
            gen_lr: 2.5e-4,
            gen_momentum: 0.9,
            poly_power: 0.9,
            gen_weight_decay: 0.0,
            disc_lr: 1e-4,
            disc_betas: [0.9, 0.99],
            disc_eps: 1e-8,
        }
    }
}

impl OptimSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gen_lr > 0.0
            && self.disc_lr > 0.0
            && (0.0..1.0).contains(&self.gen_momentum)
            && self.poly_power >= 0.0
            && self.gen_weight_decay >= 0.0
            && self.disc_betas.iter().all(|b| (0.0..1.0).contains(b))
            && self.disc_eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimiser settings {self:?}")));
        }
        Ok(())
    }
}

/// `lr0 · (1 − t/T)^power`, with `t` clamped to `[0, T]`.
pub fn poly_lr(lr0: f64, step: usize, total: usize, power: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = 1.0 - (step.min(total) as f64 / total as f64);
    lr0 * frac.powf(power)
}

fn check(params: &ParamSet, grads: &[Tensor]) -> Result<()> {
    if grads.len() != params.len() || params.tensors().iter().zip(grads).any(|(p, g)| p.shape() != g.shape()) {
        return Err(Error::Shape("gradients do not match parameters".into()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok(())
}

/// SGD with heavy-ball momentum: `v ← μv + g + λp`, `p ← p − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(params: &ParamSet, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
        check(params, grads)?;
        for ((p, g), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv + gv + self.weight_decay * *pv;
                *pv -= lr * *vv;
            }
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    betas: [f64; 2],
    eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamSet, betas: [f64; 2], eps: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            betas,
            eps,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
        check(params, grads)?;
        self.t += 1;
        let [b1, b2] = self.betas;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
